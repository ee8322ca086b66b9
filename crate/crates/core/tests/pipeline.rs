use std::net::TcpListener;
use std::sync::Arc;

use strata::backend::{spawn_server, StubBackend, TcpBackend};
use strata::maps::{rasterize_hints, HintDot, HintSet};
use strata::pipeline::{
    builtin, run_pipeline, run_pipeline_with, BuiltinOptions, ErrorCategory, PipelineError,
    PipelineSpec, RunOptions, Step, BUILTINS,
};
use strata::{ImageBuffer, Layer, LayerStack};

fn base_stack() -> LayerStack {
    let img = ImageBuffer::from_fn(20, 14, 3, |x, y, p| {
        let v = ((x * 13 + y * 7) % 11) as f32 / 10.0;
        p.copy_from_slice(&[v, 1.0 - v, (x as f32) / 20.0])
    })
    .unwrap();
    let hint = rasterize_hints(
        &HintSet::new(vec![HintDot {
            x: 6,
            y: 6,
            color: [0.9, 0.6, 0.1],
        }]),
        20,
        14,
    )
    .unwrap();
    let erase = ImageBuffer::from_fn(20, 14, 4, |x, _, p| {
        p.copy_from_slice(&[1.0, 1.0, 1.0, if x < 10 { 1.0 } else { 0.0 }])
    })
    .unwrap();
    let labels = ImageBuffer::filled(20, 14, 1, 2.0 / 255.0).unwrap();
    [
        ("image", img),
        ("hint", hint),
        ("erase", erase),
        ("modified", labels),
    ]
    .into_iter()
    .fold(LayerStack::new(20, 14).unwrap(), |s, (n, b)| {
        s.add_layer(Layer::new(n, b).unwrap()).unwrap()
    })
}

fn options() -> BuiltinOptions {
    BuiltinOptions {
        hints: vec!["hint".into()],
        erase_masks: vec!["erase".into()],
        modified_mask: Some("modified".into()),
        ..Default::default()
    }
}

#[test]
fn builtins_are_deterministic_and_parallel_safe() {
    let stack = base_stack();
    let backend = StubBackend::new();
    for name in BUILTINS {
        let spec = builtin(name, &options()).unwrap();
        let a = run_pipeline(&stack, &spec, &backend).unwrap();
        let b = run_pipeline(&stack, &spec, &backend).unwrap();
        let par = RunOptions {
            parallel: true,
            ..Default::default()
        };
        let c = run_pipeline_with(&stack, &spec, &backend, &par).unwrap();
        assert_eq!(a, b, "{name}");
        assert_eq!(a, c, "{name}");
        assert_eq!(a.len(), stack.len() + spec.steps.len());
    }
}

#[test]
fn remote_backend_matches_in_process() {
    let addr = spawn_server(Arc::new(StubBackend::new())).unwrap();
    let remote = TcpBackend::new(addr.to_string());
    let stack = base_stack();
    for name in BUILTINS {
        let spec = builtin(name, &options()).unwrap();
        let local = run_pipeline(&stack, &spec, &StubBackend::new()).unwrap();
        let over_wire = run_pipeline(&stack, &spec, &remote).unwrap();
        assert_eq!(local, over_wire, "{name}");
    }
}

#[test]
fn transport_failure_keeps_completed_steps() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let spec = PipelineSpec::new(vec![
        Step::new("grayscale", &["image"], "gray"),
        Step::new("denoise", &["gray"], "clean"),
        Step::new("invert", &["image"], "inv"),
    ]);
    let err = run_pipeline(&base_stack(), &spec, &TcpBackend::new(addr.to_string())).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Transport);
    match err {
        PipelineError::Step { step, partial, .. } => {
            assert_eq!(step, 1);
            assert_eq!(partial.len(), base_stack().len() + 1);
            assert!(partial.contains("gray"));
        }
        other => panic!("{other}"),
    }
}

#[test]
fn bad_trimap_is_an_input_error_naming_the_pixel() {
    let mut bytes = vec![255u8; 20 * 14];
    bytes[3 * 20 + 5] = 127;
    let stack = base_stack()
        .add_layer(Layer::new("trimap", ImageBuffer::from_u8(20, 14, 1, &bytes).unwrap()).unwrap())
        .unwrap();
    let spec = PipelineSpec::new(vec![Step::new("matting", &["image", "trimap"], "alpha")]);
    let err = run_pipeline(&stack, &spec, &StubBackend::new()).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Input);
    assert!(err.to_string().contains("(5, 3)"), "{err}");
}

#[test]
fn matting_with_valid_trimap() {
    let bytes: Vec<u8> = (0..20 * 14).map(|i| [0u8, 128, 255][i % 3]).collect();
    let stack = base_stack()
        .add_layer(Layer::new("trimap", ImageBuffer::from_u8(20, 14, 1, &bytes).unwrap()).unwrap())
        .unwrap();
    let spec = PipelineSpec::new(vec![Step::new("matting", &["image", "trimap"], "alpha")]);
    let out = run_pipeline(&stack, &spec, &StubBackend::new()).unwrap();
    let alpha = out.get("alpha").unwrap().buffer();
    assert_eq!(alpha.channels(), 1);
    for (a, t) in alpha.data().iter().zip(&bytes) {
        match t {
            0 => assert_eq!(*a, 0.0),
            255 => assert_eq!(*a, 1.0),
            _ => assert!((0.0..=1.0).contains(a)),
        }
    }
}

#[test]
fn superres_layers_scale_with_offsets() {
    let stack = base_stack();
    let moved = LayerStack::new(20, 14)
        .unwrap()
        .add_layer((**stack.get("image").unwrap()).clone().with_offset(2, 1))
        .unwrap();
    let spec = PipelineSpec::new(vec![
        Step::new("superres", &["image"], "big").param("scale", 3)
    ]);
    let out = run_pipeline(&moved, &spec, &StubBackend::new()).unwrap();
    let big = out.get("big").unwrap();
    assert_eq!((big.buffer().width(), big.buffer().height()), (60, 42));
    assert_eq!(big.offset(), (6, 3));
}

#[test]
fn spec_files_round_trip_through_json() {
    let spec = builtin("recolor", &options()).unwrap();
    let text = spec.to_json();
    assert!(text.contains("\"deepcolor\""));
    assert_eq!(PipelineSpec::from_json(&text).unwrap(), spec);
}
