use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::{Map, Value};

use strata::backend::{
    serve, Backend, BackendSpec, DevicePolicy, StubBackend, TaskKind, TaskRequest, TaskResponse,
};
use strata::maps::DisparityMap;
use strata::pipeline::{
    builtin, run_pipeline_with, BuiltinOptions, ErrorCategory, PipelineError, PipelineSpec,
    RunOptions, Step, BUILTINS,
};
use strata::project::{
    load_disparity_png, load_png, load_project, save_disparity_png, save_png, save_project,
};
use strata::{composite, ImageBuffer, Layer, LayerStack};

const AFTER_HELP: &str = "\
Exit status: 0 on success, 1 for bad arguments, files or parameters,
2 when the inference backend fails or cannot be reached.";

#[derive(Parser)]
#[command(name = "strata", version, about = "Non-destructive layered image editing with classical and ML-backed tools", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one tool on PNG files: `strata tool <name> [flags] <inputs>... <output>`
    Tool(ToolArgs),
    /// Run or generate layer pipelines
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Create, extend and flatten layered project directories
    #[command(subcommand)]
    Project(ProjectCommand),
    /// Serve the stub backend over the wire protocol
    ServeStub {
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Send an echo request to a backend and report the round trip
    Probe {
        #[command(flatten)]
        backend: BackendArgs,
    },
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Inference backend: `stub` or `tcp:<host>:<port>`
    #[arg(long, env = "GIMPML_BACKEND", default_value = "stub")]
    backend: BackendSpec,
    /// Never use an accelerator, even when one is available
    #[arg(long)]
    force_cpu: bool,
}

impl BackendArgs {
    fn device(&self) -> DevicePolicy {
        if self.force_cpu {
            DevicePolicy::ForceCpu
        } else {
            DevicePolicy::Auto
        }
    }
}

#[derive(Args)]
struct ToolArgs {
    /// Tool name: a classical operation (kmeans, grayscale, gaussian_blur, ...)
    /// or a backend task (superres, matting, semseg, ...)
    name: String,
    /// Input PNG files followed by the output PNG
    #[arg(required = true, num_args = 1..)]
    files: Vec<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Random seed for clustering and segmentation
    #[arg(long)]
    seed: Option<u64>,
    /// Cluster count for kmeans
    #[arg(long)]
    k: Option<u64>,
    /// Upscaling factor (2, 3 or 4) for superres and resize_bicubic
    #[arg(long)]
    scale: Option<u32>,
    /// Gaussian sigma in pixels
    #[arg(long)]
    sigma: Option<f64>,
    /// Hue in degrees (colorize, relight) or hue shift (hue_saturation)
    #[arg(long, allow_negative_numbers = true)]
    hue: Option<f64>,
    /// Saturation in [0, 1] (colorize, relight) or scale (hue_saturation)
    #[arg(long)]
    saturation: Option<f64>,
    /// Lightness shift in [-1, 1] for hue_saturation
    #[arg(long, allow_negative_numbers = true)]
    lightness: Option<f64>,
    /// Relight strength in [0, 1]
    #[arg(long)]
    strength: Option<f64>,
    /// Class ids for class_mask and selective_apply, comma separated
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<u32>>,
    /// Label palette for class ids: voc or face
    #[arg(long)]
    palette: Option<String>,
    /// Complement the mask (class_mask, selective_apply)
    #[arg(long)]
    invert: bool,
    /// Add pixel position to the kmeans feature space
    #[arg(long)]
    position: bool,
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Run a pipeline spec over a project and write the result project
    Run {
        project: PathBuf,
        spec: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        /// Execute independent steps concurrently
        #[arg(long)]
        parallel: bool,
    },
    /// Print the JSON spec of a built-in workflow
    EmitBuiltin(EmitArgs),
}

#[derive(Args)]
struct EmitArgs {
    /// One of background_blur, recolor, face_edit, portrait_modify, relight
    name: String,
    /// Source image layer
    #[arg(long, default_value = "image")]
    image: String,
    /// Hint layer for recolor (repeatable)
    #[arg(long = "hint")]
    hints: Vec<String>,
    /// Erase mask layer for recolor or portrait_modify (repeatable)
    #[arg(long = "erase-mask")]
    erase_masks: Vec<String>,
    /// Edited face-parsing layer for portrait_modify
    #[arg(long)]
    modified_mask: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    sigma: Option<f64>,
    /// Classes kept sharp by background_blur, comma separated
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<u32>>,
    #[arg(long, allow_negative_numbers = true)]
    hue: Option<f64>,
    #[arg(long)]
    saturation: Option<f64>,
    #[arg(long)]
    strength: Option<f64>,
}

#[derive(Subcommand)]
enum ProjectCommand {
    /// Create a project whose canvas and first layer come from a PNG
    New {
        dir: PathBuf,
        image: PathBuf,
        #[arg(long, default_value = "image")]
        name: String,
    },
    /// Add a PNG as a new top layer
    Add {
        dir: PathBuf,
        image: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 1.0)]
        opacity: f32,
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        offset_x: i32,
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        offset_y: i32,
        #[arg(long)]
        hidden: bool,
    },
    /// Composite all visible layers into an RGBA PNG
    Flatten { dir: PathBuf, out: PathBuf },
    /// List layers
    Info { dir: PathBuf },
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn user(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            error: error.into(),
        }
    }

    fn backend(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::user(error)
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e.category() {
        ErrorCategory::Input => Failure::user(e),
        ErrorCategory::Task | ErrorCategory::Transport => Failure::backend(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Tool(args) => cmd_tool(&args),
        Command::Pipeline(cmd) => cmd_pipeline(cmd),
        Command::Project(cmd) => cmd_project(cmd),
        Command::ServeStub { port, host } => cmd_serve_stub(&host, port),
        Command::Probe { backend } => cmd_probe(&backend),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            // Some errors already embed their cause in their own message.
            let mut msg = f.error.to_string();
            for cause in f.error.chain().skip(1).map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(f.code)
        }
    }
}

fn tool_params(args: &ToolArgs) -> Map<String, Value> {
    let mut params = Map::new();
    let mut put = |key: &str, value: Option<Value>| {
        if let Some(v) = value {
            params.insert(key.to_string(), v);
        }
    };
    let scale = args.scale.or(match args.name.as_str() {
        "superres" | "resize_bicubic" => Some(4),
        _ => None,
    });
    put("seed", args.seed.map(Value::from));
    put("k", args.k.map(Value::from));
    put("scale", scale.map(Value::from));
    put("sigma", args.sigma.map(Value::from));
    put("hue", args.hue.map(Value::from));
    put("saturation", args.saturation.map(Value::from));
    put("lightness", args.lightness.map(Value::from));
    put("strength", args.strength.map(Value::from));
    put("classes", args.classes.clone().map(Value::from));
    put("palette", args.palette.clone().map(Value::from));
    put("invert", args.invert.then_some(Value::Bool(true)));
    put("position", args.position.then_some(Value::Bool(true)));
    params
}

fn load_input(tool: &str, index: usize, path: &Path) -> Result<ImageBuffer, Failure> {
    // Disparity inputs may be 16-bit.
    if matches!((tool, index), ("relight", 1) | ("normalize_disparity", 0)) {
        let d = load_disparity_png(path).map_err(Failure::user)?;
        return ImageBuffer::new(d.width(), d.height(), 1, d.values().to_vec())
            .map_err(Failure::user);
    }
    load_png(path).map_err(Failure::user)
}

fn cmd_tool(args: &ToolArgs) -> Result<(), Failure> {
    let (output, inputs) = args.files.split_last().expect("clap requires a file");
    if inputs.is_empty() {
        return Err(Failure::user(anyhow!(
            "tool {} needs at least one input and an output file",
            args.name
        )));
    }
    let buffers = inputs
        .iter()
        .enumerate()
        .map(|(i, p)| load_input(&args.name, i, p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut stack =
        LayerStack::new(buffers[0].width(), buffers[0].height()).map_err(Failure::user)?;
    let mut names = Vec::new();
    for (i, buf) in buffers.into_iter().enumerate() {
        let name = format!("in{i}");
        stack = stack
            .add_layer(Layer::new(name.clone(), buf).map_err(Failure::user)?)
            .map_err(Failure::user)?;
        names.push(name);
    }
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut step = Step::new(&args.name, &name_refs, "out");
    step.params = tool_params(args);
    let spec = PipelineSpec::new(vec![step]);
    let backend = args.backend.backend.open();
    let options = RunOptions {
        device: args.backend.device(),
        parallel: false,
    };
    let result =
        run_pipeline_with(&stack, &spec, backend.as_ref(), &options).map_err(pipeline_failure)?;
    let layer = result.get("out").expect("step output");
    if args.name == "monodepth" {
        let buf = layer.buffer();
        let d = DisparityMap::new(buf.width(), buf.height(), buf.data().to_vec())
            .map_err(Failure::user)?;
        save_disparity_png(&d, output).map_err(Failure::user)?;
    } else {
        save_png(layer.buffer(), output).map_err(Failure::user)?;
    }
    info!("wrote {}", output.display());
    Ok(())
}

fn cmd_pipeline(cmd: PipelineCommand) -> Result<(), Failure> {
    match cmd {
        PipelineCommand::Run {
            project,
            spec,
            out,
            backend,
            parallel,
        } => {
            let stack = load_project(&project).map_err(Failure::user)?;
            let spec = PipelineSpec::load(&spec).map_err(|e| Failure::user(anyhow!(e)))?;
            let options = RunOptions {
                device: backend.device(),
                parallel,
            };
            let handle = backend.backend.open();
            info!("backend {}", handle.describe());
            match run_pipeline_with(&stack, &spec, handle.as_ref(), &options) {
                Ok(result) => {
                    save_project(&result, &out).map_err(Failure::user)?;
                    info!(
                        "added {} layers; wrote {}",
                        result.len() - stack.len(),
                        out.display()
                    );
                    Ok(())
                }
                Err(e) => {
                    if let PipelineError::Step { partial, .. } = &e {
                        save_project(partial, &out).map_err(Failure::user)?;
                        info!(
                            "kept {} completed layers in {}",
                            partial.len() - stack.len(),
                            out.display()
                        );
                    }
                    Err(pipeline_failure(e))
                }
            }
        }
        PipelineCommand::EmitBuiltin(args) => {
            let opts = BuiltinOptions {
                image: args.image,
                hints: args.hints,
                erase_masks: args.erase_masks,
                modified_mask: args.modified_mask,
                seed: args.seed,
                sigma: args.sigma,
                classes: args.classes,
                hue: args.hue,
                saturation: args.saturation,
                strength: args.strength,
            };
            let spec = builtin(&args.name, &opts)
                .with_context(|| format!("available built-ins: {}", BUILTINS.join(", ")))?;
            println!("{}", spec.to_json());
            Ok(())
        }
    }
}

fn cmd_project(cmd: ProjectCommand) -> Result<(), Failure> {
    match cmd {
        ProjectCommand::New { dir, image, name } => {
            let buf = load_png(&image).map_err(Failure::user)?;
            let stack = LayerStack::new(buf.width(), buf.height())
                .and_then(|s| s.add_layer(Layer::new(name, buf)?))
                .map_err(Failure::user)?;
            save_project(&stack, &dir).map_err(Failure::user)
        }
        ProjectCommand::Add {
            dir,
            image,
            name,
            opacity,
            offset_x,
            offset_y,
            hidden,
        } => {
            let stack = load_project(&dir).map_err(Failure::user)?;
            let buf = load_png(&image).map_err(Failure::user)?;
            let layer = Layer::new(name, buf)
                .and_then(|l| l.with_opacity(opacity))
                .map(|l| l.with_offset(offset_x, offset_y).with_visible(!hidden))
                .map_err(Failure::user)?;
            let stack = stack.add_layer(layer).map_err(Failure::user)?;
            save_project(&stack, &dir).map_err(Failure::user)
        }
        ProjectCommand::Flatten { dir, out } => {
            let stack = load_project(&dir).map_err(Failure::user)?;
            let flat = composite(&stack).map_err(Failure::user)?;
            save_png(&flat, &out).map_err(Failure::user)
        }
        ProjectCommand::Info { dir } => {
            let stack = load_project(&dir).map_err(Failure::user)?;
            println!("canvas {}x{}", stack.width(), stack.height());
            for layer in stack.layers() {
                let b = layer.buffer();
                println!(
                    "{}\t{}x{}x{}\topacity {}\t{}",
                    layer.name(),
                    b.width(),
                    b.height(),
                    b.channels(),
                    layer.opacity(),
                    if layer.visible() { "visible" } else { "hidden" }
                );
            }
            Ok(())
        }
    }
}

fn cmd_serve_stub(host: &str, port: u16) -> Result<(), Failure> {
    let listener =
        TcpListener::bind((host, port)).with_context(|| format!("cannot bind {host}:{port}"))?;
    let addr = listener.local_addr().map_err(Failure::user)?;
    println!("listening on {addr}");
    std::io::stdout().flush().ok();
    let backend: Arc<dyn Backend> = Arc::new(StubBackend::new());
    serve(listener, backend).map_err(Failure::user)
}

fn cmd_probe(args: &BackendArgs) -> Result<(), Failure> {
    let backend = args.backend.open();
    let probe = strata::Tensor::new(vec![4], vec![0.0, 0.25, -1.5, f32::MAX]).expect("shape");
    let request = TaskRequest::new(TaskKind::Echo, vec![probe.clone()]).with_device(args.device());
    let started = std::time::Instant::now();
    match backend.run_task(&request).map_err(Failure::backend)? {
        TaskResponse::Ok(t) if t == vec![probe] => {
            println!("{}: echo ok in {:?}", backend.describe(), started.elapsed());
            Ok(())
        }
        TaskResponse::Ok(_) => Err(Failure::backend(anyhow!("echo returned different tensors"))),
        TaskResponse::TaskError(m) | TaskResponse::Refused(m) => Err(Failure::backend(anyhow!(m))),
    }
}
