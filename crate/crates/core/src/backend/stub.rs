//! Deterministic classical stand-ins for every task.
//!
//! These satisfy each task's shape and value contract so that pipelines run
//! without model weights. They are not meant to approximate the quality of
//! the corresponding networks.

use log::debug;

use super::{
    resolve_device, superres_scale, validate_request, Backend, TaskKind, TaskRequest, TaskResponse,
    TransportError, FACE_PARSE_CLASSES, SEMSEG_CLASSES,
};
use crate::maps::{decode_trimap, parse_hint_layer, LabelMap, Palette, TrimapValue};
use crate::ops::{gaussian_blur, grayscale, kmeans_cluster, resize_bicubic, KMeansConfig};
use crate::raster::{luma, ImageBuffer, Tensor};

#[derive(Debug, Clone, Default)]
pub struct StubBackend {
    accelerator: bool,
}

impl StubBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pretend an accelerator is present; only affects device resolution.
    pub fn with_accelerator(accelerator: bool) -> Self {
        Self { accelerator }
    }

    /// Runs a request in-process; validation failures become task errors.
    pub fn execute(&self, request: &TaskRequest) -> TaskResponse {
        if let Err(msg) = validate_request(request) {
            return TaskResponse::TaskError(msg);
        }
        let device = resolve_device(request.device, self.accelerator);
        debug!("stub {} on {device}", request.task);
        match run(request) {
            Ok(tensors) => TaskResponse::Ok(tensors),
            Err(msg) => TaskResponse::TaskError(msg),
        }
    }
}

impl Backend for StubBackend {
    fn run_task(&self, request: &TaskRequest) -> Result<TaskResponse, TransportError> {
        Ok(self.execute(request))
    }

    fn accelerator_available(&self) -> Option<bool> {
        Some(self.accelerator)
    }

    fn describe(&self) -> String {
        "stub".to_string()
    }
}

fn buffer(t: &Tensor) -> Result<ImageBuffer, String> {
    t.to_buffer().map_err(|e| e.to_string())
}

fn tensor(b: &ImageBuffer) -> Tensor {
    Tensor::from_buffer(b, false)
}

fn run(request: &TaskRequest) -> Result<Vec<Tensor>, String> {
    let inputs = &request.tensors;
    let out = match request.task {
        TaskKind::Echo => return Ok(inputs.clone()),
        TaskKind::FaceParse => segment(&buffer(&inputs[0])?, FACE_PARSE_CLASSES, request)?,
        TaskKind::SemSeg => segment(&buffer(&inputs[0])?, SEMSEG_CLASSES, request)?,
        TaskKind::MonoDepth => depth(&buffer(&inputs[0])?),
        TaskKind::SuperRes => {
            let scale = superres_scale(&request.params)?;
            tensor(&resize_bicubic(&buffer(&inputs[0])?, scale).map_err(|e| e.to_string())?)
        }
        TaskKind::Deblur => tensor(&unsharp(&buffer(&inputs[0])?)?),
        TaskKind::Denoise => {
            tensor(&gaussian_blur(&buffer(&inputs[0])?, 1.0).map_err(|e| e.to_string())?)
        }
        TaskKind::Dehaze => tensor(&stretch(&buffer(&inputs[0])?)),
        TaskKind::Enlighten => {
            let img = buffer(&inputs[0])?;
            tensor(
                &img.map_pixels(3, |s, d| {
                    for (d, s) in d.iter_mut().zip(s) {
                        *d = s.sqrt();
                    }
                })
                .map_err(|e| e.to_string())?,
            )
        }
        TaskKind::DeepColor => tensor(&colorize_from_hints(
            &buffer(&inputs[0])?,
            &buffer(&inputs[1])?,
        )?),
        TaskKind::FaceGen => face_gen(inputs)?,
        TaskKind::Matting => matte(&buffer(&inputs[1])?)?,
    };
    Ok(vec![out])
}

/// k-means over (color, position) with k limited by the class count, then
/// clusters renumbered by ascending centroid luma.
fn segment(img: &ImageBuffer, classes: usize, request: &TaskRequest) -> Result<Tensor, String> {
    let seed = request.params.get("seed").copied().unwrap_or(0.0);
    let k = classes.min(img.pixel_count());
    let cfg = KMeansConfig::new(k)
        .with_position(true)
        .with_seed(seed.max(0.0) as u64);
    let out = kmeans_cluster(img, &cfg).map_err(|e| e.to_string())?;
    let lumas: Vec<f64> = out
        .centroids
        .iter()
        .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| lumas[a].total_cmp(&lumas[b]).then(a.cmp(&b)));
    let mut rank = vec![0u8; k];
    for (r, &cluster) in order.iter().enumerate() {
        rank[cluster] = r as u8;
    }
    let data = out
        .labels
        .labels()
        .iter()
        .map(|&l| f32::from(rank[l as usize]))
        .collect();
    Tensor::new(vec![1, img.height() as usize, img.width() as usize], data)
        .map_err(|e| e.to_string())
}

/// Min-max normalized luma.
fn depth(img: &ImageBuffer) -> Tensor {
    let gray = grayscale(img);
    let d = crate::maps::DisparityMap::from_buffer(&gray);
    tensor(&crate::maps::normalize_disparity(&d))
}

/// `image + 0.5 * (image - blur(image, 2))`.
fn unsharp(img: &ImageBuffer) -> Result<ImageBuffer, String> {
    let blurred = gaussian_blur(img, 2.0).map_err(|e| e.to_string())?;
    let data = img
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(&v, &b)| (v + 0.5 * (v - b)).clamp(0.0, 1.0))
        .collect();
    ImageBuffer::new(img.width(), img.height(), img.channels(), data).map_err(|e| e.to_string())
}

/// Per-channel min-max contrast stretch; flat channels are left as is.
fn stretch(img: &ImageBuffer) -> ImageBuffer {
    let c = img.channels();
    let mut lo = vec![f32::INFINITY; c];
    let mut hi = vec![f32::NEG_INFINITY; c];
    for px in img.pixels() {
        for ch in 0..c {
            lo[ch] = lo[ch].min(px[ch]);
            hi[ch] = hi[ch].max(px[ch]);
        }
    }
    img.map_pixels(c, |s, d| {
        for ch in 0..c {
            let range = hi[ch] - lo[ch];
            d[ch] = if range > 0.0 {
                (s[ch] - lo[ch]) / range
            } else {
                s[ch]
            };
        }
    })
    .expect("same dimensions")
}

/// Keeps the input luma and interpolates hint chroma (color minus its luma)
/// with inverse squared distance weights. A pixel at a hint center takes
/// that hint's chroma exactly; with no hints the output is gray.
fn colorize_from_hints(img: &ImageBuffer, hint_layer: &ImageBuffer) -> Result<ImageBuffer, String> {
    let hints = parse_hint_layer(hint_layer).map_err(|e| e.to_string())?;
    let chroma: Vec<(f64, f64, [f64; 3])> = hints
        .dots
        .iter()
        .map(|d| {
            let y = f64::from(luma(d.color));
            (
                f64::from(d.x),
                f64::from(d.y),
                d.color.map(|c| f64::from(c) - y),
            )
        })
        .collect();
    let w = img.width();
    let mut out = Vec::with_capacity(img.pixel_count() * 3);
    for (i, px) in img.pixels().enumerate() {
        let y = if px.len() == 1 {
            px[0]
        } else {
            luma([px[0], px[1], px[2]])
        };
        let (x, yy) = (f64::from(i as u32 % w), f64::from(i as u32 / w));
        let mut offset = [0.0f64; 3];
        if let Some(exact) = chroma.iter().rev().find(|h| h.0 == x && h.1 == yy) {
            offset = exact.2;
        } else if !chroma.is_empty() {
            let mut total = 0.0;
            for (hx, hy, c) in &chroma {
                let wgt = 1.0 / ((hx - x).powi(2) + (hy - yy).powi(2));
                total += wgt;
                for ch in 0..3 {
                    offset[ch] += wgt * c[ch];
                }
            }
            offset = offset.map(|o| o / total);
        }
        out.extend(offset.map(|o| ((f64::from(y) + o).clamp(0.0, 1.0)) as f32));
    }
    ImageBuffer::new(w, img.height(), 3, out).map_err(|e| e.to_string())
}

/// Input where the two masks agree, the edited class's palette color where
/// they differ.
fn face_gen(inputs: &[Tensor]) -> Result<Tensor, String> {
    let img = buffer(&inputs[0])?;
    let palette = Palette::face_parsing();
    let original = LabelMap::from_tensor(&inputs[1], palette.clone()).map_err(|e| e.to_string())?;
    let modified = LabelMap::from_tensor(&inputs[2], palette.clone()).map_err(|e| e.to_string())?;
    let mut data = Vec::with_capacity(img.pixel_count() * 3);
    for ((px, &a), &b) in img.pixels().zip(original.labels()).zip(modified.labels()) {
        if a == b {
            data.extend_from_slice(px);
        } else {
            let color = palette.get(b).expect("validated label").color;
            data.extend(color.map(|c| f32::from(c) / 255.0));
        }
    }
    let out = ImageBuffer::new(img.width(), img.height(), 3, data).map_err(|e| e.to_string())?;
    Ok(tensor(&out))
}

/// Foreground 1, background 0, unknown pixels take a sigma-3 blur of the
/// hard foreground mask.
fn matte(trimap_buffer: &ImageBuffer) -> Result<Tensor, String> {
    let trimap = decode_trimap(trimap_buffer).map_err(|e| e.to_string())?;
    let hard: Vec<f32> = trimap
        .values()
        .iter()
        .map(|&v| {
            if v == TrimapValue::Foreground {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let hard =
        ImageBuffer::new(trimap.width(), trimap.height(), 1, hard).map_err(|e| e.to_string())?;
    let soft = gaussian_blur(&hard, 3.0).map_err(|e| e.to_string())?;
    let alpha: Vec<f32> = trimap
        .values()
        .iter()
        .zip(soft.data())
        .map(|(&v, &s)| match v {
            TrimapValue::Foreground => 1.0,
            TrimapValue::Background => 0.0,
            TrimapValue::Unknown => s,
        })
        .collect();
    Tensor::new(
        vec![1, trimap.height() as usize, trimap.width() as usize],
        alpha,
    )
    .map_err(|e| e.to_string())
}
