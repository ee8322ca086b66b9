//! The tool registry: parameter parsing at validation time and execution.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::info;
use serde_json::{Map, Value};

use super::StepError;
use crate::backend::{
    resolve_device, validate_outputs, validate_request, Backend, DevicePolicy, Role, TaskKind,
    TaskRequest, TaskResponse,
};
use crate::maps::{
    class_mask, decode_trimap, normalize_disparity, relight, DisparityMap, LabelMap, Palette,
};
use crate::ops::{
    colorize, desaturate, edge_detect, gaussian_blur, grayscale, hue_saturation, invert,
    kmeans_cluster, resize_bicubic, selective_apply, KMeansConfig, RegionMask,
};
use crate::raster::{composite, ImageBuffer, Layer, LayerStack, Tensor};

/// Classical and mask tools; backend tasks are addressed by their task name.
pub const CLASSICAL_TOOLS: [&str; 14] = [
    "kmeans",
    "grayscale",
    "desaturate",
    "invert",
    "colorize",
    "gaussian_blur",
    "hue_saturation",
    "edge_detect",
    "resize_bicubic",
    "selective_apply",
    "class_mask",
    "normalize_disparity",
    "relight",
    "composite",
];

/// Every accepted tool name.
pub fn tool_names() -> Vec<&'static str> {
    CLASSICAL_TOOLS
        .iter()
        .copied()
        .chain(TaskKind::ALL.iter().map(|t| t.name()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaletteKind {
    Voc,
    Face,
}

impl PaletteKind {
    pub fn palette(self) -> Palette {
        match self {
            PaletteKind::Voc => Palette::pascal_voc(),
            PaletteKind::Face => Palette::face_parsing(),
        }
    }
}

/// A tool with its parameters parsed and range-checked.
#[derive(Debug, Clone, PartialEq)]
pub enum ToolCall {
    KMeans(KMeansConfig),
    Grayscale,
    Desaturate,
    Invert,
    EdgeDetect,
    Colorize {
        hue: f64,
        saturation: f64,
    },
    GaussianBlur {
        sigma: f64,
    },
    HueSaturation {
        hue: f64,
        saturation: f64,
        lightness: f64,
    },
    Resize {
        scale: u32,
    },
    SelectiveApply {
        classes: Option<(Vec<u32>, PaletteKind)>,
        invert: bool,
    },
    ClassMask {
        classes: Vec<u32>,
        palette: PaletteKind,
        invert: bool,
    },
    NormalizeDisparity,
    Relight {
        hue: f64,
        saturation: f64,
        strength: f64,
    },
    /// Flattens the stack built so far, or only the named layers.
    Composite,
    Task {
        kind: TaskKind,
        params: BTreeMap<String, f64>,
    },
}

/// Reads typed values out of a JSON parameter object and rejects leftovers.
struct Params<'a> {
    map: &'a Map<String, Value>,
    used: Vec<&'static str>,
}

impl<'a> Params<'a> {
    fn new(map: &'a Map<String, Value>) -> Self {
        Self {
            map,
            used: Vec::new(),
        }
    }

    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.push(key);
        self.map.get(key)
    }

    fn f64(&mut self, key: &'static str, default: f64) -> Result<f64, String> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("parameter {key:?} must be a finite number")),
        }
    }

    fn u64(&mut self, key: &'static str, default: u64) -> Result<u64, String> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .ok_or_else(|| format!("parameter {key:?} must be a non-negative integer")),
        }
    }

    fn bool(&mut self, key: &'static str, default: bool) -> Result<bool, String> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| format!("parameter {key:?} must be a boolean")),
        }
    }

    fn classes(&mut self) -> Result<Option<Vec<u32>>, String> {
        let Some(v) = self.get("classes") else {
            return Ok(None);
        };
        let list = v
            .as_array()
            .ok_or("parameter \"classes\" must be an array")?;
        list.iter()
            .map(|c| {
                c.as_u64()
                    .and_then(|c| u32::try_from(c).ok())
                    .ok_or_else(|| format!("class id {c} is not a non-negative integer"))
            })
            .collect::<Result<_, _>>()
            .map(Some)
    }

    fn palette(&mut self) -> Result<PaletteKind, String> {
        match self.get("palette").map(|v| v.as_str()) {
            None => Ok(PaletteKind::Voc),
            Some(Some("voc")) => Ok(PaletteKind::Voc),
            Some(Some("face")) => Ok(PaletteKind::Face),
            Some(_) => Err("parameter \"palette\" must be \"voc\" or \"face\"".into()),
        }
    }

    fn finish(self) -> Result<(), String> {
        match self.map.keys().find(|k| !self.used.contains(&k.as_str())) {
            Some(k) => Err(format!("unknown parameter {k:?}")),
            None => Ok(()),
        }
    }
}

fn check_palette_ids(classes: &[u32], palette: PaletteKind) -> Result<(), String> {
    let n = palette.palette().len();
    match classes.iter().find(|&&c| c as usize >= n) {
        Some(c) => Err(format!("class id {c} is not in the {n}-class palette")),
        None => Ok(()),
    }
}

impl ToolCall {
    pub fn parse(tool: &str, params: &Map<String, Value>) -> Result<Self, String> {
        let mut p = Params::new(params);
        let call = match tool {
            "kmeans" => {
                let k = p.u64("k", 0)?;
                if k == 0 {
                    return Err("parameter \"k\" must be a positive integer".into());
                }
                let mut cfg = KMeansConfig::new(k as usize)
                    .with_seed(p.u64("seed", 0)?)
                    .with_position(p.bool("position", false)?);
                cfg.max_iter = p.u64("max_iter", cfg.max_iter as u64)? as usize;
                cfg.tol = p.f64("tol", cfg.tol)?;
                if cfg.max_iter == 0 || cfg.tol < 0.0 || cfg.k > 256 {
                    return Err(
                        "k must be at most 256, max_iter positive and tol non-negative".into(),
                    );
                }
                ToolCall::KMeans(cfg)
            }
            "grayscale" => ToolCall::Grayscale,
            "desaturate" => ToolCall::Desaturate,
            "invert" => ToolCall::Invert,
            "edge_detect" => ToolCall::EdgeDetect,
            "colorize" => ToolCall::Colorize {
                hue: p.f64("hue", 0.0)?,
                saturation: unit(p.f64("saturation", 0.5)?, "saturation")?,
            },
            "gaussian_blur" => {
                let sigma = p.f64("sigma", 2.0)?;
                if sigma < 0.0 {
                    return Err(format!("sigma must be non-negative, got {sigma}"));
                }
                ToolCall::GaussianBlur { sigma }
            }
            "hue_saturation" => {
                let saturation = p.f64("saturation", 1.0)?;
                if saturation < 0.0 {
                    return Err(format!(
                        "saturation scale must be non-negative, got {saturation}"
                    ));
                }
                ToolCall::HueSaturation {
                    hue: p.f64("hue", 0.0)?,
                    saturation,
                    lightness: p.f64("lightness", 0.0)?.clamp(-1.0, 1.0),
                }
            }
            "resize_bicubic" => ToolCall::Resize {
                scale: scale(p.f64("scale", 2.0)?)?,
            },
            "selective_apply" => {
                let classes = p.classes()?;
                let palette = p.palette()?;
                if let Some(c) = &classes {
                    check_palette_ids(c, palette)?;
                }
                ToolCall::SelectiveApply {
                    classes: classes.map(|c| (c, palette)),
                    invert: p.bool("invert", false)?,
                }
            }
            "class_mask" => {
                let classes = p.classes()?.ok_or("missing parameter \"classes\"")?;
                let palette = p.palette()?;
                check_palette_ids(&classes, palette)?;
                ToolCall::ClassMask {
                    classes,
                    palette,
                    invert: p.bool("invert", false)?,
                }
            }
            "normalize_disparity" => ToolCall::NormalizeDisparity,
            "relight" => ToolCall::Relight {
                hue: p.f64("hue", 40.0)?,
                saturation: unit(p.f64("saturation", 0.8)?, "saturation")?,
                strength: unit(p.f64("strength", 0.6)?, "strength")?,
            },
            "composite" => ToolCall::Composite,
            other => {
                let kind =
                    TaskKind::from_name(other).ok_or_else(|| format!("unknown tool {other:?}"))?;
                let mut params = BTreeMap::new();
                for (key, value) in p.map {
                    let v = value
                        .as_f64()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| format!("parameter {key:?} of {other} must be a number"))?;
                    params.insert(key.clone(), v);
                }
                if kind == TaskKind::SuperRes {
                    scale(*params.get("scale").ok_or("missing parameter \"scale\"")?)?;
                }
                return Ok(ToolCall::Task { kind, params });
            }
        };
        p.finish()?;
        Ok(call)
    }

    /// Required input count; `None` means any number.
    pub fn arity(&self) -> Option<usize> {
        Some(match self {
            ToolCall::SelectiveApply { .. } => 3,
            ToolCall::Relight { .. } => 2,
            ToolCall::Composite => return None,
            ToolCall::Task {
                kind: TaskKind::Echo,
                ..
            } => 1,
            ToolCall::Task { kind, .. } => kind.signature().inputs.len(),
            _ => 1,
        })
    }
}

fn unit(v: f64, name: &str) -> Result<f64, String> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{name} must lie in [0, 1], got {v}"))
    }
}

fn scale(v: f64) -> Result<u32, String> {
    if v == 2.0 || v == 3.0 || v == 4.0 {
        Ok(v as u32)
    } else {
        Err(format!("scale must be 2, 3 or 4, got {v}"))
    }
}

fn input<E: std::fmt::Display>(e: E) -> StepError {
    StepError::Input(e.to_string())
}

fn color_only(buf: &ImageBuffer) -> Result<ImageBuffer, StepError> {
    buf.to_channels(buf.color_channels()).map_err(input)
}

fn rgb(buf: &ImageBuffer) -> Result<ImageBuffer, StepError> {
    buf.to_channels(3).map_err(input)
}

fn labels_tensor(buf: &ImageBuffer, classes: usize) -> Result<Tensor, StepError> {
    let palette = if classes == crate::backend::FACE_PARSE_CLASSES {
        Palette::face_parsing()
    } else {
        Palette::pascal_voc()
    };
    Ok(LabelMap::from_buffer(buf, palette)
        .map_err(input)?
        .to_tensor())
}

fn encode_input(role: Role, buf: &ImageBuffer) -> Result<Tensor, StepError> {
    Ok(match role {
        Role::Rgb => Tensor::from_buffer(&rgb(buf)?, false),
        Role::GrayOrRgb => Tensor::from_buffer(&color_only(buf)?, true),
        Role::HintRgba => {
            if buf.channels() != 4 {
                return Err(StepError::Input(format!(
                    "hint layer must be RGBA, got {} channels",
                    buf.channels()
                )));
            }
            Tensor::from_buffer(buf, false)
        }
        Role::Labels(n) => labels_tensor(buf, n)?,
        Role::Trimap => Tensor::from_buffer(&decode_trimap(buf).map_err(input)?.to_buffer(), false),
        Role::Alpha | Role::Disparity => {
            Tensor::from_buffer(&buf.to_channels(1).map_err(input)?, false)
        }
    })
}

fn decode_output(role: Role, t: &Tensor) -> Result<ImageBuffer, StepError> {
    let bad = |e: String| StepError::Task(format!("backend returned unusable output: {e}"));
    match role {
        Role::Labels(n) => {
            let palette = if n == crate::backend::FACE_PARSE_CLASSES {
                Palette::face_parsing()
            } else {
                Palette::pascal_voc()
            };
            Ok(LabelMap::from_tensor(t, palette)
                .map_err(|e| bad(e.to_string()))?
                .to_buffer())
        }
        Role::Disparity => Ok(normalize_disparity(
            &DisparityMap::from_tensor(t).map_err(|e| bad(e.to_string()))?,
        )),
        _ => t.to_buffer().map_err(|e| bad(e.to_string())),
    }
}

fn run_task(
    kind: TaskKind,
    params: &BTreeMap<String, f64>,
    inputs: &[Arc<Layer>],
    backend: &dyn Backend,
    device: DevicePolicy,
) -> Result<ImageBuffer, StepError> {
    let sig = kind.signature();
    let tensors = if kind == TaskKind::Echo {
        vec![Tensor::from_buffer(inputs[0].buffer(), false)]
    } else {
        sig.inputs
            .iter()
            .zip(inputs)
            .map(|(&role, layer)| encode_input(role, layer.buffer()))
            .collect::<Result<_, _>>()?
    };
    let mut request = TaskRequest::new(kind, tensors).with_device(device);
    request.params = params.clone();
    validate_request(&request).map_err(StepError::Input)?;
    match backend.accelerator_available() {
        Some(accel) => info!("{kind}: device {}", resolve_device(device, accel)),
        None => info!(
            "{kind}: device chosen by {} ({device:?})",
            backend.describe()
        ),
    }
    let outputs = match backend.run_task(&request) {
        Ok(TaskResponse::Ok(t)) => t,
        Ok(TaskResponse::TaskError(msg)) => return Err(StepError::Task(msg)),
        Ok(TaskResponse::Refused(msg)) => {
            return Err(StepError::Transport(format!("request refused: {msg}")))
        }
        Err(e) => return Err(StepError::Transport(e.to_string())),
    };
    validate_outputs(&request, &outputs)
        .map_err(|e| StepError::Task(format!("backend returned invalid output: {e}")))?;
    if kind == TaskKind::Echo {
        return decode_output(Role::Rgb, &outputs[0]);
    }
    decode_output(sig.outputs[0], &outputs[0])
}

fn region_mask(
    mask_layer: &ImageBuffer,
    classes: &Option<(Vec<u32>, PaletteKind)>,
    inverted: bool,
) -> Result<RegionMask, StepError> {
    let mask = match classes {
        Some((ids, palette)) => {
            let map = LabelMap::from_buffer(mask_layer, palette.palette()).map_err(input)?;
            class_mask(&map, ids).map_err(input)?
        }
        None => RegionMask::from_buffer(mask_layer),
    };
    Ok(if inverted { mask.complement() } else { mask })
}

/// Runs one parsed tool. `prefix` is the stack as it stood before this
/// step, used by `composite` without inputs.
pub(super) fn execute(
    call: &ToolCall,
    inputs: &[Arc<Layer>],
    prefix: impl FnOnce() -> LayerStack,
    backend: &dyn Backend,
    device: DevicePolicy,
) -> Result<ImageBuffer, StepError> {
    let first = inputs.first().map(|l| l.buffer());
    let img = || first.expect("arity checked");
    match call {
        ToolCall::KMeans(cfg) => Ok(kmeans_cluster(&color_only(img())?, cfg)
            .map_err(input)?
            .image),
        ToolCall::Grayscale => Ok(grayscale(img())),
        ToolCall::Desaturate => Ok(desaturate(img())),
        ToolCall::Invert => Ok(invert(img())),
        ToolCall::EdgeDetect => Ok(edge_detect(img())),
        ToolCall::Colorize { hue, saturation } => colorize(img(), *hue, *saturation).map_err(input),
        ToolCall::GaussianBlur { sigma } => gaussian_blur(img(), *sigma).map_err(input),
        ToolCall::HueSaturation {
            hue,
            saturation,
            lightness,
        } => hue_saturation(img(), *hue, *saturation, *lightness).map_err(input),
        ToolCall::Resize { scale } => resize_bicubic(img(), *scale).map_err(input),
        ToolCall::SelectiveApply { classes, invert } => {
            let (base, processed) = (inputs[0].buffer(), inputs[1].buffer());
            let channels = base.channels().max(processed.channels());
            let base = base.to_channels(channels).map_err(input)?;
            let processed = processed.to_channels(channels).map_err(input)?;
            let mask = region_mask(inputs[2].buffer(), classes, *invert)?;
            selective_apply(&base, &processed, &mask).map_err(input)
        }
        ToolCall::ClassMask {
            classes,
            palette,
            invert,
        } => Ok(region_mask(img(), &Some((classes.clone(), *palette)), *invert)?.to_buffer()),
        ToolCall::NormalizeDisparity => Ok(normalize_disparity(&DisparityMap::from_buffer(img()))),
        ToolCall::Relight {
            hue,
            saturation,
            strength,
        } => {
            let image = color_only(inputs[0].buffer())?;
            let d = DisparityMap::from_buffer(inputs[1].buffer());
            relight(&image, &d, *hue, *saturation, *strength).map_err(input)
        }
        ToolCall::Composite => {
            let stack = prefix();
            let stack = if inputs.is_empty() {
                stack
            } else {
                let mut selected = LayerStack::new(stack.width(), stack.height()).map_err(input)?;
                for layer in inputs {
                    selected = selected.add_layer((**layer).clone()).map_err(input)?;
                }
                selected
            };
            composite(&stack).map_err(input)
        }
        ToolCall::Task { kind, params } => run_task(*kind, params, inputs, backend, device),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn parse(tool: &str, params: Value) -> Result<ToolCall, String> {
        ToolCall::parse(tool, params.as_object().unwrap())
    }

    #[test]
    fn parameters_are_checked() {
        assert_eq!(
            parse("gaussian_blur", json!({})).unwrap(),
            ToolCall::GaussianBlur { sigma: 2.0 }
        );
        assert!(parse("gaussian_blur", json!({"sigma": -1})).is_err());
        assert!(parse("gaussian_blur", json!({"sigmaa": 1}))
            .unwrap_err()
            .contains("sigmaa"));
        assert!(parse("kmeans", json!({})).is_err());
        assert!(parse("kmeans", json!({"k": 3, "seed": 7})).is_ok());
        assert!(parse("relight", json!({"strength": 1.5})).is_err());
        assert!(parse("class_mask", json!({"classes": [21]})).is_err());
        assert!(parse("class_mask", json!({"classes": [18], "palette": "face"})).is_ok());
        assert!(parse("superres", json!({})).is_err());
        assert!(parse("superres", json!({"scale": 5})).is_err());
        assert!(parse("superres", json!({"scale": 3})).is_ok());
        assert!(parse("semseg", json!({"seed": "x"})).is_err());
        assert!(parse("sharpen", json!({}))
            .unwrap_err()
            .contains("unknown tool"));
    }

    #[test]
    fn every_listed_tool_parses() {
        for name in tool_names() {
            let params = match name {
                "kmeans" => json!({"k": 2}),
                "class_mask" => json!({"classes": [0]}),
                "superres" => json!({"scale": 2}),
                _ => json!({}),
            };
            parse(name, params).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert_eq!(tool_names().len(), 14 + 12);
    }
}
