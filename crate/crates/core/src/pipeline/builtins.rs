//! Ready-made specs for the five application workflows.
//!
//! | name              | added layers                                   |
//! |-------------------|------------------------------------------------|
//! | `background_blur` | 3: `labels`, `blurred`, `background_blur`      |
//! | `recolor`         | 1 + n + m: `gray`, `color_i`, `recolor_i`      |
//! | `face_edit`       | 3: `parsing`, `hair_recolored`, `face_edit`    |
//! | `portrait_modify` | 2, or 3 with an erase mask: `parsing`, `generated`, `portrait` |
//! | `relight`         | 2: `depth`, `relit`                            |
//!
//! For `recolor`, n is the number of hint layers and m the number of erase
//! masks, which is either 0 or n.

use thiserror::Error;

use super::{PipelineSpec, Step};
use crate::maps::{Palette, FACE_HAIR};

pub const BUILTINS: [&str; 5] = [
    "background_blur",
    "recolor",
    "face_edit",
    "portrait_modify",
    "relight",
];

/// Layer names and parameter overrides for a built-in. Unset parameters
/// take the defaults listed on each field.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinOptions {
    /// The source image layer.
    pub image: String,
    /// RGBA hint layers for `recolor`.
    pub hints: Vec<String>,
    /// Keep-weight layers (alpha or luma) for `recolor` and `portrait_modify`.
    pub erase_masks: Vec<String>,
    /// Edited face-parsing layer for `portrait_modify`.
    pub modified_mask: Option<String>,
    /// Segmentation seed (default 0).
    pub seed: u64,
    /// Background blur sigma (default 4).
    pub sigma: Option<f64>,
    /// Classes kept sharp by `background_blur` (default: person).
    pub classes: Option<Vec<u32>>,
    /// `face_edit`: hue shift in degrees (default 120). `relight`: light hue (default 40).
    pub hue: Option<f64>,
    /// `face_edit`: saturation scale (default 1). `relight`: light saturation (default 0.8).
    pub saturation: Option<f64>,
    /// `relight` strength in [0, 1] (default 0.6).
    pub strength: Option<f64>,
}

impl Default for BuiltinOptions {
    fn default() -> Self {
        Self {
            image: "image".into(),
            hints: Vec::new(),
            erase_masks: Vec::new(),
            modified_mask: None,
            seed: 0,
            sigma: None,
            classes: None,
            hue: None,
            saturation: None,
            strength: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BuiltinError {
    #[error("unknown built-in {0:?}; expected one of {BUILTINS:?}")]
    Unknown(String),
    #[error("{name} requires {what}")]
    MissingInput {
        name: &'static str,
        what: &'static str,
    },
    #[error("recolor takes one erase mask per hint layer or none ({hints} hints, {masks} masks)")]
    MaskCount { hints: usize, masks: usize },
}

pub fn builtin(name: &str, opts: &BuiltinOptions) -> Result<PipelineSpec, BuiltinError> {
    let image = opts.image.as_str();
    let steps = match name {
        "background_blur" => {
            let person = u32::from(
                Palette::pascal_voc()
                    .id_of("person")
                    .expect("voc has person"),
            );
            let classes = opts.classes.clone().unwrap_or_else(|| vec![person]);
            vec![
                Step::new("semseg", &[image], "labels").param("seed", opts.seed),
                Step::new("gaussian_blur", &[image], "blurred")
                    .param("sigma", opts.sigma.unwrap_or(4.0)),
                Step::new(
                    "selective_apply",
                    &[image, "blurred", "labels"],
                    "background_blur",
                )
                .param("classes", classes)
                .param("palette", "voc")
                .param("invert", true),
            ]
        }
        "recolor" => {
            if opts.hints.is_empty() {
                return Err(BuiltinError::MissingInput {
                    name: "recolor",
                    what: "at least one hint layer",
                });
            }
            if !opts.erase_masks.is_empty() && opts.erase_masks.len() != opts.hints.len() {
                return Err(BuiltinError::MaskCount {
                    hints: opts.hints.len(),
                    masks: opts.erase_masks.len(),
                });
            }
            let mut steps = vec![Step::new("grayscale", &[image], "gray")];
            for (i, hint) in opts.hints.iter().enumerate() {
                steps.push(Step::new(
                    "deepcolor",
                    &["gray", hint],
                    &format!("color_{i}"),
                ));
            }
            // Variants are merged in listed order, each later one on top.
            let mut below = "gray".to_string();
            for (i, mask) in opts.erase_masks.iter().enumerate() {
                let out = format!("recolor_{i}");
                steps.push(Step::new(
                    "selective_apply",
                    &[&below, &format!("color_{i}"), mask],
                    &out,
                ));
                below = out;
            }
            steps
        }
        "face_edit" => vec![
            Step::new("faceparse", &[image], "parsing").param("seed", opts.seed),
            Step::new("hue_saturation", &[image], "hair_recolored")
                .param("hue", opts.hue.unwrap_or(120.0))
                .param("saturation", opts.saturation.unwrap_or(1.0)),
            Step::new(
                "selective_apply",
                &[image, "hair_recolored", "parsing"],
                "face_edit",
            )
            .param("classes", vec![u32::from(FACE_HAIR)])
            .param("palette", "face"),
        ],
        "portrait_modify" => {
            let modified = opts
                .modified_mask
                .as_deref()
                .ok_or(BuiltinError::MissingInput {
                    name: "portrait_modify",
                    what: "a modified mask layer",
                })?;
            let mut steps = vec![
                Step::new("faceparse", &[image], "parsing").param("seed", opts.seed),
                Step::new("facegen", &[image, "parsing", modified], "generated"),
            ];
            if let Some(mask) = opts.erase_masks.first() {
                steps.push(Step::new(
                    "selective_apply",
                    &[image, "generated", mask],
                    "portrait",
                ));
            }
            steps
        }
        "relight" => vec![
            Step::new("monodepth", &[image], "depth"),
            Step::new("relight", &[image, "depth"], "relit")
                .param("hue", opts.hue.unwrap_or(40.0))
                .param("saturation", opts.saturation.unwrap_or(0.8))
                .param("strength", opts.strength.unwrap_or(0.6)),
        ],
        other => return Err(BuiltinError::Unknown(other.to_string())),
    };
    Ok(PipelineSpec::new(steps))
}

/// The number of layers `builtin(name, opts)` adds.
pub fn added_layers(name: &str, opts: &BuiltinOptions) -> Result<usize, BuiltinError> {
    builtin(name, opts).map(|s| s.steps.len())
}
