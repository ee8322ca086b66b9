//! Layered project directories and PNG helpers.
//!
//! A project is a directory with a `project.json` manifest listing layers
//! bottom-to-top and one 8-bit PNG per layer under `layers/`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer as PngBuffer, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maps::DisparityMap;
use crate::raster::{ImageBuffer, ImageError, Layer, LayerStack};

pub const MANIFEST: &str = "project.json";

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: invalid manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: u32,
    pub height: u32,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub file: String,
    #[serde(default = "default_opacity")]
    pub opacity: f32,
    #[serde(default = "default_visible")]
    pub visible: bool,
    #[serde(default)]
    pub offset_x: i32,
    #[serde(default)]
    pub offset_y: i32,
}

fn default_opacity() -> f32 {
    1.0
}

fn default_visible() -> bool {
    true
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProjectError + '_ {
    move |source| ProjectError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn image_err(path: &Path) -> impl FnOnce(ImageError) -> ProjectError + '_ {
    move |source| ProjectError::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads an 8-bit PNG as gray, RGB or RGBA. Gray+alpha is widened to RGBA;
/// deeper images are reduced to 8 bits first.
pub fn load_png(path: &Path) -> Result<ImageBuffer, ProjectError> {
    let img = image::open(path).map_err(|source| ProjectError::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width(), img.height());
    let (channels, bytes) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        DynamicImage::ImageRgba8(b) => (4, b.into_raw()),
        DynamicImage::ImageLuma16(_) => (1, img.to_luma8().into_raw()),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgb32F(_) => (3, img.to_rgb8().into_raw()),
        other => (4, other.to_rgba8().into_raw()),
    };
    ImageBuffer::from_u8(w, h, channels, &bytes).map_err(image_err(path))
}

/// Writes a buffer as an 8-bit PNG (gray, RGB or RGBA).
pub fn save_png(buffer: &ImageBuffer, path: &Path) -> Result<(), ProjectError> {
    let (w, h) = (buffer.width(), buffer.height());
    let bytes = buffer.to_u8();
    let img = match buffer.channels() {
        1 => DynamicImage::ImageLuma8(PngBuffer::from_raw(w, h, bytes).expect("sized")),
        3 => DynamicImage::ImageRgb8(PngBuffer::from_raw(w, h, bytes).expect("sized")),
        _ => DynamicImage::ImageRgba8(PngBuffer::from_raw(w, h, bytes).expect("sized")),
    };
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| ProjectError::Decode {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads a disparity map from a 16-bit (value / 65535) or 8-bit
/// (value / 255) grayscale PNG.
pub fn load_disparity_png(path: &Path) -> Result<DisparityMap, ProjectError> {
    let img = image::open(path).map_err(|source| ProjectError::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let luma = img.to_luma16();
    let (w, h) = luma.dimensions();
    let values = luma
        .into_raw()
        .into_iter()
        .map(|v| f32::from(v) / 65535.0)
        .collect();
    Ok(DisparityMap::new(w, h, values).expect("16-bit samples are finite and non-negative"))
}

/// Writes a disparity map as 16-bit grayscale after min-max normalization.
pub fn save_disparity_png(d: &DisparityMap, path: &Path) -> Result<(), ProjectError> {
    let norm = crate::maps::normalize_disparity(d);
    let samples: Vec<u16> = norm
        .data()
        .iter()
        .map(|&v| (f64::from(v) * 65535.0).round() as u16)
        .collect();
    let img: PngBuffer<Luma<u16>, Vec<u16>> =
        PngBuffer::from_raw(d.width(), d.height(), samples).expect("sized");
    DynamicImage::ImageLuma16(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| ProjectError::Decode {
            path: path.to_path_buf(),
            source,
        })
}

pub fn load_project(dir: &Path) -> Result<LayerStack, ProjectError> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| ProjectError::Manifest {
            path: manifest_path.clone(),
            source,
        })?;
    let mut stack =
        LayerStack::new(manifest.width, manifest.height).map_err(image_err(&manifest_path))?;
    for entry in manifest.layers {
        let path = dir.join(&entry.file);
        let buffer = load_png(&path)?;
        let layer = Layer::new(entry.name, buffer)
            .and_then(|l| l.with_opacity(entry.opacity))
            .map(|l| {
                l.with_visible(entry.visible)
                    .with_offset(entry.offset_x, entry.offset_y)
            })
            .map_err(image_err(&path))?;
        stack = stack.add_layer(layer).map_err(image_err(&manifest_path))?;
    }
    Ok(stack)
}

/// Writes the manifest and one PNG per layer (`layers/<index>.png`).
pub fn save_project(stack: &LayerStack, dir: &Path) -> Result<(), ProjectError> {
    let layer_dir = dir.join("layers");
    fs::create_dir_all(&layer_dir).map_err(io_err(&layer_dir))?;
    let mut entries = Vec::with_capacity(stack.len());
    for (i, layer) in stack.layers().iter().enumerate() {
        let file = format!("layers/{i}.png");
        save_png(layer.buffer(), &dir.join(&file))?;
        let (offset_x, offset_y) = layer.offset();
        entries.push(LayerEntry {
            name: layer.name().to_string(),
            file,
            opacity: layer.opacity(),
            visible: layer.visible(),
            offset_x,
            offset_y,
        });
    }
    let manifest = Manifest {
        width: stack.width(),
        height: stack.height(),
        layers: entries,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bg = ImageBuffer::from_u8(
            3,
            2,
            3,
            &[
                10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140, 150, 160, 170, 180,
            ],
        )
        .unwrap();
        let fg = ImageBuffer::from_u8(1, 1, 4, &[255, 0, 0, 128]).unwrap();
        let g = ImageBuffer::from_u8(2, 1, 1, &[0, 200]).unwrap();
        let stack = LayerStack::new(3, 2)
            .unwrap()
            .add_layer(Layer::new("bg", bg).unwrap())
            .unwrap()
            .add_layer(
                Layer::new("fg", fg)
                    .unwrap()
                    .with_opacity(0.5)
                    .unwrap()
                    .with_offset(2, -1),
            )
            .unwrap()
            .add_layer(Layer::new("g", g).unwrap().with_visible(false))
            .unwrap();
        save_project(&stack, dir.path()).unwrap();
        let back = load_project(dir.path()).unwrap();
        assert_eq!(back, stack);
    }

    #[test]
    fn disparity_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let d = DisparityMap::new(3, 1, vec![0.0, 0.25, 1.0]).unwrap();
        save_disparity_png(&d, &path).unwrap();
        let back = load_disparity_png(&path).unwrap();
        assert_eq!(back.values()[0], 0.0);
        assert_eq!(back.values()[2], 1.0);
        assert!((back.values()[1] - 0.25).abs() < 1e-4);
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_project(dir.path()),
            Err(ProjectError::Io { .. })
        ));
    }
}
