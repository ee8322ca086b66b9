//! Auxiliary rasters with strict value domains: trimaps, color hints, label
//! maps and disparity maps, plus disparity-driven relighting.

use std::collections::VecDeque;

use thiserror::Error;

use crate::ops::{colorize, invert, OpsError, RegionMask};
use crate::raster::{unit_to_u8, ImageBuffer, ImageError, Tensor};

/// Side length of the square stamped for each color hint.
pub const HINT_DOT_SIZE: u32 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error("invalid trimap value {value} at pixel ({x}, {y}); expected 0, 128 or 255")]
    InvalidTrimap { x: u32, y: u32, value: u8 },
    #[error("trimap channels disagree at pixel ({x}, {y}): {values:?}")]
    InconsistentTrimap { x: u32, y: u32, values: Vec<u8> },
    #[error("hint dot at ({x}, {y}) lies outside the {width}x{height} canvas")]
    HintOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("{what} requires {expected} channels, got {channels}")]
    Channels {
        what: &'static str,
        expected: &'static str,
        channels: usize,
    },
    #[error("class id {id} is not in a palette of {classes} classes")]
    UnknownClass { id: u32, classes: usize },
    #[error("disparity value {value} at index {index} is not finite and non-negative")]
    Disparity { index: usize, value: f32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid palette: {0}")]
    Palette(&'static str),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

// Trimaps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrimapValue {
    Background,
    Unknown,
    Foreground,
}

impl TrimapValue {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Background),
            128 => Some(Self::Unknown),
            255 => Some(Self::Foreground),
            _ => None,
        }
    }

    pub fn to_u8(self) -> u8 {
        match self {
            Self::Background => 0,
            Self::Unknown => 128,
            Self::Foreground => 255,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimap {
    width: u32,
    height: u32,
    values: Vec<TrimapValue>,
}

impl Trimap {
    pub fn new(width: u32, height: u32, values: Vec<TrimapValue>) -> Result<Self, MapError> {
        if width == 0 || height == 0 || values.len() != width as usize * height as usize {
            return Err(MapError::DimensionMismatch(format!(
                "{} trimap values for {width}x{height}",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[TrimapValue] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> TrimapValue {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Single-channel raster holding 0, 128/255 or 1.
    pub fn to_buffer(&self) -> ImageBuffer {
        let bytes: Vec<u8> = self.values.iter().map(|v| v.to_u8()).collect();
        ImageBuffer::from_u8(self.width, self.height, 1, &bytes).expect("valid dimensions")
    }
}

/// Decodes a trimap raster. Every color channel of a pixel must carry the
/// same 8-bit value, one of 0 (background), 128 (unknown) or 255
/// (foreground); alpha is ignored.
pub fn decode_trimap(buffer: &ImageBuffer) -> Result<Trimap, MapError> {
    let colors = buffer.color_channels();
    let width = buffer.width();
    let mut values = Vec::with_capacity(buffer.pixel_count());
    for (i, px) in buffer.pixels().enumerate() {
        let (x, y) = (i as u32 % width, i as u32 / width);
        let bytes: Vec<u8> = px[..colors].iter().map(|&v| unit_to_u8(v)).collect();
        if let Some(&value) = bytes.iter().find(|&&b| TrimapValue::from_u8(b).is_none()) {
            return Err(MapError::InvalidTrimap { x, y, value });
        }
        if bytes.iter().any(|&b| b != bytes[0]) {
            return Err(MapError::InconsistentTrimap {
                x,
                y,
                values: bytes,
            });
        }
        values.push(TrimapValue::from_u8(bytes[0]).expect("checked above"));
    }
    Trimap::new(width, buffer.height(), values)
}

// Color hints

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HintDot {
    pub x: u32,
    pub y: u32,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HintSet {
    pub dots: Vec<HintDot>,
}

impl HintSet {
    pub fn new(dots: Vec<HintDot>) -> Self {
        Self { dots }
    }

    pub fn is_empty(&self) -> bool {
        self.dots.is_empty()
    }

    pub fn len(&self) -> usize {
        self.dots.len()
    }
}

/// Paints each hint as an opaque 6x6 square covering `[x-3, x+3) x [y-3, y+3)`
/// on a transparent RGBA canvas. Later dots overwrite earlier ones.
pub fn rasterize_hints(hints: &HintSet, width: u32, height: u32) -> Result<ImageBuffer, MapError> {
    let mut data = vec![0.0f32; width as usize * height as usize * 4];
    let half = HINT_DOT_SIZE / 2;
    for dot in &hints.dots {
        if dot.x >= width || dot.y >= height {
            return Err(MapError::HintOutOfBounds {
                x: dot.x,
                y: dot.y,
                width,
                height,
            });
        }
        let color = dot.color.map(crate::raster::clamp_unit);
        for y in dot.y.saturating_sub(half)..(dot.y + half).min(height) {
            for x in dot.x.saturating_sub(half)..(dot.x + half).min(width) {
                let i = (y as usize * width as usize + x as usize) * 4;
                data[i..i + 3].copy_from_slice(&color);
                data[i + 3] = 1.0;
            }
        }
    }
    Ok(ImageBuffer::new(width, height, 4, data)?)
}

/// Recovers hints from a painted RGBA layer: each 4-connected component of
/// pixels with alpha > 0 becomes one dot at its rounded centroid carrying the
/// component's mean color. Dots are ordered by their first pixel in raster
/// order.
pub fn parse_hint_layer(layer: &ImageBuffer) -> Result<HintSet, MapError> {
    if layer.channels() != 4 {
        return Err(MapError::Channels {
            what: "hint layer",
            expected: "4",
            channels: layer.channels(),
        });
    }
    let (w, h) = (layer.width() as usize, layer.height() as usize);
    let painted: Vec<bool> = layer.pixels().map(|p| p[3] > 0.0).collect();
    let mut seen = vec![false; w * h];
    let mut dots = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !painted[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut n, mut sx, mut sy) = (0usize, 0.0f64, 0.0f64);
        let mut color = [0.0f64; 3];
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            n += 1;
            sx += x as f64;
            sy += y as f64;
            let px = &layer.data()[i * 4..i * 4 + 3];
            for (acc, &v) in color.iter_mut().zip(px) {
                *acc += f64::from(v);
            }
            let neighbours = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for j in neighbours.into_iter().flatten() {
                if painted[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        let n_f = n as f64;
        dots.push(HintDot {
            x: (sx / n_f).round() as u32,
            y: (sy / n_f).round() as u32,
            color: color.map(|c| (c / n_f) as f32),
        });
    }
    Ok(HintSet { dots })
}

// Label maps

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub name: String,
    pub color: [u8; 3],
}

impl ClassInfo {
    pub fn new(name: impl Into<String>, color: [u8; 3]) -> Self {
        Self {
            name: name.into(),
            color,
        }
    }
}

/// Class id to (name, display color); ids are indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    classes: Vec<ClassInfo>,
}

/// Face-parsing classes, id 0 = background.
pub const FACE_CLASSES: [&str; 19] = [
    "background",
    "skin",
    "left eyebrow",
    "right eyebrow",
    "left eye",
    "right eye",
    "eyeglasses",
    "left ear",
    "right ear",
    "earring",
    "nose",
    "mouth",
    "upper lip",
    "lower lip",
    "neck",
    "necklace",
    "cloth",
    "hair",
    "hat",
];

/// Id of the hair class in the face-parsing palette.
pub const FACE_HAIR: u8 = 17;

/// Pascal VOC object classes, ids 1..=20 in this order; id 0 = background.
pub const VOC_CLASSES: [&str; 21] = [
    "background",
    "person",
    "bird",
    "cat",
    "cow",
    "dog",
    "horse",
    "sheep",
    "aeroplane",
    "bicycle",
    "boat",
    "bus",
    "car",
    "motorbike",
    "train",
    "bottle",
    "chair",
    "dining table",
    "potted plant",
    "sofa",
    "tv/monitor",
];

const FACE_COLORS: [[u8; 3]; 19] = [
    [0, 0, 0],
    [255, 0, 0],
    [255, 85, 0],
    [255, 170, 0],
    [255, 0, 85],
    [255, 0, 170],
    [0, 255, 0],
    [85, 255, 0],
    [170, 255, 0],
    [0, 255, 85],
    [0, 255, 170],
    [0, 0, 255],
    [85, 0, 255],
    [170, 0, 255],
    [0, 85, 255],
    [0, 170, 255],
    [255, 255, 0],
    [255, 255, 85],
    [255, 255, 170],
];

/// The usual VOC bit-interleaved color map.
fn voc_color(id: usize) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = id;
    for j in 0..8 {
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v |= (((c >> ch) & 1) as u8) << (7 - j);
        }
        c >>= 3;
    }
    rgb
}

impl Palette {
    pub fn new(classes: Vec<ClassInfo>) -> Result<Self, MapError> {
        if classes.is_empty() {
            return Err(MapError::Palette("palette must contain at least one class"));
        }
        if classes.len() > 256 {
            return Err(MapError::Palette("palette is limited to 256 classes"));
        }
        Ok(Self { classes })
    }

    pub fn face_parsing() -> Self {
        Self {
            classes: FACE_CLASSES
                .iter()
                .zip(FACE_COLORS)
                .map(|(n, c)| ClassInfo::new(*n, c))
                .collect(),
        }
    }

    pub fn pascal_voc() -> Self {
        Self {
            classes: VOC_CLASSES
                .iter()
                .enumerate()
                .map(|(i, n)| ClassInfo::new(*n, voc_color(i)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, id: u8) -> Option<&ClassInfo> {
        self.classes.get(id as usize)
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.classes
            .iter()
            .position(|c| c.name == name)
            .map(|i| i as u8)
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }
}

/// Per-pixel class ids with their palette.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u8>,
    palette: Palette,
}

impl LabelMap {
    pub fn new(
        width: u32,
        height: u32,
        labels: Vec<u8>,
        palette: Palette,
    ) -> Result<Self, MapError> {
        if width == 0 || height == 0 || labels.len() != width as usize * height as usize {
            return Err(MapError::DimensionMismatch(format!(
                "{} labels for {width}x{height}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= palette.len()) {
            return Err(MapError::UnknownClass {
                id: bad.into(),
                classes: palette.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
            palette,
        })
    }

    /// Reads class ids stored as 8-bit values (`id / 255`) in the first
    /// channel of a raster.
    pub fn from_buffer(buffer: &ImageBuffer, palette: Palette) -> Result<Self, MapError> {
        let labels = buffer.pixels().map(|p| unit_to_u8(p[0])).collect();
        Self::new(buffer.width(), buffer.height(), labels, palette)
    }

    /// Reads a `(1, H, W)` tensor of integral class ids.
    pub fn from_tensor(tensor: &Tensor, palette: Palette) -> Result<Self, MapError> {
        let (c, h, w) = tensor.chw().ok_or_else(|| {
            MapError::DimensionMismatch(format!("label tensor shape {:?}", tensor.shape()))
        })?;
        if c != 1 {
            return Err(MapError::Channels {
                what: "label map",
                expected: "1",
                channels: c,
            });
        }
        let mut labels = Vec::with_capacity(h * w);
        for &v in tensor.data() {
            if !(v >= 0.0 && v.fract() == 0.0 && (v as usize) < palette.len()) {
                return Err(MapError::Parameter(format!(
                    "label value {v} is not a class id of a {}-class palette",
                    palette.len()
                )));
            }
            labels.push(v as u8);
        }
        Self::new(w as u32, h as u32, labels, palette)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    /// Single-channel raster with `id / 255`, the 8-bit on-disk encoding.
    pub fn to_buffer(&self) -> ImageBuffer {
        ImageBuffer::from_u8(self.width, self.height, 1, &self.labels).expect("valid dimensions")
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, self.height as usize, self.width as usize],
            self.labels.iter().map(|&l| f32::from(l)).collect(),
        )
        .expect("shape matches")
    }

    /// RGB visualization using the palette's display colors.
    pub fn to_color_buffer(&self) -> ImageBuffer {
        let bytes: Vec<u8> = self
            .labels
            .iter()
            .flat_map(|&l| self.palette.classes[l as usize].color)
            .collect();
        ImageBuffer::from_u8(self.width, self.height, 3, &bytes).expect("valid dimensions")
    }
}

/// Weight 1 where the label is one of `class_ids`, 0 elsewhere.
pub fn class_mask(map: &LabelMap, class_ids: &[u32]) -> Result<RegionMask, MapError> {
    let classes = map.palette().len();
    let mut selected = vec![false; classes];
    for &id in class_ids {
        if id as usize >= classes {
            return Err(MapError::UnknownClass { id, classes });
        }
        selected[id as usize] = true;
    }
    let weights = map
        .labels()
        .iter()
        .map(|&l| if selected[l as usize] { 1.0 } else { 0.0 })
        .collect();
    Ok(RegionMask::new(map.width(), map.height(), weights)?)
}

// Disparity

/// Relative inverse depth (larger = closer), arbitrary non-negative scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl DisparityMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, MapError> {
        if width == 0 || height == 0 || values.len() != width as usize * height as usize {
            return Err(MapError::DimensionMismatch(format!(
                "{} disparity values for {width}x{height}",
                values.len()
            )));
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(MapError::Disparity { index, value });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// First channel of a raster.
    pub fn from_buffer(buffer: &ImageBuffer) -> Self {
        Self {
            width: buffer.width(),
            height: buffer.height(),
            values: buffer.pixels().map(|p| p[0]).collect(),
        }
    }

    pub fn from_tensor(tensor: &Tensor) -> Result<Self, MapError> {
        match tensor.chw() {
            Some((1, h, w)) => Self::new(w as u32, h as u32, tensor.data().to_vec()),
            _ => Err(MapError::DimensionMismatch(format!(
                "disparity tensor must be (1, H, W), got {:?}",
                tensor.shape()
            ))),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Min-max normalization into `[0, 1]`; a constant map becomes all 0.5.
pub fn normalize_disparity(d: &DisparityMap) -> ImageBuffer {
    let (min, max) = d
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(f64::from(v)), hi.max(f64::from(v)))
        });
    let range = max - min;
    let data = d
        .values
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((f64::from(v) - min) / range).clamp(0.0, 1.0) as f32
            } else {
                0.5
            }
        })
        .collect();
    ImageBuffer::new(d.width, d.height, 1, data).expect("normalized values")
}

/// Screen blend `1 - (1 - a)(1 - b)`.
pub fn screen(a: f32, b: f32) -> f32 {
    1.0 - (1.0 - a) * (1.0 - b)
}

/// The light layer used by [`relight`]: normalized disparity, inverted and
/// tinted with `hue`/`saturation`.
pub fn light_layer(d: &DisparityMap, hue: f64, saturation: f64) -> Result<ImageBuffer, MapError> {
    Ok(colorize(&invert(&normalize_disparity(d)), hue, saturation)?)
}

/// Mixes `image` with its screen blend against the disparity light layer:
/// `out = (1 - strength) * image + strength * screen(image, light)`.
///
/// Evaluated as `image + strength * light * (1 - image)`, which is the same
/// expression rearranged so that `strength = 0` and a black light are exact
/// identities and the result is monotone in `strength`.
pub fn relight(
    image: &ImageBuffer,
    d: &DisparityMap,
    hue: f64,
    saturation: f64,
    strength: f64,
) -> Result<ImageBuffer, MapError> {
    if image.width() != d.width() || image.height() != d.height() {
        return Err(MapError::DimensionMismatch(format!(
            "image is {}x{}, disparity is {}x{}",
            image.width(),
            image.height(),
            d.width(),
            d.height()
        )));
    }
    if !(0.0..=1.0).contains(&strength) {
        return Err(MapError::Parameter(format!(
            "strength {strength} is outside [0, 1]"
        )));
    }
    let light = light_layer(d, hue, saturation)?;
    let base = if image.channels() == 1 {
        image.to_channels(3)?
    } else {
        image.clone()
    };
    let s = strength as f32;
    let c = base.channels();
    let data = base
        .data()
        .chunks_exact(c)
        .zip(light.pixels())
        .flat_map(|(px, l)| {
            px.iter().enumerate().map(move |(ch, &a)| {
                if ch < 3 {
                    (a + s * (l[ch] * (1.0 - a))).clamp(0.0, 1.0)
                } else {
                    a
                }
            })
        })
        .collect();
    Ok(ImageBuffer::new(base.width(), base.height(), c, data)?)
}
