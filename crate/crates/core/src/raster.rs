//! Pixel buffers, layers and the layer stack.
//!
//! Pixels are stored as normalized `f32` intensities in `[0, 1]`, row-major
//! with interleaved channels. Four-channel buffers carry straight
//! (non-premultiplied) alpha in the last channel. Quantization to 8 bits only
//! happens at file boundaries, see [`ImageBuffer::from_u8`] and
//! [`ImageBuffer::to_u8`].

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("unsupported channel count {0}")]
    UnsupportedChannels(usize),
    #[error("buffer length {actual} does not match {expected} (width x height x channels)")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("tensor data length {actual} does not match shape {shape:?}")]
    TensorShape { shape: Vec<usize>, actual: usize },
    #[error("expected a rank-3 (channels, height, width) tensor, got shape {0:?}")]
    NotPlanarImage(Vec<usize>),
    #[error("layer name must not be empty")]
    EmptyName,
    #[error("layer opacity {0} is outside [0, 1]")]
    Opacity(f32),
    #[error("a layer named {0:?} already exists in the stack")]
    DuplicateName(String),
    #[error("cannot composite an empty layer stack")]
    EmptyStack,
}

/// Owned raster of normalized pixels.
#[derive(Clone, PartialEq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: usize,
    data: Vec<f32>,
}

impl fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

fn check_dims(width: u32, height: u32, channels: usize) -> Result<usize, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyDimensions { width, height });
    }
    if !matches!(channels, 1 | 3 | 4) {
        return Err(ImageError::UnsupportedChannels(channels));
    }
    Ok(width as usize * height as usize * channels)
}

impl ImageBuffer {
    pub fn new(
        width: u32,
        height: u32,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, ImageError> {
        let expected = check_dims(width, height, channels)?;
        if data.len() != expected {
            return Err(ImageError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Buffer with every sample set to `value` (clamped into `[0, 1]`).
    pub fn filled(
        width: u32,
        height: u32,
        channels: usize,
        value: f32,
    ) -> Result<Self, ImageError> {
        let len = check_dims(width, height, channels)?;
        Ok(Self {
            width,
            height,
            channels,
            data: vec![clamp_unit(value); len],
        })
    }

    /// Builds a buffer by evaluating `f(x, y)` for every pixel. The returned
    /// slice must hold `channels` values; they are clamped into `[0, 1]`.
    pub fn from_fn<F>(
        width: u32,
        height: u32,
        channels: usize,
        mut f: F,
    ) -> Result<Self, ImageError>
    where
        F: FnMut(u32, u32, &mut [f32]),
    {
        let len = check_dims(width, height, channels)?;
        let mut data = vec![0.0f32; len];
        for y in 0..height {
            for x in 0..width {
                let i = (y as usize * width as usize + x as usize) * channels;
                let px = &mut data[i..i + channels];
                f(x, y, px);
                for v in px.iter_mut() {
                    *v = clamp_unit(*v);
                }
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Decodes 8-bit samples as `v / 255`.
    pub fn from_u8(
        width: u32,
        height: u32,
        channels: usize,
        bytes: &[u8],
    ) -> Result<Self, ImageError> {
        let data = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
        Self::new(width, height, channels, data)
    }

    /// Encodes samples as `round(v * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| unit_to_u8(v)).collect()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn has_alpha(&self) -> bool {
        self.channels == 4
    }

    /// Number of color (non-alpha) channels.
    pub fn color_channels(&self) -> usize {
        if self.channels == 4 {
            3
        } else {
            self.channels
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn same_dimensions(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.channels)
    }

    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize * self.width as usize + x as usize) * self.channels
    }

    /// Applies `f` to every pixel, producing a buffer with `channels` output
    /// channels. Output values are clamped into `[0, 1]`.
    pub fn map_pixels<F>(&self, channels: usize, mut f: F) -> Result<Self, ImageError>
    where
        F: FnMut(&[f32], &mut [f32]),
    {
        let len = check_dims(self.width, self.height, channels)?;
        let mut data = vec![0.0f32; len];
        for (src, dst) in self.pixels().zip(data.chunks_exact_mut(channels)) {
            f(src, dst);
            for v in dst.iter_mut() {
                *v = clamp_unit(*v);
            }
        }
        Ok(Self {
            width: self.width,
            height: self.height,
            channels,
            data,
        })
    }

    /// Converts between channel layouts: gray is replicated into RGB, RGB gets
    /// an opaque alpha, alpha is dropped when narrowing, and RGB collapses to
    /// Rec. 601 luma when converting to a single channel.
    pub fn to_channels(&self, channels: usize) -> Result<Self, ImageError> {
        if channels == self.channels {
            return Ok(self.clone());
        }
        let from = self.channels;
        self.map_pixels(channels, |src, dst| {
            let (rgb, alpha) = match from {
                1 => ([src[0]; 3], 1.0),
                3 => ([src[0], src[1], src[2]], 1.0),
                _ => ([src[0], src[1], src[2]], src[3]),
            };
            match channels {
                1 => dst[0] = if from == 1 { src[0] } else { luma(rgb) },
                3 => dst.copy_from_slice(&rgb),
                _ => {
                    dst[..3].copy_from_slice(&rgb);
                    dst[3] = alpha;
                }
            }
        })
    }
}

/// Rec. 601 luma of a nonlinear sRGB triple.
pub fn luma(rgb: [f32; 3]) -> f32 {
    let y = 0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2]);
    clamp_unit(y as f32)
}

/// Clamps into `[0, 1]`, mapping NaN to 0.
pub fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

pub fn unit_to_u8(v: f32) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}

/// A named raster with opacity, visibility and a canvas offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    name: String,
    buffer: ImageBuffer,
    opacity: f32,
    visible: bool,
    offset_x: i32,
    offset_y: i32,
}

impl Layer {
    /// Opaque, visible layer at offset (0, 0).
    pub fn new(name: impl Into<String>, buffer: ImageBuffer) -> Result<Self, ImageError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ImageError::EmptyName);
        }
        Ok(Self {
            name,
            buffer,
            opacity: 1.0,
            visible: true,
            offset_x: 0,
            offset_y: 0,
        })
    }

    pub fn with_opacity(mut self, opacity: f32) -> Result<Self, ImageError> {
        if !(0.0..=1.0).contains(&opacity) {
            return Err(ImageError::Opacity(opacity));
        }
        self.opacity = opacity;
        Ok(self)
    }

    pub fn with_visible(mut self, visible: bool) -> Self {
        self.visible = visible;
        self
    }

    pub fn with_offset(mut self, offset_x: i32, offset_y: i32) -> Self {
        self.offset_x = offset_x;
        self.offset_y = offset_y;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn buffer(&self) -> &ImageBuffer {
        &self.buffer
    }

    pub fn opacity(&self) -> f32 {
        self.opacity
    }

    pub fn visible(&self) -> bool {
        self.visible
    }

    pub fn offset(&self) -> (i32, i32) {
        (self.offset_x, self.offset_y)
    }
}

/// Ordered layers over a fixed canvas, index 0 at the bottom.
///
/// Layers are shared behind [`Arc`], so deriving a new stack never copies or
/// touches pixels of the layers already present.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    width: u32,
    height: u32,
    layers: Vec<Arc<Layer>>,
}

impl LayerStack {
    pub fn new(width: u32, height: u32) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            layers: Vec::new(),
        })
    }

    /// Returns a new stack with `layer` on top.
    pub fn add_layer(&self, layer: Layer) -> Result<Self, ImageError> {
        if self.contains(layer.name()) {
            return Err(ImageError::DuplicateName(layer.name.clone()));
        }
        let mut layers = self.layers.clone();
        layers.push(Arc::new(layer));
        Ok(Self {
            width: self.width,
            height: self.height,
            layers,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn layers(&self) -> &[Arc<Layer>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Layer>> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }
}

/// Planar, channel-major float array.
///
/// Image-derived tensors have shape `(channels, height, width)`; the protocol
/// itself allows any rank.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .finish_non_exhaustive()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, ImageError> {
        let expected = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if expected != Some(data.len()) {
            return Err(ImageError::TensorShape {
                shape,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `(channels, height, width)` for rank-3 tensors.
    pub fn chw(&self) -> Option<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Some((c, h, w)),
            _ => None,
        }
    }

    /// Interleaved-to-planar conversion; with `drop_alpha` a four-channel
    /// buffer yields a three-channel tensor.
    pub fn from_buffer(buffer: &ImageBuffer, drop_alpha: bool) -> Self {
        let src_c = buffer.channels();
        let c = if drop_alpha && src_c == 4 { 3 } else { src_c };
        let plane = buffer.pixel_count();
        let mut data = vec![0.0f32; c * plane];
        for (i, px) in buffer.pixels().enumerate() {
            for ch in 0..c {
                data[ch * plane + i] = px[ch];
            }
        }
        Self {
            shape: vec![c, buffer.height() as usize, buffer.width() as usize],
            data,
        }
    }

    /// Planar-to-interleaved conversion, clamping values into `[0, 1]`.
    pub fn to_buffer(&self) -> Result<ImageBuffer, ImageError> {
        let (c, h, w) = self
            .chw()
            .ok_or_else(|| ImageError::NotPlanarImage(self.shape.clone()))?;
        let width = u32::try_from(w).map_err(|_| ImageError::NotPlanarImage(self.shape.clone()))?;
        let height =
            u32::try_from(h).map_err(|_| ImageError::NotPlanarImage(self.shape.clone()))?;
        let len = check_dims(width, height, c)?;
        let plane = h * w;
        let mut data = vec![0.0f32; len];
        for (i, px) in data.chunks_exact_mut(c).enumerate() {
            for (ch, v) in px.iter_mut().enumerate() {
                *v = clamp_unit(self.data[ch * plane + i]);
            }
        }
        Ok(ImageBuffer {
            width,
            height,
            channels: c,
            data,
        })
    }
}

pub fn to_tensor(layer: &Layer, drop_alpha: bool) -> Tensor {
    Tensor::from_buffer(layer.buffer(), drop_alpha)
}

/// Wraps a tensor as a fresh opaque layer at the origin.
pub fn from_tensor(tensor: &Tensor, name: impl Into<String>) -> Result<Layer, ImageError> {
    Layer::new(name, tensor.to_buffer()?)
}

/// Flattens the visible layers bottom-to-top with straight-alpha "over".
///
/// The effective source alpha is the pixel alpha times the layer opacity.
/// Regions not covered by a layer are transparent; layers are cropped to the
/// canvas. The result is always RGBA at canvas size.
pub fn composite(stack: &LayerStack) -> Result<ImageBuffer, ImageError> {
    if stack.is_empty() {
        return Err(ImageError::EmptyStack);
    }
    let (cw, ch) = (stack.width() as i64, stack.height() as i64);
    let mut out = vec![0.0f32; (cw * ch * 4) as usize];
    for layer in stack.layers().iter().filter(|l| l.visible()) {
        let buf = layer.buffer();
        let (ox, oy) = layer.offset();
        let x0 = i64::from(ox).max(0);
        let y0 = i64::from(oy).max(0);
        let x1 = (i64::from(ox) + i64::from(buf.width())).min(cw);
        let y1 = (i64::from(oy) + i64::from(buf.height())).min(ch);
        for y in y0..y1 {
            for x in x0..x1 {
                let src = buf.pixel((x - i64::from(ox)) as u32, (y - i64::from(oy)) as u32);
                let (rgb, a) = match src.len() {
                    1 => ([src[0]; 3], 1.0),
                    3 => ([src[0], src[1], src[2]], 1.0),
                    _ => ([src[0], src[1], src[2]], src[3]),
                };
                let dst = &mut out[((y * cw + x) * 4) as usize..][..4];
                over(dst, rgb, a * layer.opacity());
            }
        }
    }
    Ok(ImageBuffer {
        width: stack.width(),
        height: stack.height(),
        channels: 4,
        data: out,
    })
}

fn over(dst: &mut [f32], src: [f32; 3], src_alpha: f32) {
    if src_alpha <= 0.0 {
        return;
    }
    let dst_alpha = dst[3];
    if dst_alpha <= 0.0 {
        dst[..3].copy_from_slice(&src);
        dst[3] = src_alpha;
        return;
    }
    let keep = dst_alpha * (1.0 - src_alpha);
    let out_alpha = src_alpha + keep;
    for c in 0..3 {
        let v = (src_alpha * src[c] + keep * dst[c]) / out_alpha;
        dst[c] = clamp_unit(v);
    }
    dst[3] = clamp_unit(out_alpha);
}
