use super::OpsError;
use crate::raster::ImageBuffer;

/// Per-pixel coverage weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    width: u32,
    height: u32,
    weights: Vec<f32>,
}

impl RegionMask {
    pub fn new(width: u32, height: u32, weights: Vec<f32>) -> Result<Self, OpsError> {
        let expected = width as usize * height as usize;
        if width == 0 || height == 0 || weights.len() != expected {
            return Err(OpsError::DimensionMismatch(format!(
                "mask of {width}x{height} needs {expected} weights, got {}",
                weights.len()
            )));
        }
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(0.0..=1.0).contains(*w))
        {
            return Err(OpsError::MaskWeight { index, value });
        }
        Ok(Self {
            width,
            height,
            weights,
        })
    }

    pub fn filled(width: u32, height: u32, weight: f32) -> Result<Self, OpsError> {
        Self::new(
            width,
            height,
            vec![weight; width as usize * height as usize],
        )
    }

    /// Coverage taken from a layer: the alpha channel of RGBA buffers, the
    /// value of single-channel buffers, and luma otherwise.
    pub fn from_buffer(buffer: &ImageBuffer) -> Self {
        let weights = match buffer.channels() {
            4 => buffer.pixels().map(|p| p[3]).collect(),
            _ => buffer.to_channels(1).expect("valid buffer").into_data(),
        };
        Self {
            width: buffer.width(),
            height: buffer.height(),
            weights,
        }
    }

    /// `1 - w` everywhere.
    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            weights: self.weights.iter().map(|w| 1.0 - w).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn to_buffer(&self) -> ImageBuffer {
        ImageBuffer::new(self.width, self.height, 1, self.weights.clone()).expect("validated mask")
    }
}

/// Blends `processed` over `base` per pixel: `w * processed + (1 - w) * base`.
pub fn selective_apply(
    base: &ImageBuffer,
    processed: &ImageBuffer,
    mask: &RegionMask,
) -> Result<ImageBuffer, OpsError> {
    if !base.same_dimensions(processed) || base.channels() != processed.channels() {
        return Err(OpsError::DimensionMismatch(format!(
            "base is {}x{}x{}, processed is {}x{}x{}",
            base.width(),
            base.height(),
            base.channels(),
            processed.width(),
            processed.height(),
            processed.channels()
        )));
    }
    if mask.width() != base.width() || mask.height() != base.height() {
        return Err(OpsError::DimensionMismatch(format!(
            "image is {}x{}, mask is {}x{}",
            base.width(),
            base.height(),
            mask.width(),
            mask.height()
        )));
    }
    let c = base.channels();
    let data = base
        .data()
        .chunks_exact(c)
        .zip(processed.data().chunks_exact(c))
        .zip(mask.weights())
        .flat_map(|((b, p), &w)| {
            b.iter()
                .zip(p)
                .map(move |(&b, &p)| (w * p + (1.0 - w) * b).clamp(0.0, 1.0))
        })
        .collect();
    Ok(ImageBuffer::new(base.width(), base.height(), c, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn blend_endpoints_and_midpoint() {
        let base = ImageBuffer::filled(3, 2, 3, 0.0).unwrap();
        let proc = ImageBuffer::filled(3, 2, 3, 1.0).unwrap();
        let zero = RegionMask::filled(3, 2, 0.0).unwrap();
        let one = RegionMask::filled(3, 2, 1.0).unwrap();
        let quarter = RegionMask::filled(3, 2, 0.25).unwrap();
        assert_eq!(selective_apply(&base, &proc, &zero).unwrap(), base);
        assert_eq!(selective_apply(&base, &proc, &one).unwrap(), proc);
        assert!(selective_apply(&base, &proc, &quarter)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.25));
    }

    #[test]
    fn mismatches_are_errors() {
        let a = ImageBuffer::filled(3, 2, 3, 0.0).unwrap();
        let b = ImageBuffer::filled(2, 3, 3, 0.0).unwrap();
        let m = RegionMask::filled(3, 2, 1.0).unwrap();
        assert!(matches!(
            selective_apply(&a, &b, &m),
            Err(OpsError::DimensionMismatch(_))
        ));
        let small = RegionMask::filled(1, 1, 1.0).unwrap();
        assert!(selective_apply(&a, &a, &small).is_err());
        assert!(RegionMask::new(2, 2, vec![0.0, 0.5, 1.5, 0.0]).is_err());
    }

    #[test]
    fn mask_from_alpha() {
        let rgba = ImageBuffer::new(2, 1, 4, vec![1.0, 0.0, 0.0, 0.3, 0.0, 1.0, 0.0, 0.9]).unwrap();
        assert_eq!(RegionMask::from_buffer(&rgba).weights(), &[0.3, 0.9]);
    }

    proptest! {
        #[test]
        fn binary_mask_is_select(
            base in prop::collection::vec(0.0f32..=1.0, 3 * 8),
            proc in prop::collection::vec(0.0f32..=1.0, 3 * 8),
            bits in prop::collection::vec(any::<bool>(), 8),
        ) {
            let b = ImageBuffer::new(4, 2, 3, base).unwrap();
            let p = ImageBuffer::new(4, 2, 3, proc).unwrap();
            let m = RegionMask::new(4, 2, bits.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect()).unwrap();
            let out = selective_apply(&b, &p, &m).unwrap();
            for (i, &sel) in bits.iter().enumerate() {
                let (x, y) = ((i % 4) as u32, (i / 4) as u32);
                let expect = if sel { p.pixel(x, y) } else { b.pixel(x, y) };
                prop_assert_eq!(out.pixel(x, y), expect);
            }
        }
    }
}
