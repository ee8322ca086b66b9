use super::OpsError;
use crate::raster::{luma, ImageBuffer};

/// Normalized 1-D Gaussian taps for radius `ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders. `sigma == 0` returns
/// the input unchanged.
pub fn gaussian_blur(image: &ImageBuffer, sigma: f64) -> Result<ImageBuffer, OpsError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(OpsError::Sigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h, c) = (
        image.width() as i64,
        image.height() as i64,
        image.channels(),
    );
    let src = image.data();
    let at = |x: i64, y: i64| ((y * w + x) as usize) * c;

    let mut horizontal = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            let dst = at(x, y);
            for (k, tap) in kernel.iter().enumerate() {
                let sx = (x + k as i64 - radius).clamp(0, w - 1);
                let s = at(sx, y);
                for ch in 0..c {
                    horizontal[dst + ch] += tap * f64::from(src[s + ch]);
                }
            }
        }
    }

    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let dst = at(x, y);
            let mut acc = [0.0f64; 4];
            for (k, tap) in kernel.iter().enumerate() {
                let sy = (y + k as i64 - radius).clamp(0, h - 1);
                let s = at(x, sy);
                for ch in 0..c {
                    acc[ch] += tap * horizontal[s + ch];
                }
            }
            for ch in 0..c {
                out[dst + ch] = acc[ch] as f32;
            }
        }
    }
    Ok(ImageBuffer::new(
        image.width(),
        image.height(),
        c,
        out.into_iter().map(crate::raster::clamp_unit).collect(),
    )?)
}

fn luma_plane(image: &ImageBuffer) -> Vec<f32> {
    image
        .pixels()
        .map(|p| {
            if p.len() == 1 {
                p[0]
            } else {
                luma([p[0], p[1], p[2]])
            }
        })
        .collect()
}

/// Sobel gradient magnitude of the luma, scaled so the strongest edge is 1.
/// A flat image yields all zeros.
pub fn edge_detect(image: &ImageBuffer) -> ImageBuffer {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let plane = luma_plane(image);
    let p = |x: i64, y: i64| f64::from(plane[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize]);
    let mut mag = Vec::with_capacity(plane.len());
    for y in 0..h {
        for x in 0..w {
            let gx = (p(x + 1, y - 1) + 2.0 * p(x + 1, y) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2.0 * p(x - 1, y) + p(x - 1, y + 1));
            let gy = (p(x - 1, y + 1) + 2.0 * p(x, y + 1) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2.0 * p(x, y - 1) + p(x + 1, y - 1));
            mag.push(gx.hypot(gy));
        }
    }
    let max = mag.iter().copied().fold(0.0f64, f64::max);
    let data = if max > 0.0 {
        mag.iter().map(|m| (m / max) as f32).collect()
    } else {
        vec![0.0; mag.len()]
    };
    ImageBuffer::new(image.width(), image.height(), 1, data).expect("same dimensions as input")
}

/// Catmull-Rom weights for taps at offsets -1, 0, 1, 2 from `floor(x)`.
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Source taps (clamped indices) and weights for each output coordinate,
/// sampling at pixel centers.
fn resample_taps(len: usize, scale: u32) -> Vec<([usize; 4], [f64; 4])> {
    let last = len as i64 - 1;
    (0..len * scale as usize)
        .map(|o| {
            let s = (o as f64 + 0.5) / f64::from(scale) - 0.5;
            let base = s.floor();
            let weights = catmull_rom(s - base);
            let base = base as i64;
            let idx = [-1, 0, 1, 2].map(|d| (base + d).clamp(0, last) as usize);
            (idx, weights)
        })
        .collect()
}

/// Catmull-Rom bicubic upscaling by an integer factor of 2, 3 or 4.
pub fn resize_bicubic(image: &ImageBuffer, scale: u32) -> Result<ImageBuffer, OpsError> {
    if !(2..=4).contains(&scale) {
        return Err(OpsError::Scale(scale));
    }
    let (w, h, c) = (
        image.width() as usize,
        image.height() as usize,
        image.channels(),
    );
    let (ow, oh) = (w * scale as usize, h * scale as usize);
    let xs = resample_taps(w, scale);
    let ys = resample_taps(h, scale);
    let src = image.data();

    // Horizontal pass: h rows of ow pixels.
    let mut rows = vec![0.0f64; h * ow * c];
    for y in 0..h {
        for (ox, (idx, wts)) in xs.iter().enumerate() {
            let dst = (y * ow + ox) * c;
            for (&sx, &wt) in idx.iter().zip(wts) {
                let s = (y * w + sx) * c;
                for ch in 0..c {
                    rows[dst + ch] += wt * f64::from(src[s + ch]);
                }
            }
        }
    }

    let mut out = vec![0.0f32; oh * ow * c];
    for (oy, (idx, wts)) in ys.iter().enumerate() {
        for ox in 0..ow {
            let dst = (oy * ow + ox) * c;
            for ch in 0..c {
                let v: f64 = idx
                    .iter()
                    .zip(wts)
                    .map(|(&sy, &wt)| wt * rows[(sy * ow + ox) * c + ch])
                    .sum();
                out[dst + ch] = (v as f32).clamp(0.0, 1.0);
            }
        }
    }
    Ok(ImageBuffer::new(ow as u32, oh as u32, c, out)?)
}
