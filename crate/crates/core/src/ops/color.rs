use super::OpsError;
use crate::raster::{luma, ImageBuffer};

/// Single-channel Rec. 601 luma. Alpha, if any, is discarded.
pub fn grayscale(image: &ImageBuffer) -> ImageBuffer {
    match image.channels() {
        1 => image.clone(),
        _ => image
            .map_pixels(1, |src, dst| dst[0] = luma([src[0], src[1], src[2]]))
            .expect("dimensions already validated"),
    }
}

/// Three-channel gray (R = G = B = luma); alpha is kept for RGBA input.
pub fn desaturate(image: &ImageBuffer) -> ImageBuffer {
    let out_channels = if image.has_alpha() { 4 } else { 3 };
    image
        .map_pixels(out_channels, |src, dst| {
            let y = if src.len() == 1 {
                src[0]
            } else {
                luma([src[0], src[1], src[2]])
            };
            dst[..3].fill(y);
            if src.len() == 4 {
                dst[3] = src[3];
            }
        })
        .expect("dimensions already validated")
}

/// `v -> 1 - v` on color channels; alpha untouched.
pub fn invert(image: &ImageBuffer) -> ImageBuffer {
    let colors = image.color_channels();
    image
        .map_pixels(image.channels(), |src, dst| {
            for (c, (s, d)) in src.iter().zip(dst.iter_mut()).enumerate() {
                *d = if c < colors { 1.0 - s } else { *s };
            }
        })
        .expect("dimensions already validated")
}

/// Tints a gray image: each pixel becomes HSL(hue, saturation, gray).
pub fn colorize(gray: &ImageBuffer, hue: f64, saturation: f64) -> Result<ImageBuffer, OpsError> {
    if gray.channels() != 1 {
        return Err(OpsError::Channels {
            op: "colorize",
            channels: gray.channels(),
        });
    }
    let s = saturation.clamp(0.0, 1.0);
    Ok(gray.map_pixels(3, |src, dst| {
        let rgb = hsl_to_rgb(hue, s, f64::from(src[0]));
        for (d, v) in dst.iter_mut().zip(rgb) {
            *d = v as f32;
        }
    })?)
}

/// Shifts hue (degrees, modular), scales saturation and offsets lightness in
/// HSL space. Alpha is preserved.
pub fn hue_saturation(
    image: &ImageBuffer,
    hue_shift: f64,
    sat_scale: f64,
    lightness_shift: f64,
) -> Result<ImageBuffer, OpsError> {
    if image.channels() < 3 {
        return Err(OpsError::Channels {
            op: "hue_saturation",
            channels: image.channels(),
        });
    }
    let sat_scale = sat_scale.max(0.0);
    let hue_shift = hue_shift.rem_euclid(360.0);
    Ok(image.map_pixels(image.channels(), |src, dst| {
        let (h, s, l) = rgb_to_hsl([src[0], src[1], src[2]].map(f64::from));
        let rgb = hsl_to_rgb(
            h + hue_shift,
            (s * sat_scale).clamp(0.0, 1.0),
            (l + lightness_shift).clamp(0.0, 1.0),
        );
        for (d, v) in dst.iter_mut().zip(rgb) {
            *d = v as f32;
        }
        if src.len() == 4 {
            dst[3] = src[3];
        }
    })?)
}

/// RGB in `[0, 1]` to (hue degrees in `[0, 360)`, saturation, lightness).
pub fn rgb_to_hsl(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let l = (max + min) / 2.0;
    let d = max - min;
    if d == 0.0 {
        return (0.0, 0.0, l);
    }
    let s = d / (1.0 - (2.0 * l - 1.0).abs());
    let h = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    (h.rem_euclid(360.0), s.min(1.0), l)
}

pub fn hsl_to_rgb(hue: f64, saturation: f64, lightness: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = (1.0 - (2.0 * lightness - 1.0).abs()) * saturation;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let m = lightness - c / 2.0;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m].map(|v| v.clamp(0.0, 1.0))
}
