//! Environment-map quality metrics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{envmap_direction, Mat3, Vec3};
use crate::render::{trace_ray, RenderConfig};
use crate::volume::MultiscaleVolume;

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;
/// RGB vectors shorter than this contribute zero angular error.
pub const MIN_RGB_NORM: f64 = 1e-6;

fn check_shapes(a: &[[f64; 3]], b: &[[f64; 3]], mask: Option<&[bool]>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dimension(format!("{} vs {} pixels", a.len(), b.len())));
    }
    if let Some(m) = mask {
        if m.len() != a.len() {
            return Err(Error::dimension(format!("mask has {} entries for {} pixels", m.len(), a.len())));
        }
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over RGB; `+∞` for identical inputs.
pub fn psnr(a: &[[f64; 3]], b: &[[f64; 3]], peak: f64) -> Result<f64> {
    psnr_masked(a, b, None, peak)
}

/// PSNR restricted to pixels where `mask` is true. NaN when the mask is empty.
pub fn psnr_masked(a: &[[f64; 3]], b: &[[f64; 3]], mask: Option<&[bool]>, peak: f64) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (pa, pb)) in a.iter().zip(b).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        sum += (0..3).map(|c| (pa[c] - pb[c]).powi(2)).sum::<f64>();
        n += 3;
    }
    if n == 0 {
        return Ok(f64::NAN);
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Angle between two RGB vectors in degrees, 0 when either is near zero.
pub fn rgb_angle(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if na < MIN_RGB_NORM || nb < MIN_RGB_NORM {
        return 0.0;
    }
    // atan2 of |a×b| and a·b stays accurate near 0° where acos does not.
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    sin.atan2(dot).to_degrees()
}

/// Mean per-pixel RGB angular error in degrees.
pub fn rgb_angular_error(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    rgb_angular_error_masked(a, b, None)
}

pub fn rgb_angular_error_masked(a: &[[f64; 3]], b: &[[f64; 3]], mask: Option<&[bool]>) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (pa, pb)) in a.iter().zip(b).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        sum += rgb_angle(pa, pb);
        n += 1;
    }
    if n == 0 {
        return Ok(f64::NAN);
    }
    Ok(sum / n as f64)
}

/// Pixels of the environment map at `x` whose accumulated opacity through
/// the observed-only volume exceeds `threshold`.
pub fn observed_mask(
    observed: &MultiscaleVolume,
    x: &Vec3,
    orientation: &Mat3,
    cfg: &RenderConfig,
    threshold: f64,
) -> Result<Vec<bool>> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    Ok((0..h * w)
        .into_par_iter()
        .map(|idx| {
            let d = orientation * envmap_direction(idx / w, idx % w, h, w);
            trace_ray(observed, x, &d, cfg).opacity() > threshold
        })
        .collect())
}
