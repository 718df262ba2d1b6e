//! Float RGBA images, single-channel depth maps and gamma handling.

use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 2.2;

/// Row-major linear RGB + alpha image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGBA {
    width: usize,
    height: usize,
    data: Vec<[f32; 4]>,
}

impl ImageRGBA {
    /// Transparent black image.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 4]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: [f32; 4]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Wraps raw pixels, validating finiteness, RGB ≥ 0 and alpha ∈ [0, 1].
    pub fn from_pixels(width: usize, height: usize, data: Vec<[f32; 4]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dimension(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        for px in &data {
            if !px.iter().all(|v| v.is_finite()) || px[..3].iter().any(|&v| v < 0.0) {
                return Err(Error::domain("RGB must be finite and non-negative"));
            }
            if !(0.0..=1.0).contains(&px[3]) {
                return Err(Error::domain(format!("alpha {} outside [0, 1]", px[3])));
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 4]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f32; 4]] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [[f32; 4]] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<[f32; 4]> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 4] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f32; 4]) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &ImageRGBA) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// RGB channels widened to f64.
    pub fn rgb(&self) -> Vec<[f64; 3]> {
        self.data
            .iter()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect()
    }

    /// Mean of all RGB values.
    pub fn mean_rgb(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let s: f64 = self.data.iter().map(|p| (p[0] + p[1] + p[2]) as f64).sum();
        s / (3 * self.data.len()) as f64
    }

    /// Bilinear taps for continuous coordinates `(u, v)` with edge clamping.
    /// Returns `None` outside `[0, width] × [0, height]`.
    #[inline]
    pub fn bilinear_taps(&self, u: f64, v: f64) -> Option<[(usize, f64); 4]> {
        bilinear_taps(self.width, self.height, u, v)
    }

    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<[f64; 4]> {
        let taps = self.bilinear_taps(u, v)?;
        let mut out = [0.0; 4];
        for (idx, w) in taps {
            let p = self.data[idx];
            for c in 0..4 {
                out[c] += w * p[c] as f64;
            }
        }
        Some(out)
    }

    /// Raises RGB to `gamma`, leaving alpha untouched.
    pub fn linearize(&self, gamma: f64) -> Result<ImageRGBA> {
        self.map_rgb(|v| v.powf(gamma))
    }

    /// Raises RGB to `1 / gamma`.
    pub fn delinearize(&self, gamma: f64) -> Result<ImageRGBA> {
        self.map_rgb(|v| v.powf(1.0 / gamma))
    }

    fn map_rgb(&self, f: impl Fn(f64) -> f64) -> Result<ImageRGBA> {
        let mut out = self.clone();
        for px in &mut out.data {
            for c in px.iter_mut().take(3) {
                if *c < 0.0 {
                    return Err(Error::domain(format!("negative channel value {c}")));
                }
                *c = f(*c as f64) as f32;
            }
        }
        Ok(out)
    }
}

/// Bilinear taps on a `width × height` pixel grid whose centers sit at
/// half-integers. Coordinates inside the image but beyond the outermost
/// centers clamp to the edge pixels.
#[inline]
pub(crate) fn bilinear_taps(width: usize, height: usize, u: f64, v: f64) -> Option<[(usize, f64); 4]> {
    if !(u >= 0.0 && u <= width as f64 && v >= 0.0 && v <= height as f64) {
        return None;
    }
    let (x0, x1, fx) = axis_taps(u - 0.5, width);
    let (y0, y1, fy) = axis_taps(v - 0.5, height);
    Some([
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ])
}

#[inline]
fn axis_taps(x: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let x = x.clamp(0.0, (n - 1) as f64);
    let i0 = (x.floor() as usize).min(n - 2);
    (i0, i0 + 1, x - i0 as f64)
}

/// Scalar per-pixel map, used for depth in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dimension(format!(
                "{} depth values for a {width}x{height} map",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn constant(width: usize, height: usize, depth: f32) -> Self {
        Self {
            width,
            height,
            data: vec![depth; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// Median of the finite entries (lower median for even counts).
    pub fn median(&self) -> Option<f32> {
        let mut v: Vec<f32> = self.data.iter().copied().filter(|d| d.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        let mid = (v.len() - 1) / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, f32::total_cmp);
        Some(*m)
    }
}
