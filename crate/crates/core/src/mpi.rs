//! Multiplane images and plane-sweep volumes.
//!
//! Planes are fronto-parallel in the reference camera and spaced linearly in
//! disparity. Index 0 is the farthest plane.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, PinholeCamera};
use crate::image::{DepthMap, ImageRGBA};

pub const DEFAULT_PLANES: usize = 64;
pub const DEFAULT_Z_NEAR: f64 = 1.0;
pub const DEFAULT_Z_FAR: f64 = 100.0;

/// `count` disparities from `1/z_far` to `1/z_near`, ascending.
pub fn plane_disparities(count: usize, z_near: f64, z_far: f64) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::domain(format!("need at least 2 planes, got {count}")));
    }
    if !(z_near > 0.0 && z_far > z_near && z_far.is_finite()) {
        return Err(Error::domain(format!(
            "invalid depth range: z_near = {z_near}, z_far = {z_far}"
        )));
    }
    let (d0, d1) = (1.0 / z_far, 1.0 / z_near);
    Ok((0..count)
        .map(|i| d0 + (d1 - d0) * i as f64 / (count - 1) as f64)
        .collect())
}

fn check_disparities(disparities: &[f64]) -> Result<()> {
    if disparities.len() < 2 {
        return Err(Error::domain("need at least 2 planes"));
    }
    if !(disparities[0] > 0.0 && disparities.iter().all(|d| d.is_finite())) {
        return Err(Error::domain("disparities must be positive and finite"));
    }
    if disparities.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("disparities must be strictly increasing"));
    }
    Ok(())
}

fn check_planes(reference: &PinholeCamera, planes: &[ImageRGBA], count: usize) -> Result<()> {
    if planes.len() != count {
        return Err(Error::dimension(format!(
            "{} planes for {count} disparities",
            planes.len()
        )));
    }
    for (i, p) in planes.iter().enumerate() {
        if p.width() != reference.width || p.height() != reference.height {
            return Err(Error::dimension(format!(
                "plane {i} is {}x{}, reference is {}x{}",
                p.width(),
                p.height(),
                reference.width,
                reference.height
            )));
        }
    }
    Ok(())
}

/// Layered RGBA scene representation in a reference frustum.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplaneImage {
    reference: PinholeCamera,
    planes: Vec<ImageRGBA>,
    disparities: Vec<f64>,
}

impl MultiplaneImage {
    pub fn new(reference: PinholeCamera, planes: Vec<ImageRGBA>, disparities: Vec<f64>) -> Result<Self> {
        check_disparities(&disparities)?;
        check_planes(&reference, &planes, disparities.len())?;
        Ok(Self {
            reference,
            planes,
            disparities,
        })
    }

    pub fn reference(&self) -> &PinholeCamera {
        &self.reference
    }

    pub fn planes(&self) -> &[ImageRGBA] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [ImageRGBA] {
        &mut self.planes
    }

    pub fn disparities(&self) -> &[f64] {
        &self.disparities
    }

    pub fn depth(&self, plane: usize) -> f64 {
        1.0 / self.disparities[plane]
    }

    pub fn num_planes(&self) -> usize {
        self.planes.len()
    }

    pub fn z_near(&self) -> f64 {
        1.0 / self.disparities[self.disparities.len() - 1]
    }

    pub fn z_far(&self) -> f64 {
        1.0 / self.disparities[0]
    }

    /// Whether the disparities are evenly spaced (to a relative 1e-6).
    pub fn is_uniform(&self) -> bool {
        let d = &self.disparities;
        let step = (d[d.len() - 1] - d[0]) / (d.len() - 1) as f64;
        d.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-6 * step)
    }
}

/// Source image resampled into the reference frustum at a sweep of depths.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSweepVolume {
    reference: PinholeCamera,
    slices: Vec<ImageRGBA>,
    disparities: Vec<f64>,
}

impl PlaneSweepVolume {
    pub fn reference(&self) -> &PinholeCamera {
        &self.reference
    }

    pub fn slices(&self) -> &[ImageRGBA] {
        &self.slices
    }

    pub fn disparities(&self) -> &[f64] {
        &self.disparities
    }

    /// Reinterprets the sweep as a multiplane image (slice alpha = validity).
    pub fn into_mpi(self) -> MultiplaneImage {
        MultiplaneImage {
            reference: self.reference,
            planes: self.slices,
            disparities: self.disparities,
        }
    }
}

/// Homography taking reference-image pixels to source-image pixels for the
/// plane `z = depth` in the reference camera frame.
///
/// With `(R, t)` the source-from-reference motion, a point `X` on the plane
/// satisfies `nᵀX = depth`, so `R X + t = (R + t nᵀ / depth) X`.
pub fn plane_homography(reference: &PinholeCamera, source: &PinholeCamera, depth: f64) -> Result<Mat3> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(depth));
    }
    let rel = source.pose.inverse().compose(&reference.pose);
    let n = Vector3::new(0.0, 0.0, 1.0);
    let plane = rel.rotation() + rel.translation() * n.transpose() / depth;
    let k_ref_inv = reference.intrinsic_matrix().try_inverse().ok_or(Error::Singular)?;
    Ok(source.intrinsic_matrix() * plane * k_ref_inv)
}

/// Applies a homography to continuous pixel coordinates. Returns `None` when
/// the mapped point lies behind the destination camera.
#[inline]
pub fn apply_homography(h: &Mat3, u: f64, v: f64) -> Option<(f64, f64)> {
    let x = h[(0, 0)] * u + h[(0, 1)] * v + h[(0, 2)];
    let y = h[(1, 0)] * u + h[(1, 1)] * v + h[(1, 2)];
    let w = h[(2, 0)] * u + h[(2, 1)] * v + h[(2, 2)];
    if w <= 1e-12 {
        return None;
    }
    Some((x / w, y / w))
}

/// Warps `src_img` into the reference frustum at `planes` depths between
/// `z_near` and `z_far`. Slice alpha is 1 where the warp lands inside the
/// source image and 0 elsewhere.
pub fn build_psv(
    ref_img: &ImageRGBA,
    reference: &PinholeCamera,
    src_img: &ImageRGBA,
    source: &PinholeCamera,
    planes: usize,
    z_near: f64,
    z_far: f64,
) -> Result<PlaneSweepVolume> {
    let disparities = plane_disparities(planes, z_near, z_far)?;
    check_image(ref_img, reference, "reference")?;
    check_image(src_img, source, "source")?;
    let (w, h) = (reference.width, reference.height);
    let slices = disparities
        .par_iter()
        .map(|&disp| {
            let hom = plane_homography(reference, source, 1.0 / disp)?;
            let mut slice = ImageRGBA::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let sample = apply_homography(&hom, x as f64 + 0.5, y as f64 + 0.5)
                        .and_then(|(us, vs)| src_img.sample_bilinear(us, vs));
                    if let Some(c) = sample {
                        slice.set(x, y, [c[0] as f32, c[1] as f32, c[2] as f32, 1.0]);
                    }
                }
            }
            Ok(slice)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlaneSweepVolume {
        reference: *reference,
        slices,
        disparities,
    })
}

fn check_image(img: &ImageRGBA, cam: &PinholeCamera, what: &str) -> Result<()> {
    if img.width() != cam.width || img.height() != cam.height {
        return Err(Error::dimension(format!(
            "{what} image is {}x{} but camera is {}x{}",
            img.width(),
            img.height(),
            cam.width,
            cam.height
        )));
    }
    Ok(())
}

/// Builds an MPI from a per-pixel depth map.
///
/// Each pixel's disparity is split between its two bracketing planes: the
/// farther one gets alpha 1 and the nearer one gets the interpolation weight,
/// so back-to-front compositing reproduces the pixel. Every plane carries the
/// pixel's RGB; alpha alone encodes geometry.
pub fn mpi_from_depth(
    img: &ImageRGBA,
    depth: &DepthMap,
    cam: &PinholeCamera,
    planes: usize,
    z_near: f64,
    z_far: f64,
) -> Result<MultiplaneImage> {
    let disparities = plane_disparities(planes, z_near, z_far)?;
    check_image(img, cam, "input")?;
    if depth.width() != cam.width || depth.height() != cam.height {
        return Err(Error::dimension("depth map does not match camera"));
    }
    if let Some(bad) = depth.values().iter().find(|d| !(**d > 0.0)) {
        return Err(Error::domain(format!("nonpositive depth entry {bad}")));
    }
    let d0 = disparities[0];
    let step = (disparities[planes - 1] - d0) / (planes - 1) as f64;
    let mut layers: Vec<ImageRGBA> = (0..planes)
        .map(|_| {
            let mut p = img.clone();
            p.pixels_mut().iter_mut().for_each(|px| px[3] = 0.0);
            p
        })
        .collect();
    for y in 0..cam.height {
        for x in 0..cam.width {
            let z = (depth.get(x, y) as f64).clamp(z_near, z_far);
            let mut k = ((1.0 / z - d0) / step).clamp(0.0, (planes - 1) as f64);
            if (k - k.round()).abs() < 1e-6 {
                k = k.round();
            }
            let far = (k.floor() as usize).min(planes - 1);
            let weight = k - far as f64;
            layers[far].pixels_mut()[y * cam.width + x][3] = 1.0;
            if far + 1 < planes && weight > 0.0 {
                layers[far + 1].pixels_mut()[y * cam.width + x][3] = weight as f32;
            }
        }
    }
    MultiplaneImage::new(*cam, layers, disparities)
}

/// Per-plane scalar map (blend weights or alphas), row-major.
pub type ScalarPlane = Vec<f32>;

/// Background + blending-weights parameterization.
///
/// The background is the mean RGB of `raw_rgb` over all planes; each plane's
/// color is `w · ref_img + (1 − w) · background`.
pub fn apply_blend_parameterization(
    reference: &PinholeCamera,
    disparities: Vec<f64>,
    ref_img: &ImageRGBA,
    raw_rgb: &[ImageRGBA],
    weights: &[ScalarPlane],
    alphas: &[ScalarPlane],
) -> Result<MultiplaneImage> {
    let count = disparities.len();
    check_image(ref_img, reference, "reference")?;
    check_planes(reference, raw_rgb, count)?;
    let n = reference.width * reference.height;
    for (name, set) in [("weights", weights), ("alphas", alphas)] {
        if set.len() != count || set.iter().any(|p| p.len() != n) {
            return Err(Error::dimension(format!("{name} must be {count} planes of {n} values")));
        }
        if set.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain(format!("{name} must lie in [0, 1]")));
        }
    }
    let mut background = vec![[0.0f64; 3]; n];
    for plane in raw_rgb {
        for (b, px) in background.iter_mut().zip(plane.pixels()) {
            for c in 0..3 {
                b[c] += px[c] as f64;
            }
        }
    }
    background
        .iter_mut()
        .for_each(|b| b.iter_mut().for_each(|v| *v /= count as f64));

    let planes = (0..count)
        .map(|i| {
            let data = (0..n)
                .map(|j| {
                    let w = weights[i][j] as f64;
                    let r = ref_img.pixels()[j];
                    let b = background[j];
                    let mix = |c: usize| (w * r[c] as f64 + (1.0 - w) * b[c]) as f32;
                    [mix(0), mix(1), mix(2), alphas[i][j]]
                })
                .collect();
            ImageRGBA::from_pixels(reference.width, reference.height, data)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiplaneImage::new(*reference, planes, disparities)
}

/// Over operator on straight (non-premultiplied) color: `c·α + dst·(1−α)`,
/// with coverage accumulated in the fourth channel.
#[inline]
pub fn over(dst: [f64; 4], rgb: [f64; 3], alpha: f64) -> [f64; 4] {
    let keep = 1.0 - alpha;
    [
        rgb[0] * alpha + dst[0] * keep,
        rgb[1] * alpha + dst[1] * keep,
        rgb[2] * alpha + dst[2] * keep,
        alpha + dst[3] * keep,
    ]
}

/// Renders the MPI from `target` by warping each plane through its
/// homography and compositing back to front over transparent black.
pub fn render_mpi(mpi: &MultiplaneImage, target: &PinholeCamera) -> Result<ImageRGBA> {
    let inverse_homographies = (0..mpi.num_planes())
        .map(|i| {
            plane_homography(&mpi.reference, target, mpi.depth(i))?
                .try_inverse()
                .ok_or(Error::Singular)
        })
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (target.width, target.height);
    let mut out = vec![[0.0f32; 4]; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, dst) in row.iter_mut().enumerate() {
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut acc = [0.0f64; 4];
            for (plane, hinv) in mpi.planes.iter().zip(&inverse_homographies) {
                let Some((ur, vr)) = apply_homography(hinv, u, v) else {
                    continue;
                };
                let Some(s) = plane.sample_bilinear(ur, vr) else {
                    continue;
                };
                acc = over(acc, [s[0], s[1], s[2]], s[3]);
            }
            *dst = [acc[0] as f32, acc[1] as f32, acc[2] as f32, acc[3].clamp(0.0, 1.0) as f32];
        }
    });
    ImageRGBA::from_pixels(w, h, out)
}
