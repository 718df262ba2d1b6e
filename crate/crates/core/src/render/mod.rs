//! Environment-map rendering from a multiscale volume.
//!
//! Three renderers share one compositing contract: per-sample opacity is
//! rescaled to the step length, `a = 1 − (1 − α)^(Δs / voxel)`, and color is
//! accumulated front to back (or, equivalently, over-composited back to
//! front) onto a constant background.

mod oracle;
mod spheres;
mod vjp;

pub use oracle::{render_oracle, DEFAULT_ORACLE_STEPS};
pub use spheres::render_spheres;
pub use vjp::render_vjp;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{direction_to_pixel, envmap_direction, Mat3, Vec3};
use crate::volume::{sample_cell, MultiscaleVolume, MAX_LEVELS};

pub const ENVMAP_WIDTH: usize = 240;
pub const ENVMAP_HEIGHT: usize = 120;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub spheres_per_scale: usize,
    pub ray_steps_per_voxel: f64,
    pub transmittance_epsilon: f64,
    pub background: [f64; 3],
    /// Rescale sphere-sample opacity by shell spacing over voxel size.
    pub sphere_alpha_rescale: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: ENVMAP_WIDTH,
            height: ENVMAP_HEIGHT,
            spheres_per_scale: 128,
            ray_steps_per_voxel: 2.0,
            transmittance_epsilon: 1e-3,
            background: [0.5; 3],
            sphere_alpha_rescale: true,
        }
    }
}

impl RenderConfig {
    pub fn with_resolution(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("environment map size must be nonzero".into()));
        }
        if self.spheres_per_scale < 2 {
            return Err(Error::Config("spheres_per_scale must be at least 2".into()));
        }
        if !(self.ray_steps_per_voxel > 0.0 && self.ray_steps_per_voxel.is_finite()) {
            return Err(Error::Config("ray_steps_per_voxel must be positive".into()));
        }
        if !(self.transmittance_epsilon > 0.0 && self.transmittance_epsilon < 1.0) {
            return Err(Error::Config("transmittance_epsilon must lie in (0, 1)".into()));
        }
        if self.background.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::Config("background must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Equirectangular radiance map at a 3D point. Linear RGB, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    width: usize,
    height: usize,
    center: Vec3,
    orientation: Mat3,
    data: Vec<[f64; 3]>,
}

impl EnvironmentMap {
    pub fn new(width: usize, height: usize, center: Vec3, orientation: Mat3, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dimension(format!(
                "{} pixels for a {height}x{width} environment map",
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::domain("environment map values must be finite and non-negative"));
        }
        Ok(Self {
            width,
            height,
            center,
            orientation,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn orientation(&self) -> &Mat3 {
        &self.orientation
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }

    /// World-space direction through the center of pixel `(row, col)`.
    pub fn direction(&self, row: usize, col: usize) -> Vec3 {
        self.orientation * envmap_direction(row, col, self.height, self.width)
    }

    /// Bilinear lookup for a world-space direction; wraps in azimuth and
    /// clamps at the poles.
    pub fn lookup(&self, dir_world: &Vec3) -> [f64; 3] {
        let d = self.orientation.transpose() * dir_world;
        let (row, col) = direction_to_pixel(&d, self.height, self.width);
        let row = row.clamp(0.0, (self.height - 1) as f64);
        let r0 = row.floor() as usize;
        let r1 = (r0 + 1).min(self.height - 1);
        let fr = row - r0 as f64;
        let c0f = col.floor();
        let fc = col - c0f;
        let w = self.width as i64;
        let c0 = (c0f as i64).rem_euclid(w) as usize;
        let c1 = (c0f as i64 + 1).rem_euclid(w) as usize;
        let mut out = [0.0; 3];
        for (r, wr) in [(r0, 1.0 - fr), (r1, fr)] {
            for (c, wc) in [(c0, 1.0 - fc), (c1, fc)] {
                let p = self.get(r, c);
                for ch in 0..3 {
                    out[ch] += wr * wc * p[ch];
                }
            }
        }
        out
    }
}

/// Portion of a ray over which one level is the finest containing level.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub level: usize,
}

/// Fixed-capacity list of segments for one ray.
pub(crate) struct Segments {
    items: [Segment; 2 * MAX_LEVELS + 1],
    len: usize,
}

impl Segments {
    pub fn as_slice(&self) -> &[Segment] {
        &self.items[..self.len]
    }
}

/// Splits the part of the ray `o + t·d, t ≥ 0` inside the outermost cube into
/// intervals of constant finest level. `o`, `d` are in the volume frame.
pub(crate) fn segments(vol: &MultiscaleVolume, o: &Vec3, d: &Vec3) -> Segments {
    let boxes = vol.boxes();
    let mut out = Segments {
        items: [Segment::default(); 2 * MAX_LEVELS + 1],
        len: 0,
    };
    let Some((a0, b0)) = boxes[0].intersect(o, d) else {
        return out;
    };
    let start = a0.max(0.0);
    if b0 <= start {
        return out;
    }
    let mut intervals = [(0.0f64, 0.0f64, false); MAX_LEVELS];
    let mut cuts = [0.0f64; 2 * MAX_LEVELS + 2];
    let mut n = 0;
    cuts[n] = start;
    n += 1;
    cuts[n] = b0;
    n += 1;
    for (level, b) in boxes.iter().enumerate().skip(1) {
        if let Some((a, c)) = b.intersect(o, d) {
            intervals[level] = (a, c, true);
            for t in [a, c] {
                if t > start && t < b0 {
                    cuts[n] = t;
                    n += 1;
                }
            }
        }
    }
    let cuts = &mut cuts[..n];
    cuts.sort_unstable_by(f64::total_cmp);
    for w in cuts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        let mid = 0.5 * (t0 + t1);
        let level = (1..boxes.len())
            .rev()
            .find(|&l| {
                let (a, c, hit) = intervals[l];
                hit && mid >= a && mid <= c
            })
            .unwrap_or(0);
        if out.len > 0 && out.items[out.len - 1].level == level {
            out.items[out.len - 1].t1 = t1;
        } else {
            out.items[out.len] = Segment { t0, t1, level };
            out.len += 1;
        }
    }
    out
}

/// One sample of a ray march.
pub(crate) struct Step {
    pub level: usize,
    pub position: Vec3,
    /// Step length over the level's voxel size.
    pub rel_len: f64,
}

/// Marches the ray through `segments`, `steps_per_voxel` samples per voxel of
/// the local finest level, sampling at step midpoints. `visit` returns
/// `false` to stop early.
#[inline]
pub(crate) fn march(
    vol: &MultiscaleVolume,
    o: &Vec3,
    d: &Vec3,
    steps_per_voxel: f64,
    mut visit: impl FnMut(&Step) -> bool,
) {
    let segs = segments(vol, o, d);
    let boxes = vol.boxes();
    for seg in segs.as_slice() {
        let voxel = boxes[seg.level].voxel;
        let nominal = voxel / steps_per_voxel;
        let len = seg.t1 - seg.t0;
        let count = ((len / nominal) - 1e-9).ceil().max(1.0) as usize;
        for i in 0..count {
            let t = seg.t0 + i as f64 * nominal;
            let dt = if i + 1 == count { seg.t1 - t } else { nominal };
            if dt <= 0.0 {
                continue;
            }
            let step = Step {
                level: seg.level,
                position: o + d * (t + 0.5 * dt),
                rel_len: dt / voxel,
            };
            if !visit(&step) {
                return;
            }
        }
    }
}

/// Opacity of a sample of alpha `alpha` spanning `rel_len` voxels.
#[inline]
pub(crate) fn step_opacity(alpha: f64, rel_len: f64) -> f64 {
    let keep = (1.0 - alpha).clamp(0.0, 1.0);
    let t = if rel_len == 0.5 {
        keep.sqrt()
    } else if rel_len == 1.0 {
        keep
    } else {
        keep.powf(rel_len)
    };
    1.0 - t
}

/// Result of tracing one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayResult {
    /// Composited color including the background term.
    pub rgb: [f64; 3],
    /// Transmittance left when the march stopped.
    pub transmittance: f64,
    pub steps: usize,
}

impl RayResult {
    pub fn opacity(&self) -> f64 {
        1.0 - self.transmittance
    }
}

/// Front-to-back march of one world-space ray through the volume, stopping
/// once transmittance falls below `cfg.transmittance_epsilon` or the ray
/// leaves the outermost cube.
pub fn trace_ray(vol: &MultiscaleVolume, origin: &Vec3, direction: &Vec3, cfg: &RenderConfig) -> RayResult {
    let pose = vol.reference_pose();
    let o = pose.inverse_transform_point(origin);
    let d = pose.inverse_transform_vector(direction).normalize();
    trace_local(vol, &o, &d, cfg)
}

#[inline]
fn trace_local(vol: &MultiscaleVolume, o: &Vec3, d: &Vec3, cfg: &RenderConfig) -> RayResult {
    let boxes = vol.boxes();
    let occupancy = vol.occupancy();
    let mut color = [0.0f64; 3];
    let mut trans = 1.0f64;
    let mut steps = 0usize;
    march(vol, o, d, cfg.ray_steps_per_voxel, |step| {
        steps += 1;
        let (cell, frac) = boxes[step.level].cell(&step.position);
        // Empty cells interpolate to zero alpha and contribute nothing.
        if !occupancy[step.level].occupied(cell) {
            return true;
        }
        let s = sample_cell(vol.grid(step.level), cell, frac);
        let a = step_opacity(s[3], step.rel_len);
        if a > 0.0 {
            let w = trans * a;
            color[0] += w * s[0];
            color[1] += w * s[1];
            color[2] += w * s[2];
            trans *= 1.0 - a;
        }
        trans >= cfg.transmittance_epsilon
    });
    for c in 0..3 {
        color[c] += trans * cfg.background[c];
    }
    RayResult {
        rgb: color,
        transmittance: trans,
        steps,
    }
}

/// Per-pixel output of [`render_rays_detailed`].
pub struct RayRender {
    pub envmap: EnvironmentMap,
    pub transmittance: Vec<f64>,
    pub steps: Vec<usize>,
}

/// Renders the environment map at `x` by ray marching each pixel.
pub fn render_rays(vol: &MultiscaleVolume, x: &Vec3, orientation: &Mat3, cfg: &RenderConfig) -> Result<EnvironmentMap> {
    Ok(render_rays_detailed(vol, x, orientation, cfg)?.envmap)
}

/// [`render_rays`] plus per-pixel final transmittance and step counts.
pub fn render_rays_detailed(
    vol: &MultiscaleVolume,
    x: &Vec3,
    orientation: &Mat3,
    cfg: &RenderConfig,
) -> Result<RayRender> {
    check_inputs(x, cfg)?;
    let pose = vol.reference_pose();
    let o = pose.inverse_transform_point(x);
    let to_local = pose.rotation().transpose() * orientation;
    let (h, w) = (cfg.height, cfg.width);
    let results: Vec<RayResult> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let d = to_local * envmap_direction(idx / w, idx % w, h, w);
            trace_local(vol, &o, &d, cfg)
        })
        .collect();
    let envmap = EnvironmentMap::new(w, h, *x, *orientation, results.iter().map(|r| r.rgb).collect())?;
    Ok(RayRender {
        envmap,
        transmittance: results.iter().map(|r| r.transmittance).collect(),
        steps: results.iter().map(|r| r.steps).collect(),
    })
}

pub(crate) fn check_inputs(x: &Vec3, cfg: &RenderConfig) -> Result<()> {
    cfg.validate()?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::domain("render position must be finite"));
    }
    Ok(())
}
