use rayon::prelude::*;

use super::{crop_upsample, voxel_coords, Grid, MultiscaleVolume, VolumeLevel, VOXELS};
use crate::error::{Error, Result};
use crate::geometry::{direction_to_pixel, RigidTransform, Vec3};
use crate::image::{DepthMap, ImageRGBA};

/// Observed alpha below which a voxel counts as unobserved.
pub const UNOBSERVED_ALPHA: f32 = 0.1;

/// What a completer sees for one level.
pub struct LevelInput<'a> {
    pub index: usize,
    pub observed: &'a VolumeLevel,
    /// Completed coarser level cropped to this cube, `None` for the coarsest.
    pub context: Option<&'a Grid>,
}

/// Completer prediction for one level. The final voxel value is
/// `w · observed + (1 − w) · rgba`.
pub struct LevelOutput {
    pub rgba: Grid,
    pub weights: Vec<f32>,
}

/// Fills unobserved parts of a volume one level at a time, coarse to fine.
pub trait Completer: Sync {
    fn complete_level(&self, input: &LevelInput<'_>) -> Result<LevelOutput>;
}

/// Runs `completer` over the levels coarse to fine, feeding each level the
/// nearest-neighbor upsampled crop of the previous completed level.
pub fn complete(observed: &MultiscaleVolume, completer: &dyn Completer) -> Result<MultiscaleVolume> {
    let mut done: Vec<VolumeLevel> = Vec::with_capacity(observed.num_levels());
    for (index, level) in observed.levels().iter().enumerate() {
        let context = match done.last() {
            Some(prev) => Some(crop_upsample(prev, &level.geometry)?),
            None => None,
        };
        let wrap = |e: Error| Error::Completer {
            level: index,
            source: Box::new(e),
        };
        let out = completer
            .complete_level(&LevelInput {
                index,
                observed: level,
                context: context.as_ref(),
            })
            .map_err(wrap)?;
        if out.weights.len() != VOXELS {
            return Err(wrap(Error::dimension(format!(
                "{} blend weights, expected {VOXELS}",
                out.weights.len()
            ))));
        }
        if out.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(wrap(Error::domain("blend weights must lie in [0, 1]")));
        }
        let data = level
            .grid
            .voxels()
            .iter()
            .zip(out.rgba.voxels())
            .zip(&out.weights)
            .map(|((obs, pred), &w)| {
                if w == 1.0 {
                    *obs
                } else {
                    std::array::from_fn(|c| w * obs[c] + (1.0 - w) * pred[c])
                }
            })
            .collect();
        done.push(VolumeLevel {
            grid: Grid::from_voxels(data)?,
            geometry: level.geometry,
        });
    }
    MultiscaleVolume::new(done, *observed.reference_pose())
}

/// Keeps the observed volume as is ("MPI only").
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityCompleter;

impl Completer for IdentityCompleter {
    fn complete_level(&self, input: &LevelInput<'_>) -> Result<LevelOutput> {
        Ok(LevelOutput {
            rgba: input.observed.grid.clone(),
            weights: vec![1.0; VOXELS],
        })
    }
}

/// Replaces unobserved voxels with a constant color and alpha.
#[derive(Clone, Copy, Debug)]
pub struct ConstantAmbientCompleter {
    pub color: [f32; 3],
    pub alpha: f32,
    pub threshold: f32,
}

impl ConstantAmbientCompleter {
    pub fn new(color: [f32; 3], alpha: f32) -> Self {
        Self {
            color,
            alpha,
            threshold: UNOBSERVED_ALPHA,
        }
    }

    pub fn with_threshold(mut self, threshold: f32) -> Self {
        self.threshold = threshold;
        self
    }
}

impl Completer for ConstantAmbientCompleter {
    fn complete_level(&self, input: &LevelInput<'_>) -> Result<LevelOutput> {
        if !(0.0..=1.0).contains(&self.alpha) || self.color.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::domain("ambient color must be non-negative and alpha in [0, 1]"));
        }
        let [r, g, b] = self.color;
        let weights = input
            .observed
            .grid
            .voxels()
            .iter()
            .map(|v| if v[3] < self.threshold { 0.0 } else { 1.0 })
            .collect();
        Ok(LevelOutput {
            rgba: Grid::filled([r, g, b, self.alpha]),
            weights,
        })
    }
}

/// Distance from the panorama center to the scene along each pixel's ray.
#[derive(Clone, Debug)]
pub enum RadiusModel {
    Fixed(f64),
    /// Radial distance per panorama pixel.
    PerPixel(DepthMap),
}

/// Deterministic stand-in for a learned completer: fills unobserved voxels
/// from a spherical panorama with known scene distance.
///
/// For an unobserved voxel, the panorama pixel in the voxel's direction
/// (seen from the panorama center) supplies the color. Voxels that reach the
/// back-projected surface point, or lie beyond it, become opaque; voxels in
/// front of it stay transparent. Observed voxels are kept.
#[derive(Clone, Debug)]
pub struct PanoramaOracleCompleter {
    pano: ImageRGBA,
    pose: RigidTransform,
    radius: RadiusModel,
    threshold: f32,
}

impl PanoramaOracleCompleter {
    pub fn new(pano: ImageRGBA, pose: RigidTransform, radius: RadiusModel) -> Result<Self> {
        match &radius {
            RadiusModel::Fixed(r) => {
                if !(*r > 0.0 && r.is_finite()) {
                    return Err(Error::domain(format!("panorama radius must be positive, got {r}")));
                }
            }
            RadiusModel::PerPixel(depth) => {
                if depth.width() != pano.width() || depth.height() != pano.height() {
                    return Err(Error::dimension("panorama depth does not match the panorama"));
                }
                if let Some(bad) = depth.values().iter().find(|d| !(**d > 0.0)) {
                    return Err(Error::domain(format!("nonpositive panorama radius {bad}")));
                }
            }
        }
        if pano.width() == 0 || pano.height() == 0 {
            return Err(Error::domain("empty panorama"));
        }
        Ok(Self {
            pano,
            pose,
            radius,
            threshold: UNOBSERVED_ALPHA,
        })
    }

    /// Alpha below which a voxel counts as unobserved.
    pub fn with_threshold(mut self, threshold: f32) -> Self {
        self.threshold = threshold;
        self
    }

    /// Nearest panorama pixel for a world-space direction.
    fn lookup(&self, dir_world: &Vec3) -> (usize, usize) {
        let (h, w) = (self.pano.height(), self.pano.width());
        let d = self.pose.inverse_transform_vector(dir_world);
        let (row, col) = direction_to_pixel(&d, h, w);
        let row = (row.round().max(0.0) as usize).min(h - 1);
        let col = (col.round() as i64).rem_euclid(w as i64) as usize;
        (row, col)
    }

    fn radius_at(&self, row: usize, col: usize) -> f64 {
        match &self.radius {
            RadiusModel::Fixed(r) => *r,
            RadiusModel::PerPixel(depth) => depth.get(col, row) as f64,
        }
    }
}

impl Completer for PanoramaOracleCompleter {
    fn complete_level(&self, input: &LevelInput<'_>) -> Result<LevelOutput> {
        let geometry = &input.observed.geometry;
        let half_voxel = geometry.voxel_size() / 2.0;
        let origin = self.pose.center();
        let observed = input.observed.grid.voxels();
        let (rgba, weights): (Vec<[f32; 4]>, Vec<f32>) = observed
            .par_iter()
            .enumerate()
            .map(|(index, obs)| {
                if obs[3] >= self.threshold {
                    return (*obs, 1.0);
                }
                let (i, j, k) = voxel_coords(index);
                let offset = geometry.voxel_center(i, j, k) - origin;
                let dist = offset.norm();
                if dist < 1e-12 {
                    return (*obs, 1.0);
                }
                let (row, col) = self.lookup(&offset);
                let px = self.pano.get(col, row);
                let alpha = if dist + half_voxel >= self.radius_at(row, col) { 1.0 } else { 0.0 };
                ([px[0], px[1], px[2], alpha], 0.0)
            })
            .unzip();
        Ok(LevelOutput {
            rgba: Grid::from_voxels(rgba)?,
            weights,
        })
    }
}
