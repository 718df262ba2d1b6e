//! Multiscale nested-cube RGBA lighting volume.
//!
//! Every level is a 64³ grid whose axes are aligned with the reference camera
//! frame. Values live at cell centers; sampling is trilinear between centers
//! and clamps to the edge voxels inside the cube.

mod complete;
mod resample;

pub use complete::{
    complete, Completer, ConstantAmbientCompleter, IdentityCompleter, LevelInput, LevelOutput,
    PanoramaOracleCompleter, RadiusModel, UNOBSERVED_ALPHA,
};
pub use resample::{resample_mpi, resample_mpi_adjoint};

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, PinholeCamera, RigidTransform, Vec3};

/// Grid resolution along each axis.
pub const RES: usize = 64;
pub const VOXELS: usize = RES * RES * RES;
pub const DEFAULT_LEVELS: usize = 5;
/// Outermost cube side is `2 · z_far · LAYOUT_MARGIN`.
pub const LAYOUT_MARGIN: f64 = 1.05;
pub const MAX_LEVELS: usize = 15;

#[inline]
pub fn voxel_index(i: usize, j: usize, k: usize) -> usize {
    i + RES * (j + RES * k)
}

#[inline]
pub fn voxel_coords(index: usize) -> (usize, usize, usize) {
    (index % RES, (index / RES) % RES, index / (RES * RES))
}

/// 64³ RGBA voxels, x fastest, then y, then z.
#[derive(Clone, PartialEq)]
pub struct Grid {
    data: Vec<[f32; 4]>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let occupied = self.data.iter().filter(|v| v[3] > 0.0).count();
        f.debug_struct("Grid").field("occupied", &occupied).finish()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self::zeros()
    }
}

impl Grid {
    pub fn zeros() -> Self {
        Self::filled([0.0; 4])
    }

    pub fn filled(v: [f32; 4]) -> Self {
        Self {
            data: vec![v; VOXELS],
        }
    }

    pub fn from_voxels(data: Vec<[f32; 4]>) -> Result<Self> {
        if data.len() != VOXELS {
            return Err(Error::dimension(format!("{} voxels, expected {VOXELS}", data.len())));
        }
        Ok(Self { data })
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> [f32; 4]) -> Self {
        let mut data = Vec::with_capacity(VOXELS);
        for k in 0..RES {
            for j in 0..RES {
                for i in 0..RES {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> [f32; 4] {
        self.data[voxel_index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: [f32; 4]) {
        self.data[voxel_index(i, j, k)] = v;
    }

    pub fn voxels(&self) -> &[[f32; 4]] {
        &self.data
    }

    pub fn voxels_mut(&mut self) -> &mut [[f32; 4]] {
        &mut self.data
    }
}

/// Placement of one cube: world center, side length and world-from-grid axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelGeometry {
    pub center: Vec3,
    pub side: f64,
    pub orientation: Mat3,
}

impl LevelGeometry {
    pub fn voxel_size(&self) -> f64 {
        self.side / RES as f64
    }

    /// Grid-aligned coordinates relative to the cube center.
    #[inline]
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.orientation.transpose() * (p - self.center)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.center + self.orientation * self.voxel_center_local(i, j, k)
    }

    #[inline]
    pub fn voxel_center_local(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let v = self.voxel_size();
        let h = self.side / 2.0;
        Vec3::new(
            -h + (i as f64 + 0.5) * v,
            -h + (j as f64 + 0.5) * v,
            -h + (k as f64 + 0.5) * v,
        )
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let q = self.to_local(p);
        let h = self.side / 2.0;
        q.iter().all(|c| c.abs() <= h)
    }

    /// Whether `inner` lies inside this cube, allowing a relative slack of
    /// `1e-6` of this cube's side. Both cubes must share orientation.
    pub fn contains_cube(&self, inner: &LevelGeometry) -> bool {
        if (self.orientation - inner.orientation).abs().max() > 1e-9 {
            return false;
        }
        let q = self.to_local(&inner.center);
        let reach = (self.side - inner.side) / 2.0 + 1e-6 * self.side;
        q.iter().all(|c| c.abs() <= reach)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeLevel {
    pub grid: Grid,
    pub geometry: LevelGeometry,
}

impl VolumeLevel {
    pub fn empty(geometry: LevelGeometry) -> Self {
        Self {
            grid: Grid::zeros(),
            geometry,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.geometry.center
    }

    pub fn side(&self) -> f64 {
        self.geometry.side
    }

    /// Trilinear sample at a world point, clamped to the edge voxels.
    pub fn sample(&self, p: &Vec3) -> [f64; 4] {
        let bx = LevelBox::new(&self.geometry, &self.geometry.center, &self.geometry.orientation);
        bx.sample(&self.grid, &self.geometry.to_local(p))
    }
}

/// Axis-aligned cube in the volume frame, cached for fast lookups.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct LevelBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub voxel: f64,
    pub inv_voxel: f64,
}

impl LevelBox {
    fn new(geometry: &LevelGeometry, frame_origin: &Vec3, frame_rotation: &Mat3) -> Self {
        let c = frame_rotation.transpose() * (geometry.center - frame_origin);
        let h = geometry.side / 2.0;
        let voxel = geometry.voxel_size();
        Self {
            min: [c.x - h, c.y - h, c.z - h],
            max: [c.x + h, c.y + h, c.z + h],
            voxel,
            inv_voxel: 1.0 / voxel,
        }
    }

    #[inline]
    pub fn contains(&self, q: &Vec3) -> bool {
        q.x >= self.min[0]
            && q.x <= self.max[0]
            && q.y >= self.min[1]
            && q.y <= self.max[1]
            && q.z >= self.min[2]
            && q.z <= self.max[2]
    }

    /// Lowest-index voxel of the 2×2×2 interpolation cell holding `q`, and
    /// the fractional position inside that cell. Clamps at the edges.
    #[inline]
    pub fn cell(&self, q: &Vec3) -> (usize, [f64; 3]) {
        let (i0, fx) = axis((q.x - self.min[0]) * self.inv_voxel - 0.5);
        let (j0, fy) = axis((q.y - self.min[1]) * self.inv_voxel - 0.5);
        let (k0, fz) = axis((q.z - self.min[2]) * self.inv_voxel - 0.5);
        (voxel_index(i0, j0, k0), [fx, fy, fz])
    }

    /// Eight trilinear taps `(voxel index, weight)` with edge clamping.
    #[inline]
    pub fn taps(&self, q: &Vec3) -> [(usize, f64); 8] {
        let (base, f) = self.cell(q);
        cell_taps(base, f)
    }

    #[inline]
    pub fn sample(&self, grid: &Grid, q: &Vec3) -> [f64; 4] {
        let (base, f) = self.cell(q);
        sample_cell(grid, base, f)
    }


    /// Parametric interval `[t_in, t_out]` where the ray is inside the box.
    #[inline]
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-300 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let mut ta = (self.min[a] - o[a]) * inv;
            let mut tb = (self.max[a] - o[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 >= t0).then_some((t0, t1))
    }
}

const DY: usize = RES;
const DZ: usize = RES * RES;

#[inline]
pub(crate) fn cell_taps(base: usize, f: [f64; 3]) -> [(usize, f64); 8] {
    let [fx, fy, fz] = f;
    let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
    [
        (base, gx * gy * gz),
        (base + 1, fx * gy * gz),
        (base + DY, gx * fy * gz),
        (base + DY + 1, fx * fy * gz),
        (base + DZ, gx * gy * fz),
        (base + DZ + 1, fx * gy * fz),
        (base + DZ + DY, gx * fy * fz),
        (base + DZ + DY + 1, fx * fy * fz),
    ]
}

#[inline]
pub(crate) fn sample_cell(grid: &Grid, base: usize, f: [f64; 3]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (idx, w) in cell_taps(base, f) {
        let v = grid.data[idx];
        out[0] += w * v[0] as f64;
        out[1] += w * v[1] as f64;
        out[2] += w * v[2] as f64;
        out[3] += w * v[3] as f64;
    }
    out
}

/// One bit per interpolation cell: set when any of its eight voxels has
/// nonzero alpha. Cells with a clear bit sample to exactly zero alpha.
#[derive(Clone, Debug)]
pub(crate) struct Occupancy {
    bits: Vec<u64>,
}

impl Occupancy {
    fn new(grid: &Grid) -> Self {
        let mut bits = vec![0u64; VOXELS / 64];
        for k in 0..RES - 1 {
            for j in 0..RES - 1 {
                for i in 0..RES - 1 {
                    let base = voxel_index(i, j, k);
                    if cell_taps(base, [0.0; 3]).iter().any(|(idx, _)| grid.data[*idx][3] != 0.0) {
                        bits[base / 64] |= 1 << (base % 64);
                    }
                }
            }
        }
        Self { bits }
    }

    #[inline]
    pub fn occupied(&self, base: usize) -> bool {
        self.bits[base / 64] & (1 << (base % 64)) != 0
    }
}

#[inline]
fn axis(g: f64) -> (usize, f64) {
    let g = g.clamp(0.0, (RES - 1) as f64);
    let i0 = (g as usize).min(RES - 2);
    (i0, g - i0 as f64)
}

/// Nested cubes, coarsest first, sharing the reference camera's axes.
#[derive(Clone, Debug)]
pub struct MultiscaleVolume {
    levels: Vec<VolumeLevel>,
    reference_pose: RigidTransform,
    boxes: Vec<LevelBox>,
    /// Built on first use; reset whenever voxels may change.
    occupancy: OnceLock<Vec<Occupancy>>,
}

impl PartialEq for MultiscaleVolume {
    fn eq(&self, other: &Self) -> bool {
        self.levels == other.levels && self.reference_pose == other.reference_pose
    }
}

impl MultiscaleVolume {
    /// Validates that sides halve from level to level, each cube sits inside
    /// its parent and every level is aligned with the reference camera axes.
    pub fn new(levels: Vec<VolumeLevel>, reference_pose: RigidTransform) -> Result<Self> {
        if levels.is_empty() || levels.len() > MAX_LEVELS {
            return Err(Error::Geometry(format!(
                "volume needs between 1 and {MAX_LEVELS} levels, got {}",
                levels.len()
            )));
        }
        for (i, level) in levels.iter().enumerate() {
            let g = &level.geometry;
            if !(g.side > 0.0 && g.side.is_finite()) {
                return Err(Error::Geometry(format!("level {i} has side {}", g.side)));
            }
            if (g.orientation - reference_pose.rotation()).abs().max() > 1e-6 {
                return Err(Error::Geometry(format!(
                    "level {i} is not aligned with the reference camera"
                )));
            }
            for v in level.grid.voxels() {
                if !(0.0..=1.0).contains(&v[3]) || v[..3].iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
                    return Err(Error::domain(format!("level {i} holds an out-of-range voxel {v:?}")));
                }
            }
            if i > 0 {
                let parent = &levels[i - 1].geometry;
                if (g.side * 2.0 - parent.side).abs() > 1e-6 * parent.side {
                    return Err(Error::Geometry(format!(
                        "level {i} side {} is not half of {}",
                        g.side, parent.side
                    )));
                }
                if !parent.contains_cube(g) {
                    return Err(Error::Geometry(format!("level {i} is not inside level {}", i - 1)));
                }
            }
        }
        let boxes = levels
            .iter()
            .map(|l| LevelBox::new(&l.geometry, reference_pose.translation(), reference_pose.rotation()))
            .collect();
        Ok(Self {
            levels,
            reference_pose,
            boxes,
            occupancy: OnceLock::new(),
        })
    }

    pub fn levels(&self) -> &[VolumeLevel] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Mutable voxel access. Geometry stays fixed.
    pub fn grid_mut(&mut self, level: usize) -> &mut Grid {
        self.occupancy = OnceLock::new();
        &mut self.levels[level].grid
    }

    pub fn reference_pose(&self) -> &RigidTransform {
        &self.reference_pose
    }

    pub fn into_levels(self) -> Vec<VolumeLevel> {
        self.levels
    }

    pub(crate) fn boxes(&self) -> &[LevelBox] {
        &self.boxes
    }

    pub(crate) fn occupancy(&self) -> &[Occupancy] {
        self.occupancy
            .get_or_init(|| self.levels.iter().map(|l| Occupancy::new(&l.grid)).collect())
    }

    pub(crate) fn grid(&self, level: usize) -> &Grid {
        &self.levels[level].grid
    }

    /// World point into the shared grid frame.
    #[inline]
    pub(crate) fn to_frame(&self, p: &Vec3) -> Vec3 {
        self.reference_pose.inverse_transform_point(p)
    }

    /// Copy of the volume with every voxel zeroed.
    pub fn zeroed(&self) -> Self {
        let mut out = self.clone();
        for l in 0..out.levels.len() {
            *out.grid_mut(l) = Grid::zeros();
        }
        out
    }

    /// Index of the finest level whose cube contains a frame-space point.
    #[inline]
    pub(crate) fn finest_level_local(&self, q: &Vec3) -> Option<usize> {
        (0..self.boxes.len()).rev().find(|&i| self.boxes[i].contains(q))
    }

    /// Finest level containing the world point `p`, if any.
    pub fn finest_level(&self, p: &Vec3) -> Option<usize> {
        self.finest_level_local(&self.to_frame(p))
    }

    /// Trilinear sample of the finest level containing `p`; zero outside
    /// every level. Levels never blend across cube boundaries.
    pub fn query(&self, p: &Vec3) -> [f64; 4] {
        self.query_local(&self.to_frame(p)).map(|(_, v)| v).unwrap_or([0.0; 4])
    }

    #[inline]
    pub(crate) fn query_local(&self, q: &Vec3) -> Option<(usize, [f64; 4])> {
        let level = self.finest_level_local(q)?;
        Some((level, self.boxes[level].sample(&self.levels[level].grid, q)))
    }

    /// Frame-space voxel center.
    pub(crate) fn voxel_center_local(&self, level: usize, i: usize, j: usize, k: usize) -> Vec3 {
        let b = &self.boxes[level];
        Vec3::new(
            b.min[0] + (i as f64 + 0.5) * b.voxel,
            b.min[1] + (j as f64 + 0.5) * b.voxel,
            b.min[2] + (k as f64 + 0.5) * b.voxel,
        )
    }
}

/// Lays out `count` empty nested cubes for a reference camera.
///
/// The outermost cube is centered on the camera with side `2 · z_far · 1.05`.
/// Each finer cube has half its parent's side and is pushed forward so that
/// the camera center lies on its back face.
pub fn layout_levels(reference: &PinholeCamera, z_far: f64, count: usize) -> Result<MultiscaleVolume> {
    if !(z_far > 0.0 && z_far.is_finite()) {
        return Err(Error::domain(format!("z_far must be positive, got {z_far}")));
    }
    if count == 0 {
        return Err(Error::domain("need at least one level"));
    }
    let pose = reference.pose;
    let cam = pose.center();
    let forward = pose.forward();
    let orientation = *pose.rotation();
    let mut side = 2.0 * z_far * LAYOUT_MARGIN;
    let mut levels = Vec::with_capacity(count);
    for level in 0..count {
        let center = if level == 0 { cam } else { cam + forward * (side / 2.0) };
        levels.push(VolumeLevel::empty(LevelGeometry {
            center,
            side,
            orientation,
        }));
        side /= 2.0;
    }
    MultiscaleVolume::new(levels, pose)
}

/// Nearest-neighbor resampling of the part of `coarse` covered by `fine`
/// onto a full-resolution grid.
pub fn crop_upsample(coarse: &VolumeLevel, fine: &LevelGeometry) -> Result<Grid> {
    if !coarse.geometry.contains_cube(fine) {
        return Err(Error::Geometry("fine region is not inside the coarse cube".into()));
    }
    let cg = &coarse.geometry;
    let inv_voxel = 1.0 / cg.voxel_size();
    let h = cg.side / 2.0;
    let offset = cg.to_local(&fine.center);
    let index = |x: f64| (((x + h) * inv_voxel).floor().max(0.0) as usize).min(RES - 1);
    Ok(Grid::from_fn(|i, j, k| {
        let q = offset + fine.voxel_center_local(i, j, k);
        coarse.grid.get(index(q.x), index(q.y), index(q.z))
    }))
}

/// Per-voxel f64 values matching a volume's layout (gradients, cotangents).
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelField {
    pub levels: Vec<Vec<[f64; 4]>>,
}

impl VoxelField {
    pub fn zeros(levels: usize) -> Self {
        Self {
            levels: vec![vec![[0.0; 4]; VOXELS]; levels],
        }
    }

    /// `Σ ⟨self, grid⟩` over all voxels and channels.
    pub fn dot_volume(&self, vol: &MultiscaleVolume) -> f64 {
        self.levels
            .iter()
            .zip(vol.levels())
            .map(|(f, l)| {
                f.iter()
                    .zip(l.grid.voxels())
                    .map(|(a, b)| (0..4).map(|c| a[c] * b[c] as f64).sum::<f64>())
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.levels
            .iter()
            .flatten()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
