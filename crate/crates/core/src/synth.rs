//! Synthetic scenes with analytic ground truth: a six-color box room and
//! smooth random volumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{envmap_direction, Mat3, PinholeCamera, RigidTransform, Vec3};
use crate::image::{DepthMap, ImageRGBA};
use crate::render::EnvironmentMap;
use crate::volume::{Grid, MultiscaleVolume};

/// Axis-aligned room seen from the inside. Face colors are ordered
/// `-x, +x, -y, +y, -z, +z`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxRoom {
    pub min: Vec3,
    pub max: Vec3,
    pub colors: [[f64; 3]; 6],
}

impl Default for BoxRoom {
    fn default() -> Self {
        Self {
            min: Vec3::new(-3.0, -2.0, -3.0),
            max: Vec3::new(3.0, 2.0, 7.0),
            colors: [
                [0.8, 0.2, 0.2],
                [0.2, 0.7, 0.3],
                [0.9, 0.9, 0.8],
                [0.4, 0.3, 0.2],
                [0.2, 0.3, 0.8],
                [0.7, 0.6, 0.2],
            ],
        }
    }
}

impl BoxRoom {
    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    /// Distance to the wall along a unit ray from an interior point, and the
    /// index of the face hit.
    pub fn hit(&self, o: &Vec3, d: &Vec3) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for a in 0..3 {
            if d[a] == 0.0 {
                continue;
            }
            let (plane, face) = if d[a] > 0.0 { (self.max[a], 2 * a + 1) } else { (self.min[a], 2 * a) };
            let t = (plane - o[a]) / d[a];
            if t < best.0 {
                best = (t, face);
            }
        }
        best
    }

    pub fn radiance(&self, o: &Vec3, d: &Vec3) -> [f64; 3] {
        self.colors[self.hit(o, d).1]
    }

    /// Linear RGB view and z-depth seen by a pinhole camera inside the room.
    pub fn render_view(&self, cam: &PinholeCamera) -> (ImageRGBA, DepthMap) {
        let mut depth = Vec::with_capacity(cam.width * cam.height);
        let img = ImageRGBA::from_fn(cam.width, cam.height, |x, y| {
            let ray = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
            let (t, face) = self.hit(&ray.origin, &ray.direction);
            let p = cam.pose.inverse_transform_point(&ray.at(t));
            depth.push(p.z as f32);
            let c = self.colors[face];
            [c[0] as f32, c[1] as f32, c[2] as f32, 1.0]
        });
        let depth = DepthMap::new(cam.width, cam.height, depth).expect("depth matches camera");
        (img, depth)
    }

    /// Equirect panorama and radial distance map seen from `pose`.
    pub fn render_panorama(&self, pose: &RigidTransform, height: usize, width: usize) -> (ImageRGBA, DepthMap) {
        let o = pose.center();
        let mut dist = Vec::with_capacity(width * height);
        let img = ImageRGBA::from_fn(width, height, |x, y| {
            let d = pose.transform_vector(&envmap_direction(y, x, height, width));
            let (t, face) = self.hit(&o, &d);
            dist.push(t as f32);
            let c = self.colors[face];
            [c[0] as f32, c[1] as f32, c[2] as f32, 1.0]
        });
        (img, DepthMap::new(width, height, dist).expect("distance map matches panorama"))
    }

    /// Exact environment map at `x`.
    pub fn envmap(&self, x: &Vec3, orientation: &Mat3, height: usize, width: usize) -> Result<EnvironmentMap> {
        let data = (0..height * width)
            .map(|i| self.radiance(x, &(orientation * envmap_direction(i / width, i % width, height, width))))
            .collect();
        EnvironmentMap::new(width, height, *x, *orientation, data)
    }
}

/// The standard box-room setup: reference camera at the origin looking down
/// +Z (160×120, f = 100) and a source camera 0.1 to its right.
pub fn box_room_cameras() -> (PinholeCamera, PinholeCamera) {
    let reference = PinholeCamera::new(100.0, 100.0, 80.0, 60.0, 160, 120, RigidTransform::identity()).expect("valid camera");
    let source = reference.with_pose(RigidTransform::from_translation(Vec3::new(0.1, 0.0, 0.0)));
    (reference, source)
}

/// Random low-frequency RGBA field defined in world space.
#[derive(Clone, Debug)]
pub struct SmoothField {
    waves: Vec<[(Vec3, f64, f64); 4]>,
    max_alpha: f64,
}

impl SmoothField {
    /// Sum of `terms` sinusoids per channel with wavelengths between 1.5 and
    /// 8 world units; alpha lies in `[0, max_alpha]`.
    pub fn new(seed: u64, terms: usize, max_alpha: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..terms.max(1))
            .map(|_| {
                std::array::from_fn(|_| {
                    let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let dir = if dir.norm() < 1e-3 { Vec3::x() } else { dir.normalize() };
                    let k = std::f64::consts::TAU / rng.gen_range(1.5..8.0);
                    (dir * k, rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.5..1.0))
                })
            })
            .collect();
        Self { waves, max_alpha }
    }

    pub fn eval(&self, p: &Vec3) -> [f64; 4] {
        let mut out = [0.0; 4];
        let mut norm = 0.0;
        for w in &self.waves {
            for c in 0..4 {
                let (k, phase, amp) = w[c];
                out[c] += amp * (k.dot(p) + phase).sin();
            }
            norm += 1.0;
        }
        // Each channel in [0, 1] before scaling.
        let unit = |v: f64| (0.5 + 0.5 * v / norm).clamp(0.0, 1.0);
        [
            0.1 + 0.8 * unit(out[0]),
            0.1 + 0.8 * unit(out[1]),
            0.1 + 0.8 * unit(out[2]),
            self.max_alpha * unit(out[3]),
        ]
    }

    /// Fills every voxel of `layout` with the field at its center.
    pub fn fill(&self, layout: &MultiscaleVolume) -> MultiscaleVolume {
        let mut vol = layout.clone();
        for l in 0..vol.num_levels() {
            let g = vol.levels()[l].geometry;
            *vol.grid_mut(l) = Grid::from_fn(|i, j, k| self.eval(&g.voxel_center(i, j, k)).map(|v| v as f32));
        }
        vol
    }
}
