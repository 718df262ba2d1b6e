use rayon::prelude::*;

use super::{check_inputs, segments, step_opacity, EnvironmentMap, RenderConfig};
use crate::error::Result;
use crate::geometry::{envmap_direction, Mat3, Vec3};
use crate::volume::{LevelBox, MultiscaleVolume};

/// One concentric shell: radius, level it samples and its opacity exponent.
#[derive(Clone, Copy, Debug)]
struct Shell {
    radius: f64,
    level: usize,
    rel_len: f64,
}

/// Distances from `o` to the nearest and farthest voxel centers of a cube.
fn voxel_center_range(b: &LevelBox, o: &Vec3) -> (f64, f64) {
    let mut near = 0.0;
    let mut far = 0.0;
    for a in 0..3 {
        let lo = b.min[a] + 0.5 * b.voxel;
        let hi = b.max[a] - 0.5 * b.voxel;
        let nearest = o[a].clamp(lo, hi) - o[a];
        let farthest = (lo - o[a]).abs().max((hi - o[a]).abs());
        near += nearest * nearest;
        far += farthest * farthest;
    }
    (near.sqrt(), far.sqrt())
}

fn shells(vol: &MultiscaleVolume, o: &Vec3, cfg: &RenderConfig) -> Vec<Shell> {
    let k = cfg.spheres_per_scale;
    let mut out = Vec::with_capacity(k * vol.num_levels());
    for (level, b) in vol.boxes().iter().enumerate() {
        let (near, far) = voxel_center_range(b, o);
        let spacing = (far - near) / (k - 1) as f64;
        let rel_len = spacing / b.voxel;
        for i in 0..k {
            out.push(Shell {
                radius: near + spacing * i as f64,
                level,
                rel_len,
            });
        }
    }
    // Outermost first; finer level first on ties so the order is total.
    out.sort_by(|a, b| b.radius.total_cmp(&a.radius).then(b.level.cmp(&a.level)));
    out
}

/// Renders the environment map at `x` by alpha compositing concentric
/// spheres, outermost to innermost, onto the background.
///
/// Each level contributes `spheres_per_scale` shells spaced evenly in radius
/// between its nearest and farthest voxel centers. A shell sample only counts
/// where its level is the finest cube containing the sample point.
pub fn render_spheres(vol: &MultiscaleVolume, x: &Vec3, orientation: &Mat3, cfg: &RenderConfig) -> Result<EnvironmentMap> {
    check_inputs(x, cfg)?;
    let pose = vol.reference_pose();
    let o = pose.inverse_transform_point(x);
    let to_local = pose.rotation().transpose() * orientation;
    let shells = shells(vol, &o, cfg);
    let boxes = vol.boxes();
    let (h, w) = (cfg.height, cfg.width);
    let data: Vec<[f64; 3]> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let d = to_local * envmap_direction(idx / w, idx % w, h, w);
            let segs = segments(vol, &o, &d);
            let segs = segs.as_slice();
            let mut out = cfg.background;
            // Shells are sorted by decreasing radius, so walk segments backwards.
            let mut cursor = segs.len();
            for shell in &shells {
                while cursor > 0 && segs[cursor - 1].t0 > shell.radius {
                    cursor -= 1;
                }
                if cursor == 0 {
                    break;
                }
                let seg = &segs[cursor - 1];
                if shell.radius > seg.t1 || seg.level != shell.level {
                    continue;
                }
                let p = o + d * shell.radius;
                let s = boxes[shell.level].sample(vol.grid(shell.level), &p);
                let a = if cfg.sphere_alpha_rescale {
                    step_opacity(s[3], shell.rel_len)
                } else {
                    s[3].clamp(0.0, 1.0)
                };
                if a > 0.0 {
                    for c in 0..3 {
                        out[c] = s[c] * a + out[c] * (1.0 - a);
                    }
                }
            }
            out
        })
        .collect();
    EnvironmentMap::new(w, h, *x, *orientation, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PinholeCamera, RigidTransform};
    use crate::volume::layout_levels;

    #[test]
    fn zero_volume_renders_background() {
        let cam = PinholeCamera::new(50.0, 50.0, 32.0, 24.0, 64, 48, RigidTransform::identity()).unwrap();
        let vol = layout_levels(&cam, 10.0, 5).unwrap();
        let cfg = RenderConfig::default().with_resolution(10, 20);
        let env = render_spheres(&vol, &Vec3::new(0.0, 0.0, 2.0), &Mat3::identity(), &cfg).unwrap();
        assert!(env.pixels().iter().all(|p| *p == [0.5; 3]));
    }

    #[test]
    fn shell_radii_span_voxel_centers() {
        let cam = PinholeCamera::new(50.0, 50.0, 32.0, 24.0, 64, 48, RigidTransform::identity()).unwrap();
        let vol = layout_levels(&cam, 10.0, 2).unwrap();
        let o = Vec3::new(0.0, 0.0, 0.0);
        let b = vol.boxes()[0];
        let (near, far) = voxel_center_range(&b, &o);
        // The camera sits at the center of level 0, inside the hull of its
        // voxel centers.
        assert_eq!(near, 0.0);
        assert!((far - (3.0f64).sqrt() * (10.5 - b.voxel / 2.0)).abs() < 1e-9);
        let s = shells(&vol, &o, &RenderConfig::default());
        assert_eq!(s.len(), 256);
        assert!(s.windows(2).all(|w| w[0].radius >= w[1].radius));
    }
}
