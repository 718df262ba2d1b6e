use super::{check_inputs, march, step_opacity, RenderConfig};
use crate::error::{Error, Result};
use crate::geometry::{envmap_direction, Mat3, Vec3};
use crate::volume::{MultiscaleVolume, VoxelField};

struct Record {
    level: usize,
    taps: [(usize, f64); 8],
    sample: [f64; 4],
    opacity: f64,
    rel_len: f64,
    trans_before: f64,
}

/// Reverse-mode adjoint of [`super::render_rays`] for the step locations it
/// uses: given a cotangent per envmap pixel, returns `∂L/∂voxel` for every
/// voxel channel, where `L = Σ_pixels ⟨cotangent, color⟩`.
///
/// Accumulation runs pixel by pixel in a fixed order, so the result does not
/// depend on the thread pool.
pub fn render_vjp(
    vol: &MultiscaleVolume,
    x: &Vec3,
    orientation: &Mat3,
    cfg: &RenderConfig,
    cotangent: &[[f64; 3]],
) -> Result<VoxelField> {
    check_inputs(x, cfg)?;
    let (h, w) = (cfg.height, cfg.width);
    if cotangent.len() != h * w {
        return Err(Error::dimension(format!(
            "cotangent has {} pixels, expected {}",
            cotangent.len(),
            h * w
        )));
    }
    let pose = vol.reference_pose();
    let o = pose.inverse_transform_point(x);
    let to_local = pose.rotation().transpose() * orientation;
    let boxes = vol.boxes();
    let mut grad = VoxelField::zeros(vol.num_levels());
    let mut records: Vec<Record> = Vec::new();

    for (idx, g) in cotangent.iter().enumerate() {
        if *g == [0.0; 3] {
            continue;
        }
        let d = to_local * envmap_direction(idx / w, idx % w, h, w);
        records.clear();
        let mut trans = 1.0f64;
        march(vol, &o, &d, cfg.ray_steps_per_voxel, |step| {
            let b = &boxes[step.level];
            let taps = b.taps(&step.position);
            let grid = vol.grid(step.level).voxels();
            let mut s = [0.0f64; 4];
            for (i, wt) in taps {
                let v = grid[i];
                for c in 0..4 {
                    s[c] += wt * v[c] as f64;
                }
            }
            let a = step_opacity(s[3], step.rel_len);
            records.push(Record {
                level: step.level,
                taps,
                sample: s,
                opacity: a,
                rel_len: step.rel_len,
                trans_before: trans,
            });
            if a > 0.0 {
                trans *= 1.0 - a;
            }
            trans >= cfg.transmittance_epsilon
        });

        // Contribution of everything behind the current step, per unit of
        // transmittance reaching it.
        let mut rest = g[0] * cfg.background[0] + g[1] * cfg.background[1] + g[2] * cfg.background[2];
        for r in records.iter().rev() {
            let t = r.trans_before;
            let a = r.opacity;
            let gc = g[0] * r.sample[0] + g[1] * r.sample[1] + g[2] * r.sample[2];
            let d_rgb = [t * a * g[0], t * a * g[1], t * a * g[2]];
            let d_opacity = t * (gc - rest);
            rest = a * gc + (1.0 - a) * rest;
            let keep = (1.0 - r.sample[3]).clamp(0.0, 1.0);
            let d_alpha = if r.rel_len == 1.0 {
                d_opacity
            } else if keep > 0.0 {
                d_opacity * r.rel_len * keep.powf(r.rel_len - 1.0)
            } else {
                0.0
            };
            let dst = &mut grad.levels[r.level];
            for (i, wt) in r.taps {
                let v = &mut dst[i];
                v[0] += wt * d_rgb[0];
                v[1] += wt * d_rgb[1];
                v[2] += wt * d_rgb[2];
                v[3] += wt * d_alpha;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PinholeCamera, RigidTransform};
    use crate::volume::{layout_levels, voxel_index};

    fn volume() -> MultiscaleVolume {
        let cam = PinholeCamera::new(50.0, 50.0, 32.0, 24.0, 64, 48, RigidTransform::identity()).unwrap();
        layout_levels(&cam, 10.0, 1).unwrap()
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let mut vol = volume();
        vol.grid_mut(0).voxels_mut().iter_mut().for_each(|v| *v = [0.3, 0.2, 0.1, 0.05]);
        let cfg = RenderConfig::default().with_resolution(6, 12);
        let g = render_vjp(&vol, &Vec3::zeros(), &Mat3::identity(), &cfg, &vec![[0.0; 3]; 72]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn single_voxel_rgb_gradient_is_transmittance_times_opacity() {
        // One occupied voxel on the forward axis; every sample that touches it
        // contributes T·a·w to its RGB gradient.
        let mut vol = volume();
        let (i, j, k) = (31, 31, 40);
        vol.grid_mut(0).voxels_mut()[voxel_index(i, j, k)] = [0.4, 0.5, 0.6, 0.7];
        let cfg = RenderConfig::default().with_resolution(1, 1);
        // A 1x1 map looks along +Z at the equator; shift the origin so the ray
        // runs through the voxel's center line.
        let c = vol.levels()[0].geometry.voxel_center(i, j, k);
        let x = Vec3::new(c.x, c.y, 0.0);
        let g = render_vjp(&vol, &x, &Mat3::identity(), &cfg, &[[1.0, 0.0, 0.0]]).unwrap();

        let b = vol.boxes()[0];
        let mut expect = 0.0;
        let mut trans = 1.0;
        march(&vol, &vol.to_frame(&x), &Vec3::new(0.0, 0.0, 1.0), 2.0, |step| {
            let taps = b.taps(&step.position);
            let wv: f64 = taps.iter().filter(|(t, _)| *t == voxel_index(i, j, k)).map(|(_, w)| w).sum();
            let a = step_opacity(0.7f32 as f64 * wv, step.rel_len);
            expect += trans * a * wv;
            trans *= 1.0 - a;
            true
        });
        let got = g.levels[0][voxel_index(i, j, k)][0];
        assert!(expect > 0.1);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }
}
