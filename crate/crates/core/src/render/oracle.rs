use rayon::prelude::*;

use super::{check_inputs, step_opacity, EnvironmentMap, RenderConfig};
use crate::error::{Error, Result};
use crate::geometry::{envmap_direction, Mat3, Vec3};
use crate::volume::{MultiscaleVolume, MAX_LEVELS};

pub const DEFAULT_ORACLE_STEPS: usize = 10_000;

/// Brute-force reference renderer: `steps` uniform samples per ray from `x`
/// to the exit of the outermost cube, each a full finest-level query, with
/// no early termination.
pub fn render_oracle(
    vol: &MultiscaleVolume,
    x: &Vec3,
    orientation: &Mat3,
    cfg: &RenderConfig,
    steps: usize,
) -> Result<EnvironmentMap> {
    check_inputs(x, cfg)?;
    if steps < 1000 {
        return Err(Error::Config(format!("oracle needs at least 1000 steps, got {steps}")));
    }
    let pose = vol.reference_pose();
    let o = pose.inverse_transform_point(x);
    let to_local = pose.rotation().transpose() * orientation;
    let outer = vol.boxes()[0];
    let voxel: Vec<f64> = vol.boxes().iter().map(|b| b.voxel).collect();
    let (h, w) = (cfg.height, cfg.width);
    let data: Vec<[f64; 3]> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let d = to_local * envmap_direction(idx / w, idx % w, h, w);
            let mut color = [0.0; 3];
            let mut trans = 1.0;
            if let Some((t_in, t_out)) = outer.intersect(&o, &d) {
                let start = t_in.max(0.0);
                if t_out > start {
                    let dt = (t_out - start) / steps as f64;
                    let mut rel = [0.0; MAX_LEVELS];
                    for (r, v) in rel.iter_mut().zip(&voxel) {
                        *r = dt / v;
                    }
                    for i in 0..steps {
                        let p = o + d * (start + (i as f64 + 0.5) * dt);
                        let Some((level, s)) = vol.query_local(&p) else {
                            continue;
                        };
                        let a = step_opacity(s[3], rel[level]);
                        for c in 0..3 {
                            color[c] += trans * a * s[c];
                        }
                        trans *= 1.0 - a;
                    }
                }
            }
            for c in 0..3 {
                color[c] += trans * cfg.background[c];
            }
            color
        })
        .collect();
    EnvironmentMap::new(w, h, *x, *orientation, data)
}
