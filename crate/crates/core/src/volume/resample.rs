use rayon::prelude::*;

use super::{voxel_index, Grid, MultiscaleVolume, VoxelField, RES, VOXELS};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::bilinear_taps;
use crate::mpi::MultiplaneImage;

/// One MPI sample contributing to a voxel: `(plane, pixel, weight)`.
type Tap = (usize, usize, f64);

/// The eight MPI taps for a camera-frame point, or `None` when the point is
/// behind the camera, outside the image or outside the disparity range.
#[inline]
fn frustum_taps(mpi: &MultiplaneImage, q: &Vec3) -> Option<[Tap; 8]> {
    if q.z <= 0.0 {
        return None;
    }
    let cam = mpi.reference();
    let disp = 1.0 / q.z;
    let d = mpi.disparities();
    if disp < d[0] || disp > d[d.len() - 1] {
        return None;
    }
    let u = cam.fx * q.x / q.z + cam.cx;
    let v = cam.fy * q.y / q.z + cam.cy;
    let pixel = bilinear_taps(cam.width, cam.height, u, v)?;
    let upper = d.partition_point(|&x| x <= disp).clamp(1, d.len() - 1);
    let lower = upper - 1;
    let f = ((disp - d[lower]) / (d[upper] - d[lower])).clamp(0.0, 1.0);
    let mut taps = [(0, 0, 0.0); 8];
    for (n, (idx, w)) in pixel.iter().enumerate() {
        taps[n] = (lower, *idx, w * (1.0 - f));
        taps[n + 4] = (upper, *idx, w * f);
    }
    Some(taps)
}

fn check_alignment(mpi: &MultiplaneImage, vol: &MultiscaleVolume) -> Result<()> {
    if !mpi.reference().pose.approx_eq(vol.reference_pose(), 1e-6) {
        return Err(Error::Config(
            "volume was not laid out for this MPI's reference camera".into(),
        ));
    }
    Ok(())
}

/// Trilinearly resamples MPI RGBA onto every level of `vol`'s layout.
///
/// Voxel centers are mapped into the frustum (pixel position plus continuous
/// plane index) and interpolated across the two bracketing planes and four
/// bracketing pixels. Voxels outside the frustum become zero.
pub fn resample_mpi(mpi: &MultiplaneImage, vol: &MultiscaleVolume) -> Result<MultiscaleVolume> {
    check_alignment(mpi, vol)?;
    let planes = mpi.planes();
    let mut out = vol.clone();
    for level in 0..vol.num_levels() {
        let mut data = vec![[0.0f32; 4]; VOXELS];
        data.par_chunks_mut(RES * RES).enumerate().for_each(|(k, slab)| {
            for j in 0..RES {
                for i in 0..RES {
                    let q = vol.voxel_center_local(level, i, j, k);
                    let Some(taps) = frustum_taps(mpi, &q) else {
                        continue;
                    };
                    let mut acc = [0.0f64; 4];
                    for (plane, pixel, w) in taps {
                        let p = planes[plane].pixels()[pixel];
                        for c in 0..4 {
                            acc[c] += w * p[c] as f64;
                        }
                    }
                    slab[i + RES * j] = acc.map(|v| v as f32);
                }
            }
        });
        *out.grid_mut(level) = Grid { data };
    }
    Ok(out)
}

/// Transpose of [`resample_mpi`]: scatters a per-voxel cotangent back onto the
/// MPI planes. Returns one `[f64; 4]` per plane pixel.
pub fn resample_mpi_adjoint(
    mpi: &MultiplaneImage,
    vol: &MultiscaleVolume,
    cotangent: &VoxelField,
) -> Result<Vec<Vec<[f64; 4]>>> {
    check_alignment(mpi, vol)?;
    if cotangent.levels.len() != vol.num_levels() || cotangent.levels.iter().any(|l| l.len() != VOXELS) {
        return Err(Error::dimension("cotangent does not match the volume layout"));
    }
    let n = mpi.reference().width * mpi.reference().height;
    let mut grads = vec![vec![[0.0f64; 4]; n]; mpi.num_planes()];
    for (level, cot) in cotangent.levels.iter().enumerate() {
        for k in 0..RES {
            for j in 0..RES {
                for i in 0..RES {
                    let g = cot[voxel_index(i, j, k)];
                    if g == [0.0; 4] {
                        continue;
                    }
                    let q = vol.voxel_center_local(level, i, j, k);
                    let Some(taps) = frustum_taps(mpi, &q) else {
                        continue;
                    };
                    for (plane, pixel, w) in taps {
                        let dst = &mut grads[plane][pixel];
                        for c in 0..4 {
                            dst[c] += w * g[c];
                        }
                    }
                }
            }
        }
    }
    Ok(grads)
}
