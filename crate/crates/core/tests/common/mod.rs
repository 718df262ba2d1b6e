#![allow(dead_code)]

use lightvol::geometry::{PinholeCamera, RigidTransform, Vec3};
use lightvol::mpi::mpi_from_depth;
use lightvol::synth::{box_room_cameras, BoxRoom, SmoothField};
use lightvol::volume::{
    complete, layout_levels, resample_mpi, MultiscaleVolume, PanoramaOracleCompleter, RadiusModel,
};

pub fn small_camera() -> PinholeCamera {
    PinholeCamera::new(50.0, 50.0, 32.0, 24.0, 64, 48, RigidTransform::identity()).unwrap()
}

/// Five-level layout around the identity camera, filled with a smooth
/// random field.
pub fn smooth_volume(seed: u64, max_alpha: f64) -> MultiscaleVolume {
    let layout = layout_levels(&small_camera(), 10.0, 5).unwrap();
    SmoothField::new(seed, 3, max_alpha).fill(&layout)
}

pub struct BoxRoomRun {
    pub room: BoxRoom,
    pub observed: MultiscaleVolume,
    pub completed: MultiscaleVolume,
}

/// Reference view and depth, MPI from depth, resampling and panorama
/// completion from the room center.
pub fn box_room_pipeline(pano_height: usize) -> BoxRoomRun {
    let room = BoxRoom::default();
    let (reference, _) = box_room_cameras();
    let (img, depth) = room.render_view(&reference);
    let mpi = mpi_from_depth(&img, &depth, &reference, 64, 1.0, 10.0).unwrap();
    let layout = layout_levels(&reference, 10.0, 5).unwrap();
    let observed = resample_mpi(&mpi, &layout).unwrap();
    let pano_pose = RigidTransform::from_translation(room.center());
    let (pano, dist) = room.render_panorama(&pano_pose, pano_height, 2 * pano_height);
    let completer = PanoramaOracleCompleter::new(pano, pano_pose, RadiusModel::PerPixel(dist)).unwrap();
    let completed = complete(&observed, &completer).unwrap();
    BoxRoomRun {
        room,
        observed,
        completed,
    }
}

pub fn l1_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>())
        .sum();
    sum / (3 * a.len()) as f64
}

pub fn point_in_finest(vol: &MultiscaleVolume, u: [f64; 3]) -> Vec3 {
    let g = vol.levels().last().unwrap().geometry;
    let h = g.side / 2.0 * 0.8;
    g.center + g.orientation * Vec3::new(u[0] * h, u[1] * h, u[2] * h)
}
