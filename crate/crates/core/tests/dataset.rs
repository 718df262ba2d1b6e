use std::collections::HashMap;
use std::fs;

use lightvol::dataset::{
    check_example, load_sequence, sample_example, satisfies_spacing, split_sequences, Frame, LoadOptions, Panorama,
    Rejection, SamplerConfig, SceneSequence, Source, TrainingExample,
};
use lightvol::geometry::{format_intrinsics, format_poses, PinholeCamera, RigidTransform, Vec3};
use lightvol::image::{DepthMap, ImageRGBA};
use lightvol::io::{write_depth, write_png};

fn camera(x: f64) -> PinholeCamera {
    let pose = RigidTransform::from_translation(Vec3::new(x, 0.0, 0.0));
    PinholeCamera::new(8.0, 8.0, 4.0, 3.0, 8, 6, pose).unwrap()
}

/// Frames on a line along +x, all bright and deep, with panoramas well
/// ahead of every frame.
fn easy_sequence(n: usize, gray: f32) -> SceneSequence {
    let frames = (0..n)
        .map(|i| {
            Frame::new(
                Source::Memory(ImageRGBA::filled(8, 6, [gray, gray, gray, 1.0])),
                camera(0.1 * i as f64),
                Some(Source::Memory(DepthMap::constant(8, 6, 0.5))),
            )
        })
        .collect();
    let panoramas = (0..n)
        .map(|i| Panorama {
            image: Source::Memory(ImageRGBA::filled(16, 8, [0.5; 4])),
            pose: RigidTransform::from_translation(Vec3::new(0.1 * i as f64, 0.0, 1.0)),
        })
        .collect();
    SceneSequence::new(frames, panoramas).unwrap()
}

fn small_cfg() -> SamplerConfig {
    SamplerConfig {
        max_gap: 3,
        pano_window: 2,
        ..SamplerConfig::default()
    }
}

/// Every spacing-valid (start, gap, panorama) tuple, found by brute force.
fn enumerate(n: usize, cfg: &SamplerConfig) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for start in 0..n {
        for gap in 1..=cfg.max_gap {
            for pano in 0..n {
                let ex = TrainingExample {
                    inputs: [start, start + gap],
                    held_out: start + 2 * gap,
                    panorama: pano,
                };
                if start + 2 * gap < n && satisfies_spacing(&easy_sequence(n, 0.8), &ex, cfg) {
                    out.push((start, gap, pano));
                }
            }
        }
    }
    out
}

#[test]
fn draws_are_uniform_over_valid_tuples() {
    let n = 10;
    let cfg = small_cfg();
    let seq = easy_sequence(n, 0.8);
    let valid = enumerate(n, &cfg);
    assert!(!valid.is_empty());
    let mut tuples: HashMap<(usize, usize, usize), usize> = valid.iter().map(|t| (*t, 0)).collect();
    let mut held_positions = [0usize; 3];
    let draws = 100 * valid.len();
    for seed in 0..draws as u64 {
        let ex = sample_example(&seq, seed, &cfg).unwrap().unwrap();
        let t = ex.triplet();
        *tuples.get_mut(&(t[0], t[1] - t[0], ex.panorama)).expect("tuple outside the valid set") += 1;
        held_positions[t.iter().position(|&i| i == ex.held_out).unwrap()] += 1;
    }
    for (t, count) in &tuples {
        assert!((50..=160).contains(count), "{t:?} drawn {count} times");
    }
    for count in held_positions {
        assert!((count as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.03, "{held_positions:?}");
    }
}

#[test]
fn dark_sequence_reports_too_dark() {
    let seq = easy_sequence(10, 0.01);
    assert_eq!(sample_example(&seq, 3, &small_cfg()).unwrap(), Err(Rejection::TooDark));
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let seq = easy_sequence(12, 0.8);
    let cfg = small_cfg();
    for seed in 0..20 {
        assert_eq!(sample_example(&seq, seed, &cfg).unwrap(), sample_example(&seq, seed, &cfg).unwrap());
    }
}

#[test]
fn sequence_loads_from_disk_lazily() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for sub in ["frames", "panos", "depth"] {
        fs::create_dir(root.join(sub)).unwrap();
    }
    let n = 7;
    let poses: Vec<_> = (0..n).map(|i| camera(0.1 * i as f64).pose).collect();
    fs::write(root.join("poses.txt"), format_poses(&poses)).unwrap();
    fs::write(root.join("intrinsics.txt"), format_intrinsics(&camera(0.0))).unwrap();
    for i in 0..n {
        write_png(&root.join(format!("frames/{i:06}.png")), &ImageRGBA::filled(8, 6, [0.9, 0.8, 0.7, 1.0]), true).unwrap();
        write_png(&root.join(format!("panos/{i:06}.png")), &ImageRGBA::filled(16, 8, [0.5; 4]), true).unwrap();
        write_depth(&root.join(format!("depth/{i:06}.pfm")), &DepthMap::constant(8, 6, 2.0)).unwrap();
    }
    let seq = load_sequence(root, &LoadOptions::default()).unwrap();
    assert_eq!(seq.frames().len(), n);
    assert_eq!(seq.panoramas().len(), n);
    assert!(seq.has_depth());
    assert!(seq.frames()[3].camera.pose.approx_eq(&poses[3], 1e-6));
    assert!(matches!(seq.frames()[0].image, Source::Path(_)));

    // Panoramas share the frame poses, so they never move into the scene.
    let ex = TrainingExample {
        inputs: [1, 2],
        held_out: 3,
        panorama: 2,
    };
    let cfg = small_cfg();
    assert_eq!(check_example(&seq, &ex, &cfg).unwrap(), Some(Rejection::PanoramaNotInside));
    let relaxed = SamplerConfig {
        depth_rules: false,
        ..cfg
    };
    assert_eq!(check_example(&seq, &ex, &relaxed).unwrap(), None);
}

#[test]
fn missing_frames_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir(root.join("frames")).unwrap();
    let poses: Vec<_> = (0..3).map(|i| camera(0.1 * i as f64).pose).collect();
    fs::write(root.join("poses.txt"), format_poses(&poses)).unwrap();
    fs::write(root.join("intrinsics.txt"), format_intrinsics(&camera(0.0))).unwrap();
    write_png(&root.join("frames/000000.png"), &ImageRGBA::filled(8, 6, [0.5; 4]), true).unwrap();
    assert!(load_sequence(root, &LoadOptions::default()).is_err());
}

#[test]
fn split_is_a_seeded_partition() {
    let all: Vec<usize> = (0..23).collect();
    let (train, test) = split_sequences(&all, 0.2, 9);
    assert_eq!(test.len(), 4);
    assert_eq!(train.len(), 19);
    let mut joined: Vec<usize> = train.iter().chain(&test).copied().collect();
    joined.sort_unstable();
    assert_eq!(joined, all);
    assert_eq!(split_sequences(&all, 0.2, 9), (train, test));
}
