use lightvol::geometry::{PinholeCamera, RigidTransform, Vec3};
use lightvol::image::{DepthMap, ImageRGBA};
use lightvol::mpi::{apply_homography, build_psv, mpi_from_depth, plane_disparities, plane_homography, render_mpi};

const PLANES: usize = 10;

fn camera_at(x: f64) -> PinholeCamera {
    let pose = RigidTransform::from_translation(Vec3::new(x, 0.0, 0.0));
    PinholeCamera::new(40.0, 40.0, 24.0, 18.0, 48, 36, pose).unwrap()
}

fn texture(p: &Vec3) -> f32 {
    (0.5 + 0.4 * (3.0 * p.x).sin() * (2.0 * p.y).cos()) as f32
}

/// View of a textured fronto-parallel quad filling the frame at depth `z`.
fn view_of_quad(cam: &PinholeCamera, z: f64) -> ImageRGBA {
    ImageRGBA::from_fn(cam.width, cam.height, |x, y| {
        let ray = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
        let p = ray.at((z - ray.origin.z) / ray.direction.z);
        let t = texture(&p);
        [t, 1.0 - t, 0.3, 1.0]
    })
}

fn plane_depth(k: usize) -> f64 {
    1.0 / plane_disparities(PLANES, 1.0, 10.0).unwrap()[k]
}

fn mean_abs_over_covered(a: &ImageRGBA, b: &ImageRGBA, margin: usize) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0);
    for y in margin..a.height() - margin {
        for x in margin..a.width() - margin {
            let (p, q) = (a.get(x, y), b.get(x, y));
            if p[3] < 0.999 {
                continue;
            }
            sum += (0..3).map(|c| (p[c] - q[c]).abs() as f64).sum::<f64>() / 3.0;
            n += 1;
        }
    }
    (sum / n.max(1) as f64, n)
}

#[test]
fn homography_matches_unproject_then_project() {
    let (reference, source) = (camera_at(0.0), camera_at(0.3));
    for depth in [1.5, 4.0, 9.0] {
        let h = plane_homography(&reference, &source, depth).unwrap();
        for (u, v) in [(3.5, 2.5), (24.0, 18.0), (40.25, 30.75)] {
            let p = reference.unproject(u, v, depth).unwrap();
            let (expected, _) = source.project(&p).unwrap();
            let (su, sv) = apply_homography(&h, u, v).unwrap();
            assert!((su - expected.x).abs() < 1e-9 && (sv - expected.y).abs() < 1e-9);
        }
    }
}

#[test]
fn sweep_aligns_the_quad_only_at_its_depth() {
    let (reference, source) = (camera_at(0.0), camera_at(0.3));
    let k = 6;
    let z = plane_depth(k);
    let ref_img = view_of_quad(&reference, z);
    let src_img = view_of_quad(&source, z);
    let psv = build_psv(&ref_img, &reference, &src_img, &source, PLANES, 1.0, 10.0).unwrap();
    let (aligned, n) = mean_abs_over_covered(&psv.slices()[k], &ref_img, 1);
    assert!(n > 500, "{n}");
    assert!(aligned < 2e-3, "{aligned}");
    for other in [k - 2, k + 2] {
        let (off, _) = mean_abs_over_covered(&psv.slices()[other], &ref_img, 1);
        assert!(off > 10.0 * aligned, "slice {other}: {off} vs {aligned}");
    }
}

#[test]
fn depth_mpi_renders_the_novel_view() {
    let (reference, source) = (camera_at(0.0), camera_at(0.3));
    let z = plane_depth(4);
    let ref_img = view_of_quad(&reference, z);
    let depth = DepthMap::constant(reference.width, reference.height, z as f32);
    let mpi = mpi_from_depth(&ref_img, &depth, &reference, PLANES, 1.0, 10.0).unwrap();
    let rendered = render_mpi(&mpi, &source).unwrap();
    let (err, n) = mean_abs_over_covered(&rendered, &view_of_quad(&source, z), 1);
    assert!(n > 500, "{n}");
    assert!(err < 2e-3, "{err}");
}

#[test]
fn depth_mpi_reprojects_exactly_at_the_reference() {
    let reference = camera_at(0.0);
    let img = view_of_quad(&reference, 3.0);
    let depth = DepthMap::new(
        reference.width,
        reference.height,
        (0..reference.width * reference.height).map(|i| 1.5 + (i % 17) as f32 * 0.4).collect(),
    )
    .unwrap();
    let mpi = mpi_from_depth(&img, &depth, &reference, 32, 1.0, 10.0).unwrap();
    let out = render_mpi(&mpi, &reference).unwrap();
    let (err, n) = mean_abs_over_covered(&out, &img, 0);
    assert_eq!(n, reference.width * reference.height);
    assert!(err < 1e-5, "{err}");
}
