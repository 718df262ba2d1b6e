//! Scene sequences on disk, training-example sampling with rejection rules,
//! and train/test splits.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{read_intrinsics, read_poses, Mat3, PinholeCamera, RigidTransform};
use crate::image::{DepthMap, ImageRGBA, DEFAULT_GAMMA};
use crate::io::{read_depth, read_png};

/// Image held in memory or loaded (and linearized) on first use.
#[derive(Debug)]
pub enum Source<T> {
    Memory(T),
    Path(PathBuf),
}

#[derive(Debug)]
pub struct Frame {
    pub image: Source<ImageRGBA>,
    pub camera: PinholeCamera,
    pub depth: Option<Source<DepthMap>>,
    stats: OnceLock<FrameStats>,
}

#[derive(Clone, Copy, Debug)]
struct FrameStats {
    linear_brightness: f64,
    encoded_brightness: f64,
    min_depth: Option<f64>,
    median_depth: Option<f64>,
}

impl Frame {
    pub fn new(image: Source<ImageRGBA>, camera: PinholeCamera, depth: Option<Source<DepthMap>>) -> Self {
        Self {
            image,
            camera,
            depth,
            stats: OnceLock::new(),
        }
    }

    fn stats(&self) -> Result<FrameStats> {
        if let Some(s) = self.stats.get() {
            return Ok(*s);
        }
        let loaded;
        let img = match &self.image {
            Source::Memory(img) => img,
            Source::Path(p) => {
                loaded = read_png(p, false)?;
                &loaded
            }
        };
        let (min_depth, median_depth) = match &self.depth {
            None => (None, None),
            Some(src) => {
                let loaded;
                let d = match src {
                    Source::Memory(d) => d,
                    Source::Path(p) => {
                        loaded = read_depth(p)?;
                        &loaded
                    }
                };
                (Some(d.min() as f64), d.median().map(|m| m as f64))
            }
        };
        let stats = FrameStats {
            linear_brightness: img.mean_rgb(),
            encoded_brightness: img.delinearize(DEFAULT_GAMMA)?.mean_rgb(),
            min_depth,
            median_depth,
        };
        Ok(*self.stats.get_or_init(|| stats))
    }
}

#[derive(Debug)]
pub struct Panorama {
    pub image: Source<ImageRGBA>,
    pub pose: RigidTransform,
}

/// Posed perspective frames and panoramas along one camera path, with
/// indices aligned between the two lists.
#[derive(Debug)]
pub struct SceneSequence {
    frames: Vec<Frame>,
    panoramas: Vec<Panorama>,
}

impl SceneSequence {
    pub fn new(frames: Vec<Frame>, panoramas: Vec<Panorama>) -> Result<Self> {
        if !frames.is_empty() && !panoramas.is_empty() && frames.len() != panoramas.len() {
            return Err(Error::Dataset(format!(
                "{} frames but {} panoramas",
                frames.len(),
                panoramas.len()
            )));
        }
        let has_depth = frames.first().is_some_and(|f| f.depth.is_some());
        if frames.iter().any(|f| f.depth.is_some() != has_depth) {
            return Err(Error::Dataset("depth maps must be given for all frames or none".into()));
        }
        Ok(Self { frames, panoramas })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn panoramas(&self) -> &[Panorama] {
        &self.panoramas
    }

    pub fn has_depth(&self) -> bool {
        self.frames.first().is_some_and(|f| f.depth.is_some())
    }
}

/// Options for reading a sequence directory.
#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Maps this library's camera axes (+X right, +Y down, +Z forward) to
    /// the dataset's camera axes; poses are right-multiplied by it.
    pub camera_axes: Option<Mat3>,
}

/// Reads `frames/%06d.png`, `panos/%06d.png`, `poses.txt`,
/// `intrinsics.txt` and optional `depth/%06d.pfm`. Panoramas share the
/// frame poses. Images are read lazily.
pub fn load_sequence(dir: &Path, opts: &LoadOptions) -> Result<SceneSequence> {
    let intrinsics = read_intrinsics(&dir.join("intrinsics.txt"))?;
    let mut poses = read_poses(&dir.join("poses.txt"))?;
    if let Some(axes) = &opts.camera_axes {
        let change = RigidTransform::from_approx(*axes, Default::default())?;
        poses = poses.iter().map(|p| p.compose(&change)).collect();
    }
    let numbered = |sub: &str, ext: &str| -> Vec<PathBuf> {
        (0..poses.len())
            .map(|i| dir.join(sub).join(format!("{i:06}.{ext}")))
            .take_while(|p| p.is_file())
            .collect()
    };
    let frame_paths = numbered("frames", "png");
    if frame_paths.len() != poses.len() {
        return Err(Error::Dataset(format!(
            "{}: {} poses but {} consecutive frames",
            dir.display(),
            poses.len(),
            frame_paths.len()
        )));
    }
    let depth_paths = numbered("depth", "pfm");
    if !depth_paths.is_empty() && depth_paths.len() != poses.len() {
        return Err(Error::Dataset(format!("{}: incomplete depth maps", dir.display())));
    }
    let pano_paths = numbered("panos", "png");
    if !pano_paths.is_empty() && pano_paths.len() != poses.len() {
        return Err(Error::Dataset(format!("{}: incomplete panoramas", dir.display())));
    }
    let frames = frame_paths
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            Frame::new(
                Source::Path(p),
                intrinsics.with_pose(poses[i]),
                depth_paths.get(i).map(|d| Source::Path(d.clone())),
            )
        })
        .collect();
    let panoramas = pano_paths
        .into_iter()
        .enumerate()
        .map(|(i, p)| Panorama {
            image: Source::Path(p),
            pose: poses[i],
        })
        .collect();
    SceneSequence::new(frames, panoramas)
}

/// Which color space the brightness rule measures in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BrightnessSpace {
    Linear,
    Encoded,
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub max_gap: usize,
    pub pano_window: usize,
    pub min_scene_depth: f64,
    pub min_baseline: f64,
    pub min_brightness: f64,
    pub brightness_space: BrightnessSpace,
    /// Enables the minimum-depth and panorama-displacement rules.
    pub depth_rules: bool,
    pub retry_budget: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            max_gap: 8,
            pano_window: 40,
            min_scene_depth: 0.1,
            min_baseline: 0.05,
            min_brightness: 0.1,
            brightness_space: BrightnessSpace::Linear,
            depth_rules: true,
            retry_budget: 64,
        }
    }
}

/// Three evenly spaced frames and a nearby panorama.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct TrainingExample {
    /// The two frames given as input.
    pub inputs: [usize; 2],
    /// The third frame, held out for supervision.
    pub held_out: usize,
    pub panorama: usize,
}

impl TrainingExample {
    /// The three frame indices in sequence order.
    pub fn triplet(&self) -> [usize; 3] {
        let mut t = [self.inputs[0], self.inputs[1], self.held_out];
        t.sort_unstable();
        t
    }

    pub fn central(&self) -> usize {
        self.triplet()[1]
    }
}

/// Why a drawn example was discarded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    /// A camera is closer to the scene than the minimum depth.
    TooClose,
    /// Adjacent cameras are too close to each other.
    SmallBaseline,
    /// Mean brightness is below the threshold.
    TooDark,
    /// The panorama does not move far enough into the scene.
    PanoramaNotInside,
}

impl Rejection {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rejection::TooClose => "too_close",
            Rejection::SmallBaseline => "small_baseline",
            Rejection::TooDark => "too_dark",
            Rejection::PanoramaNotInside => "panorama_not_inside",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_sequence(seq: &SceneSequence, cfg: &SamplerConfig) -> Result<()> {
    if seq.frames.is_empty() || seq.panoramas.is_empty() {
        return Err(Error::Dataset("sequence needs frames and panoramas".into()));
    }
    if cfg.depth_rules && !seq.has_depth() {
        return Err(Error::Dataset("depth maps are required by the depth rules".into()));
    }
    if cfg.max_gap == 0 {
        return Err(Error::Config("max_gap must be at least 1".into()));
    }
    Ok(())
}

/// Applies the rejection rules in order; `None` means the example passes.
pub fn check_example(seq: &SceneSequence, ex: &TrainingExample, cfg: &SamplerConfig) -> Result<Option<Rejection>> {
    check_sequence(seq, cfg)?;
    let t = ex.triplet();
    if t[2] >= seq.frames.len() || ex.panorama >= seq.panoramas.len() {
        return Err(Error::Dataset("example index out of range".into()));
    }
    let stats = t.iter().map(|&i| seq.frames[i].stats()).collect::<Result<Vec<_>>>()?;
    if cfg.depth_rules && stats.iter().any(|s| s.min_depth.unwrap_or(f64::INFINITY) < cfg.min_scene_depth) {
        return Ok(Some(Rejection::TooClose));
    }
    let center = |i: usize| seq.frames[i].camera.pose.center();
    if (center(t[0]) - center(t[1])).norm() < cfg.min_baseline || (center(t[1]) - center(t[2])).norm() < cfg.min_baseline {
        return Ok(Some(Rejection::SmallBaseline));
    }
    let brightness = stats
        .iter()
        .map(|s| match cfg.brightness_space {
            BrightnessSpace::Linear => s.linear_brightness,
            BrightnessSpace::Encoded => s.encoded_brightness,
        })
        .sum::<f64>()
        / 3.0;
    if brightness < cfg.min_brightness {
        return Ok(Some(Rejection::TooDark));
    }
    if cfg.depth_rules {
        let central = &seq.frames[t[1]].camera.pose;
        let moved = (seq.panoramas[ex.panorama].pose.center() - central.center()).dot(&central.forward());
        let median = stats[1]
            .median_depth
            .ok_or_else(|| Error::Dataset("empty depth map".into()))?;
        if moved <= median {
            return Ok(Some(Rejection::PanoramaNotInside));
        }
    }
    Ok(None)
}

/// Whether `ex` obeys the spacing constraints (gap in `[1, max_gap]`,
/// panorama within the window of the central frame).
pub fn satisfies_spacing(seq: &SceneSequence, ex: &TrainingExample, cfg: &SamplerConfig) -> bool {
    let t = ex.triplet();
    let gap = t[1] - t[0];
    gap >= 1
        && gap <= cfg.max_gap
        && t[2] - t[1] == gap
        && t[2] < seq.frames.len()
        && ex.panorama < seq.panoramas.len()
        && ex.panorama.abs_diff(t[1]) <= cfg.pano_window
}

/// Draws one spacing-valid tuple uniformly among all spacing-valid tuples.
fn draw(rng: &mut ChaCha8Rng, frames: usize, panos: usize, cfg: &SamplerConfig) -> (usize, usize, usize) {
    // Uniform proposals over a box that contains every valid tuple, kept
    // only when valid, give a uniform draw over the valid set.
    loop {
        let gap = rng.gen_range(1..=cfg.max_gap);
        let start = rng.gen_range(0..frames);
        let offset = rng.gen_range(0..=2 * cfg.pano_window) as i64 - cfg.pano_window as i64;
        let central = start + gap;
        let pano = central as i64 + offset;
        if start + 2 * gap < frames && pano >= 0 && (pano as usize) < panos {
            return (start, gap, pano as usize);
        }
    }
}

/// Samples a training example with the given seed.
///
/// Returns `Ok(Ok(example))` for the first draw passing every rule, or
/// `Ok(Err(reason))` with the last rejection once the retry budget is spent.
pub fn sample_example(
    seq: &SceneSequence,
    seed: u64,
    cfg: &SamplerConfig,
) -> Result<std::result::Result<TrainingExample, Rejection>> {
    check_sequence(seq, cfg)?;
    let (n, m) = (seq.frames.len(), seq.panoramas.len());
    let feasible = (1..=cfg.max_gap).any(|g| {
        (0..n.saturating_sub(2 * g)).any(|s| (s + g).saturating_sub(cfg.pano_window) < m)
    });
    if !feasible {
        return Err(Error::Dataset(format!(
            "no frame triplet fits in {n} frames with {m} panoramas"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..cfg.retry_budget.max(1) {
        let (start, gap, pano) = draw(&mut rng, n, m, cfg);
        let mut triplet = [start, start + gap, start + 2 * gap];
        let held = rng.gen_range(0..3);
        triplet.swap(held, 2);
        let ex = TrainingExample {
            inputs: {
                let mut i = [triplet[0], triplet[1]];
                i.sort_unstable();
                i
            },
            held_out: triplet[2],
            panorama: pano,
        };
        match check_example(seq, &ex, cfg)? {
            None => return Ok(Ok(ex)),
            Some(r) => last = Some(r),
        }
    }
    Ok(Err(last.expect("at least one draw")))
}

/// Seeded shuffle into `(train, test)` with `floor(n · test_fraction)` test
/// items.
pub fn split_sequences<T: Clone>(all: &[T], test_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let fraction = test_fraction.clamp(0.0, 1.0);
    let n_test = ((all.len() as f64 * fraction) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order[..n_test].iter().map(|&i| all[i].clone()).collect();
    let train = order[n_test..].iter().map(|&i| all[i].clone()).collect();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn sequence(n: usize, step: f64, brightness: f32, depth: f32) -> SceneSequence {
        let cam = PinholeCamera::new(10.0, 10.0, 4.0, 4.0, 8, 8, RigidTransform::identity()).unwrap();
        let frames = (0..n)
            .map(|i| {
                let pose = RigidTransform::from_translation(Vec3::new(i as f64 * step, 0.0, 0.0));
                Frame::new(
                    Source::Memory(ImageRGBA::filled(8, 8, [brightness, brightness, brightness, 1.0])),
                    cam.with_pose(pose),
                    Some(Source::Memory(DepthMap::constant(8, 8, depth))),
                )
            })
            .collect();
        let panoramas = (0..n)
            .map(|i| Panorama {
                image: Source::Memory(ImageRGBA::new(4, 2)),
                pose: RigidTransform::from_translation(Vec3::new(0.0, 0.0, i as f64)),
            })
            .collect();
        SceneSequence::new(frames, panoramas).unwrap()
    }

    #[test]
    fn split_counts() {
        let ten: Vec<usize> = (0..10).collect();
        let (train, test) = split_sequences(&ten, 0.1, 7);
        assert_eq!((train.len(), test.len()), (9, 1));
        assert_eq!(split_sequences(&ten, 0.1, 7), (train, test));
        let many: Vec<usize> = (0..1634).collect();
        let (train, test) = split_sequences(&many, 0.1, 1);
        assert_eq!(test.len(), 163);
        let mut all: Vec<usize> = train.into_iter().chain(test).collect();
        all.sort_unstable();
        assert_eq!(all, many);
    }

    #[test]
    fn crafted_rejections() {
        let cfg = SamplerConfig::default();
        assert_eq!(sample_example(&sequence(30, 0.0, 0.5, 2.0), 1, &cfg).unwrap(), Err(Rejection::SmallBaseline));
        assert_eq!(sample_example(&sequence(30, 0.1, 0.0, 2.0), 1, &cfg).unwrap(), Err(Rejection::TooDark));
        assert_eq!(sample_example(&sequence(30, 0.1, 0.5, 0.05), 1, &cfg).unwrap(), Err(Rejection::TooClose));
    }

    #[test]
    fn missing_depth_and_empty_sequences_are_errors() {
        let empty = SceneSequence::new(Vec::new(), Vec::new()).unwrap();
        assert!(matches!(sample_example(&empty, 0, &SamplerConfig::default()), Err(Error::Dataset(_))));
        let cam = PinholeCamera::new(10.0, 10.0, 4.0, 4.0, 8, 8, RigidTransform::identity()).unwrap();
        let seq = SceneSequence::new(
            vec![Frame::new(Source::Memory(ImageRGBA::new(8, 8)), cam, None)],
            vec![Panorama {
                image: Source::Memory(ImageRGBA::new(4, 2)),
                pose: RigidTransform::identity(),
            }],
        )
        .unwrap();
        assert!(matches!(sample_example(&seq, 0, &SamplerConfig::default()), Err(Error::Dataset(_))));
    }
}
