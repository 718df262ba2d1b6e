use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use lightvol::dataset::{load_sequence, sample_example, BrightnessSpace, LoadOptions, SamplerConfig};
use lightvol::eval::{observed_mask, psnr, psnr_masked, rgb_angular_error, rgb_angular_error_masked, DEFAULT_MASK_THRESHOLD};
use lightvol::geometry::{format_intrinsics, format_poses, read_intrinsics, read_poses, RigidTransform, Vec3};
use lightvol::io;
use lightvol::mpi::mpi_from_depth;
use lightvol::relight::{read_scene, relight_and_composite, LightingMode};
use lightvol::render::{render_oracle, render_rays, render_spheres, RenderConfig, DEFAULT_ORACLE_STEPS};
use lightvol::synth::{box_room_cameras, BoxRoom};
use lightvol::volume::{
    complete, layout_levels, resample_mpi, Completer, ConstantAmbientCompleter, IdentityCompleter,
    PanoramaOracleCompleter, RadiusModel, DEFAULT_LEVELS, UNOBSERVED_ALPHA,
};

#[derive(Parser)]
#[command(name = "lightvol", version, about = "Volumetric lighting from multiplane images")]
struct Cli {
    /// Worker threads for rendering stages (0 = all cores).
    #[arg(long, global = true, env = "LIGHTVOL_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or render multiplane images.
    #[command(subcommand)]
    Mpi(MpiCommand),
    /// Resample or complete multiscale volumes.
    #[command(subcommand)]
    Volume(VolumeCommand),
    /// Render environment maps.
    #[command(subcommand)]
    Envmap(EnvmapCommand),
    /// Relight virtual objects and composite them into a photo.
    Relight(RelightArgs),
    /// Score predicted environment maps against ground truth.
    Eval(EvalArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Generate synthetic inputs.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Subcommand)]
enum MpiCommand {
    /// MPI from a reference image and its depth map.
    Build(MpiBuildArgs),
    /// Render an MPI from a new pose.
    Render(MpiRenderArgs),
}

#[derive(Args)]
struct MpiBuildArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Source view of the stereo pair; checked against the intrinsics.
    #[arg(long)]
    src: Option<PathBuf>,
    /// Pose file; the first line is the reference camera.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    depth: PathBuf,
    #[arg(long, default_value_t = 64)]
    planes: usize,
    #[arg(long, default_value_t = 1.0)]
    znear: f64,
    #[arg(long, default_value_t = 100.0)]
    zfar: f64,
    /// Treat PNG values as linear instead of gamma 2.2.
    #[arg(long)]
    linear: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MpiRenderArgs {
    #[arg(long)]
    mpi: PathBuf,
    /// Pose file; the first line is the target camera.
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    linear: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum VolumeCommand {
    /// Resample an MPI into nested cubes.
    Resample(ResampleArgs),
    /// Fill unobserved voxels.
    Complete(CompleteArgs),
}

#[derive(Args)]
struct ResampleArgs {
    #[arg(long)]
    mpi: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    levels: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompleterKind {
    Identity,
    Ambient,
    Pano,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    vol: PathBuf,
    #[arg(long, value_enum)]
    completer: CompleterKind,
    /// Panorama image for `pano`.
    #[arg(long)]
    pano: Option<PathBuf>,
    /// Pose file for the panorama (first line).
    #[arg(long)]
    pano_pose: Option<PathBuf>,
    /// Constant scene distance around the panorama.
    #[arg(long, conflicts_with = "pano_depth")]
    radius: Option<f64>,
    /// Per-pixel radial distance map (PFM) for the panorama.
    #[arg(long)]
    pano_depth: Option<PathBuf>,
    /// Fill color for `ambient`, as r,g,b.
    #[arg(long, value_parser = parse_triple, default_value = "0.5,0.5,0.5")]
    ambient_color: Vector3<f64>,
    /// Fill alpha for `ambient`.
    #[arg(long, default_value_t = 0.05)]
    ambient_alpha: f32,
    /// Alpha below which a voxel counts as unobserved.
    #[arg(long, default_value_t = UNOBSERVED_ALPHA)]
    threshold: f32,
    #[arg(long)]
    linear: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EnvmapCommand {
    /// Render the environment map at a point.
    Render(EnvmapArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Spheres,
    Rays,
    Oracle,
}

#[derive(Args)]
struct RenderOptions {
    #[arg(long, default_value_t = lightvol::render::ENVMAP_HEIGHT)]
    height: usize,
    #[arg(long, default_value_t = lightvol::render::ENVMAP_WIDTH)]
    width: usize,
}

#[derive(Args)]
struct EnvmapArgs {
    #[arg(long)]
    vol: PathBuf,
    /// Position as x,y,z in world coordinates.
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    at: Vector3<f64>,
    #[arg(long, value_enum, default_value = "rays")]
    method: Method,
    /// Samples per ray for the oracle.
    #[arg(long, default_value_t = DEFAULT_ORACLE_STEPS)]
    steps: usize,
    #[command(flatten)]
    size: RenderOptions,
    #[arg(long)]
    out: PathBuf,
    /// Also write a gamma-encoded PNG.
    #[arg(long)]
    preview: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "per_point")]
    PerPoint,
    Centroid,
}

#[derive(Args)]
struct RelightArgs {
    #[arg(long)]
    photo: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    /// Pose file; the first line is the photo's camera.
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    vol: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_enum, default_value = "per_point", value_name = "MODE")]
    mode: Mode,
    #[command(flatten)]
    size: RenderOptions,
    #[arg(long)]
    linear: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted environment maps, `<id>.pfm`.
    #[arg(long)]
    pred_dir: PathBuf,
    /// Ground-truth maps with matching names.
    #[arg(long)]
    gt_dir: PathBuf,
    /// Observed-only volumes `<id>.lvb` with query points `<id>.at`.
    #[arg(long)]
    observed_vol_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Draw one training example from a sequence directory.
    Sample(SampleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Linear,
    Encoded,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    seq: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the rules that need depth maps.
    #[arg(long)]
    no_depth_rules: bool,
    #[arg(long, value_enum, default_value = "linear")]
    brightness: Space,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Six-color box room: stereo views, depth, panorama and cameras.
    Boxroom(BoxroomArgs),
}

#[derive(Args)]
struct BoxroomArgs {
    /// Panorama height; its width is twice this.
    #[arg(long, default_value_t = 240)]
    pano_height: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_triple(s: &str) -> std::result::Result<Vector3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(format!("expected three finite comma-separated numbers, got '{s}'")),
    }
}

fn first_pose(path: &Path) -> Result<RigidTransform> {
    read_poses(path)?
        .into_iter()
        .next()
        .ok_or_else(|| anyhow!(lightvol::Error::Format {
            path: path.into(),
            message: "no pose found".into()
        }))
}

fn mpi_build(a: &MpiBuildArgs) -> Result<()> {
    let cam = read_intrinsics(&a.intrinsics)?.with_pose(first_pose(&a.poses)?);
    let img = io::read_png(&a.reference, a.linear)?;
    if img.width() != cam.width || img.height() != cam.height {
        bail!(lightvol::Error::Dimension(format!(
            "reference image is {}x{}, intrinsics say {}x{}",
            img.width(),
            img.height(),
            cam.width,
            cam.height
        )));
    }
    if let Some(src) = &a.src {
        let s = io::read_png(src, a.linear)?;
        if s.width() != cam.width || s.height() != cam.height {
            bail!(lightvol::Error::Dimension("source image does not match the intrinsics".into()));
        }
    }
    let depth = io::read_depth(&a.depth)?;
    let mpi = mpi_from_depth(&img, &depth, &cam, a.planes, a.znear, a.zfar)?;
    io::write_mpi(&a.out, &mpi)?;
    Ok(())
}

fn mpi_render(a: &MpiRenderArgs) -> Result<()> {
    let mpi = io::read_mpi(&a.mpi)?;
    let target = mpi.reference().with_pose(first_pose(&a.pose)?);
    let img = lightvol::mpi::render_mpi(&mpi, &target)?;
    io::write_png(&a.out, &img, a.linear)?;
    Ok(())
}

fn volume_resample(a: &ResampleArgs) -> Result<()> {
    let mpi = io::read_mpi(&a.mpi)?;
    let layout = layout_levels(mpi.reference(), mpi.z_far(), a.levels)?;
    io::write_volume(&a.out, &resample_mpi(&mpi, &layout)?)?;
    Ok(())
}

fn volume_complete(a: &CompleteArgs) -> Result<()> {
    let vol = io::read_volume(&a.vol)?;
    let completer: Box<dyn Completer> = match a.completer {
        CompleterKind::Identity => Box::new(IdentityCompleter),
        CompleterKind::Ambient => {
            let c = a.ambient_color;
            Box::new(ConstantAmbientCompleter::new([c.x as f32, c.y as f32, c.z as f32], a.ambient_alpha).with_threshold(a.threshold))
        }
        CompleterKind::Pano => {
            let usage = |m: &str| anyhow!(lightvol::Error::Config(m.into()));
            let pano = io::read_png(a.pano.as_ref().ok_or_else(|| usage("--pano is required"))?, a.linear)?;
            let pose = first_pose(a.pano_pose.as_ref().ok_or_else(|| usage("--pano-pose is required"))?)?;
            let radius = match (&a.radius, &a.pano_depth) {
                (Some(r), None) => RadiusModel::Fixed(*r),
                (None, Some(p)) => RadiusModel::PerPixel(io::read_depth(p)?),
                _ => return Err(usage("give exactly one of --radius and --pano-depth")),
            };
            Box::new(PanoramaOracleCompleter::new(pano, pose, radius)?.with_threshold(a.threshold))
        }
    };
    io::write_volume(&a.out, &complete(&vol, completer.as_ref())?)?;
    Ok(())
}

fn envmap_render(a: &EnvmapArgs) -> Result<()> {
    let vol = io::read_volume(&a.vol)?;
    let cfg = RenderConfig::default().with_resolution(a.size.height, a.size.width);
    let orientation = *vol.reference_pose().rotation();
    let x = Vec3::from(a.at);
    let env = match a.method {
        Method::Spheres => render_spheres(&vol, &x, &orientation, &cfg)?,
        Method::Rays => render_rays(&vol, &x, &orientation, &cfg)?,
        Method::Oracle => render_oracle(&vol, &x, &orientation, &cfg, a.steps)?,
    };
    io::write_pfm(&a.out, &io::envmap_to_pfm(&env))?;
    if let Some(p) = &a.preview {
        io::write_png(p, &io::envmap_image(&env), false)?;
    }
    Ok(())
}

fn relight(a: &RelightArgs) -> Result<()> {
    let cam = read_intrinsics(&a.intrinsics)?.with_pose(first_pose(&a.pose)?);
    let photo = io::read_png(&a.photo, a.linear)?;
    let vol = io::read_volume(&a.vol)?;
    let objects = read_scene(&a.scene)?;
    let mode = match a.mode {
        Mode::PerPoint => LightingMode::PerPoint,
        Mode::Centroid => LightingMode::Centroid,
    };
    let cfg = RenderConfig::default().with_resolution(a.size.height, a.size.width);
    let out = relight_and_composite(&photo, &cam, &objects, &vol, mode, &cfg)?;
    io::write_png(&a.out, &out, a.linear)?;
    Ok(())
}

fn csv_number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.6}")
    }
}

fn read_envmap(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    let pfm = io::read_pfm(path)?;
    let rgb = io::pfm_rgb(&pfm).map_err(|m| lightvol::Error::Format {
        path: path.into(),
        message: m,
    })?;
    Ok((pfm.width, pfm.height, rgb))
}

fn read_point(path: &Path) -> Result<Vec3> {
    let text = std::fs::read_to_string(path).map_err(|e| lightvol::Error::Io {
        path: path.into(),
        source: e,
    })?;
    let v: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| lightvol::Error::Format {
            path: path.into(),
            message: format!("{e}"),
        })?;
    match v.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => bail!(lightvol::Error::Format {
            path: path.into(),
            message: "expected three coordinates".into()
        }),
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut ids: Vec<String> = std::fs::read_dir(&a.pred_dir)
        .map_err(|e| lightvol::Error::Io {
            path: a.pred_dir.clone(),
            source: e,
        })?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension().is_some_and(|x| x == "pfm")).then(|| p.file_stem()?.to_str().map(String::from))?
        })
        .collect();
    ids.sort();
    let mut csv = String::from("id,psnr_all,angerr_all,psnr_observed,angerr_observed\n");
    for id in &ids {
        let (w, h, pred) = read_envmap(&a.pred_dir.join(format!("{id}.pfm")))?;
        let (gw, gh, gt) = read_envmap(&a.gt_dir.join(format!("{id}.pfm")))?;
        if (w, h) != (gw, gh) {
            bail!(lightvol::Error::Dimension(format!("{id}: prediction {w}x{h}, ground truth {gw}x{gh}")));
        }
        let p_all = psnr(&pred, &gt, 1.0)?;
        let a_all = rgb_angular_error(&pred, &gt)?;
        let (p_obs, a_obs) = match &a.observed_vol_dir {
            Some(dir) => {
                let vol = io::read_volume(&dir.join(format!("{id}.lvb")))?;
                let x = read_point(&dir.join(format!("{id}.at")))?;
                let cfg = RenderConfig::default().with_resolution(h, w);
                let mask = observed_mask(&vol, &x, vol.reference_pose().rotation(), &cfg, DEFAULT_MASK_THRESHOLD)?;
                (
                    psnr_masked(&pred, &gt, Some(&mask), 1.0)?,
                    rgb_angular_error_masked(&pred, &gt, Some(&mask))?,
                )
            }
            None => (f64::NAN, f64::NAN),
        };
        writeln!(
            csv,
            "{id},{},{},{},{}",
            csv_number(p_all),
            csv_number(a_all),
            csv_number(p_obs),
            csv_number(a_obs)
        )?;
    }
    std::fs::write(&a.out, csv).map_err(|e| lightvol::Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    Ok(())
}

fn dataset_sample(a: &SampleArgs) -> Result<()> {
    let seq = load_sequence(&a.seq, &LoadOptions::default())?;
    let cfg = SamplerConfig {
        depth_rules: !a.no_depth_rules,
        brightness_space: match a.brightness {
            Space::Linear => BrightnessSpace::Linear,
            Space::Encoded => BrightnessSpace::Encoded,
        },
        ..SamplerConfig::default()
    };
    let json = match sample_example(&seq, a.seed, &cfg)? {
        Ok(ex) => serde_json::json!({ "status": "accepted", "seed": a.seed, "example": ex }),
        Err(reason) => serde_json::json!({ "status": "rejected", "seed": a.seed, "reason": reason }),
    };
    let text = serde_json::to_string_pretty(&json)? + "\n";
    std::fs::write(&a.out, text).map_err(|e| lightvol::Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    Ok(())
}

fn synth_boxroom(a: &BoxroomArgs) -> Result<()> {
    let out = &a.out;
    std::fs::create_dir_all(out).map_err(|e| lightvol::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let room = BoxRoom::default();
    let (reference, source) = box_room_cameras();
    let (ref_img, depth) = room.render_view(&reference);
    let (src_img, _) = room.render_view(&source);
    let pano_pose = RigidTransform::from_translation(room.center());
    let (pano, dist) = room.render_panorama(&pano_pose, a.pano_height, 2 * a.pano_height);
    let write = |name: &str, text: String| {
        std::fs::write(out.join(name), text).map_err(|e| lightvol::Error::Io {
            path: out.join(name),
            source: e,
        })
    };
    io::write_png(&out.join("ref.png"), &ref_img, false)?;
    io::write_png(&out.join("src.png"), &src_img, false)?;
    io::write_depth(&out.join("depth.pfm"), &depth)?;
    io::write_png(&out.join("pano.png"), &pano, false)?;
    io::write_depth(&out.join("pano_depth.pfm"), &dist)?;
    write("poses.txt", format_poses(&[reference.pose, source.pose]))?;
    write("intrinsics.txt", format_intrinsics(&reference))?;
    write("pano_pose.txt", format_poses(&[pano_pose]))?;
    let c = room.center();
    write("center.txt", format!("{},{},{}\n", c.x, c.y, c.z))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Mpi(MpiCommand::Build(a)) => mpi_build(a),
        Command::Mpi(MpiCommand::Render(a)) => mpi_render(a),
        Command::Volume(VolumeCommand::Resample(a)) => volume_resample(a),
        Command::Volume(VolumeCommand::Complete(a)) => volume_complete(a),
        Command::Envmap(EnvmapCommand::Render(a)) => envmap_render(a),
        Command::Relight(a) => relight(a),
        Command::Eval(a) => eval(a),
        Command::Dataset(DatasetCommand::Sample(a)) => dataset_sample(a),
        Command::Synth(SynthCommand::Boxroom(a)) => synth_boxroom(a),
    }
}

/// `error: <kind>: <message>` on one line.
fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<lightvol::Error>())
        .map(|e| e.kind())
        .unwrap_or("internal");
    let msg = err.chain().map(|e| e.to_string()).collect::<Vec<_>>();
    // Library errors already embed their sources in the message.
    let msg = if err.downcast_ref::<lightvol::Error>().is_some() {
        msg[0].clone()
    } else {
        msg.join(": ")
    };
    format!("error: {kind}: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                e.exit();
            }
            let text = e.to_string();
            let first = text
                .lines()
                .map(|l| l.trim())
                .find(|l| !l.is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
