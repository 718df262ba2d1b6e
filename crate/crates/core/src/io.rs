//! File formats: PFM float images, gamma-encoded PNG and the `.lvb` binary
//! container for MPIs and volumes.
//!
//! `.lvb` layout (little-endian): magic `LVB1`, u32 kind (1 = MPI,
//! 2 = volume), then the payload.
//!
//! * Volume: u32 level count; per level f32 side, f32[3] world center,
//!   u32 resolution (64), then RGBA f32 voxels with x fastest, then y, then
//!   z. A trailing `POSE` tag and 12 f32 values (row-major 3×4) record the
//!   reference pose; files without it get identity axes centered on level 0.
//! * MPI: camera block (f32 fx fy cx cy, u32 width height, f32[12] pose),
//!   u32 plane count, f32 disparities, then each plane's RGBA f32 pixels in
//!   row-major order.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, PinholeCamera, RigidTransform, Vec3};
use crate::image::{DepthMap, ImageRGBA, DEFAULT_GAMMA};
use crate::mpi::MultiplaneImage;
use crate::render::EnvironmentMap;
use crate::volume::{Grid, LevelGeometry, MultiscaleVolume, VolumeLevel, RES, VOXELS};

pub const LVB_MAGIC: &[u8; 4] = b"LVB1";
pub const LVB_KIND_MPI: u32 = 1;
pub const LVB_KIND_VOLUME: u32 = 2;
const POSE_TAG: &[u8; 4] = b"POSE";

/// Contents of an `.lvb` file.
#[derive(Clone, Debug, PartialEq)]
pub enum Lvb {
    Mpi(MultiplaneImage),
    Volume(MultiscaleVolume),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }

    fn f32s(&mut self, v: &[f32]) {
        self.0.reserve(v.len() * 4);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn pose(&mut self, pose: &RigidTransform) {
        for v in pose.to_row_major() {
            self.f32(v);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.data.len() - self.pos < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f64, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn rgba(&mut self, count: usize) -> std::result::Result<Vec<[f32; 4]>, String> {
        let bytes = self.take(count.checked_mul(16).ok_or("size overflow")?)?;
        Ok(bytes
            .chunks_exact(16)
            .map(|c| std::array::from_fn(|i| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap())))
            .collect())
    }

    fn pose(&mut self) -> std::result::Result<RigidTransform, String> {
        let mut v = [0.0; 12];
        for x in &mut v {
            *x = self.f32()?;
        }
        let r = Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        // Exact values rather than re-orthonormalized ones, so that a
        // rewrite reproduces the same bytes.
        RigidTransform::new(r, Vec3::new(v[3], v[7], v[11])).map_err(|e| e.to_string())
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

pub fn encode_volume(vol: &MultiscaleVolume) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(16 + vol.num_levels() * (VOXELS * 16 + 24)));
    w.0.extend_from_slice(LVB_MAGIC);
    w.u32(LVB_KIND_VOLUME);
    w.u32(vol.num_levels() as u32);
    for level in vol.levels() {
        let g = &level.geometry;
        w.f32(g.side);
        for c in g.center.iter() {
            w.f32(*c);
        }
        w.u32(RES as u32);
        for v in level.grid.voxels() {
            w.f32s(v);
        }
    }
    w.0.extend_from_slice(POSE_TAG);
    w.pose(vol.reference_pose());
    w.0
}

pub fn encode_mpi(mpi: &MultiplaneImage) -> Vec<u8> {
    let cam = mpi.reference();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(LVB_MAGIC);
    w.u32(LVB_KIND_MPI);
    for v in [cam.fx, cam.fy, cam.cx, cam.cy] {
        w.f32(v);
    }
    w.u32(cam.width as u32);
    w.u32(cam.height as u32);
    w.pose(&cam.pose);
    w.u32(mpi.num_planes() as u32);
    for d in mpi.disparities() {
        w.f32(*d);
    }
    for p in mpi.planes() {
        for px in p.pixels() {
            w.f32s(px);
        }
    }
    w.0
}

pub fn decode_lvb(data: &[u8]) -> std::result::Result<Lvb, String> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4)? != LVB_MAGIC {
        return Err("bad magic, expected LVB1".into());
    }
    let out = match r.u32()? {
        LVB_KIND_VOLUME => {
            let count = r.u32()? as usize;
            if count == 0 || count > crate::volume::MAX_LEVELS {
                return Err(format!("invalid level count {count}"));
            }
            let mut raw = Vec::with_capacity(count);
            for i in 0..count {
                let side = r.f32()?;
                let center = Vec3::new(r.f32()?, r.f32()?, r.f32()?);
                let res = r.u32()?;
                if res as usize != RES {
                    return Err(format!("level {i}: resolution {res}, expected {RES}"));
                }
                let grid = Grid::from_voxels(r.rgba(VOXELS)?).map_err(|e| e.to_string())?;
                raw.push((side, center, grid));
            }
            let pose = if r.done() {
                RigidTransform::from_translation(raw[0].1)
            } else {
                if r.take(4)? != POSE_TAG {
                    return Err("unexpected trailing data".into());
                }
                r.pose()?
            };
            let levels = raw
                .into_iter()
                .map(|(side, center, grid)| VolumeLevel {
                    grid,
                    geometry: LevelGeometry {
                        center,
                        side,
                        orientation: *pose.rotation(),
                    },
                })
                .collect();
            Lvb::Volume(MultiscaleVolume::new(levels, pose).map_err(|e| e.to_string())?)
        }
        LVB_KIND_MPI => {
            let (fx, fy, cx, cy) = (r.f32()?, r.f32()?, r.f32()?, r.f32()?);
            let (w, h) = (r.u32()? as usize, r.u32()? as usize);
            let pose = r.pose()?;
            let cam = PinholeCamera::new(fx, fy, cx, cy, w, h, pose).map_err(|e| e.to_string())?;
            let count = r.u32()? as usize;
            if count > 1 << 16 {
                return Err(format!("implausible plane count {count}"));
            }
            let disparities = (0..count).map(|_| r.f32()).collect::<std::result::Result<Vec<_>, _>>()?;
            let planes = (0..count)
                .map(|_| ImageRGBA::from_pixels(w, h, r.rgba(w * h)?).map_err(|e| e.to_string()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Lvb::Mpi(MultiplaneImage::new(cam, planes, disparities).map_err(|e| e.to_string())?)
        }
        k => return Err(format!("unknown kind {k}")),
    };
    if !r.done() {
        return Err("unexpected trailing data".into());
    }
    Ok(out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_volume(path: &Path, vol: &MultiscaleVolume) -> Result<()> {
    write_bytes(path, &encode_volume(vol))
}

pub fn write_mpi(path: &Path, mpi: &MultiplaneImage) -> Result<()> {
    write_bytes(path, &encode_mpi(mpi))
}

pub fn read_lvb(path: &Path) -> Result<Lvb> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_lvb(&data).map_err(|m| Error::format(path, m))
}

pub fn read_volume(path: &Path) -> Result<MultiscaleVolume> {
    match read_lvb(path)? {
        Lvb::Volume(v) => Ok(v),
        Lvb::Mpi(_) => Err(Error::format(path, "expected a volume, found an MPI")),
    }
}

pub fn read_mpi(path: &Path) -> Result<MultiplaneImage> {
    match read_lvb(path)? {
        Lvb::Mpi(m) => Ok(m),
        Lvb::Volume(_) => Err(Error::format(path, "expected an MPI, found a volume")),
    }
}

/// Float image with 1 or 3 channels, rows top-down.
#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Encodes as little-endian PFM (`scale = -1.0`), rows bottom-up.
pub fn encode_pfm(pfm: &Pfm) -> Vec<u8> {
    let tag = if pfm.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", pfm.width, pfm.height).into_bytes();
    let row_len = pfm.width * pfm.channels;
    for row in pfm.data.chunks_exact(row_len).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(data: &[u8]) -> std::result::Result<Pfm, String> {
    // Three whitespace-terminated header tokens, the last followed by a
    // single whitespace byte.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        tokens.push(std::str::from_utf8(&data[start..pos]).map_err(|_| "non-ASCII header")?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        t => return Err(format!("bad magic '{t}'")),
    };
    let dim = |s: &str| s.parse::<usize>().map_err(|e| format!("bad dimension '{s}': {e}"));
    let (width, height) = (dim(tokens[1])?, dim(tokens[2])?);
    let scale: f64 = tokens[3].parse().map_err(|e| format!("bad scale: {e}"))?;
    if scale == 0.0 {
        return Err("scale must be nonzero".into());
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let body = data.get(pos..).ok_or("truncated data")?;
    if body.len() != n * 4 {
        return Err(format!("expected {} data bytes, found {}", n * 4, body.len()));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| {
            let b: [u8; 4] = c.try_into().unwrap();
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let row_len = width * channels;
    let data = if row_len == 0 {
        Vec::new()
    } else {
        values.chunks_exact(row_len).rev().flatten().copied().collect()
    };
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&data).map_err(|m| Error::format(path, m))
}

pub fn write_pfm(path: &Path, pfm: &Pfm) -> Result<()> {
    write_bytes(path, &encode_pfm(pfm))
}

pub fn envmap_to_pfm(env: &EnvironmentMap) -> Pfm {
    Pfm {
        width: env.width(),
        height: env.height(),
        channels: 3,
        data: env.pixels().iter().flat_map(|p| p.map(|v| v as f32)).collect(),
    }
}

/// RGB rows of a 3-channel PFM.
pub fn pfm_rgb(pfm: &Pfm) -> std::result::Result<Vec<[f64; 3]>, String> {
    if pfm.channels != 3 {
        return Err("expected a 3-channel PFM".into());
    }
    Ok(pfm
        .data
        .chunks_exact(3)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect())
}

/// Depth map from a PFM; 3-channel files use their first channel.
pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let pfm = read_pfm(path)?;
    let values = pfm.data.iter().step_by(pfm.channels).copied().collect();
    DepthMap::new(pfm.width, pfm.height, values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write_pfm(
        path,
        &Pfm {
            width: depth.width(),
            height: depth.height(),
            channels: 1,
            data: depth.values().to_vec(),
        },
    )
}

/// Reads a PNG into linear RGBA, undoing gamma 2.2 unless `linear`.
pub fn read_png(path: &Path, linear: bool) -> Result<ImageRGBA> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgba32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.pixels().map(|p| p.0).collect();
    let out = ImageRGBA::from_pixels(w, h, pixels)?;
    if linear {
        Ok(out)
    } else {
        out.linearize(DEFAULT_GAMMA)
    }
}

/// Writes 8-bit RGBA, applying gamma 2.2 unless `linear`. Values are clamped
/// to `[0, 1]`.
pub fn write_png(path: &Path, img: &ImageRGBA, linear: bool) -> Result<()> {
    let encoded = if linear {
        img.clone()
    } else {
        img.delinearize(DEFAULT_GAMMA)?
    };
    let to8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let bytes: Vec<u8> = encoded.pixels().iter().flat_map(|p| p.map(to8)).collect();
    let buf = image::RgbaImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .ok_or_else(|| Error::dimension("image buffer size"))?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    buf.write_to(&mut file, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    file.flush().map_err(|e| Error::io(path, e))
}

/// Environment map as an opaque image.
pub fn envmap_image(env: &EnvironmentMap) -> ImageRGBA {
    let (w, h) = (env.width(), env.height());
    ImageRGBA::from_fn(w, h, |x, y| {
        let p = env.get(y, x);
        [p[0] as f32, p[1] as f32, p[2] as f32, 1.0]
    })
}
