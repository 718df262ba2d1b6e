//! Relighting virtual objects with spatially varying illumination and
//! compositing them into a photograph.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{envmap_direction, pixel_solid_angle, Mat3, PinholeCamera, RigidTransform, Vec3};
use crate::image::ImageRGBA;
use crate::render::{render_rays, trace_ray, EnvironmentMap, RenderConfig};
use crate::volume::MultiscaleVolume;

/// Equirect grid used to integrate diffuse irradiance (rows, cols).
pub const LAMBERT_GRID: (usize, usize) = (16, 32);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Material {
    Mirror,
    Lambertian { albedo: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    normals: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh; when `normals` is `None`, per-vertex normals are the
    /// normalized sum of adjacent face normals.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, normals: Option<Vec<Vec3>>) -> Result<Self> {
        if faces.iter().flatten().any(|&i| i >= vertices.len()) {
            return Err(Error::domain("face index out of range"));
        }
        let normals = match normals {
            Some(n) => {
                if n.len() != vertices.len() {
                    return Err(Error::dimension("one normal per vertex required"));
                }
                if n.iter().any(|v| (v.norm() - 1.0).abs() > 1e-6) {
                    return Err(Error::domain("mesh normals must be unit length"));
                }
                n
            }
            None => {
                let mut acc = vec![Vec3::zeros(); vertices.len()];
                for f in &faces {
                    let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
                    for &i in f {
                        acc[i] += n;
                    }
                }
                acc.into_iter()
                    .map(|n| {
                        let len = n.norm();
                        if len > 0.0 {
                            Ok(n / len)
                        } else {
                            Err(Error::domain("vertex without a well-defined normal"))
                        }
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(Self {
            vertices,
            normals,
            faces,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3)> {
        let mut best: Option<(f64, Vec3)> = None;
        for f in &self.faces {
            let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
            let (e1, e2) = (b - a, c - a);
            let p = d.cross(&e2);
            let det = e1.dot(&p);
            if det.abs() < 1e-14 {
                continue;
            }
            let inv = 1.0 / det;
            let s = o - a;
            let u = s.dot(&p) * inv;
            if !(0.0..=1.0).contains(&u) {
                continue;
            }
            let q = s.cross(&e1);
            let v = d.dot(&q) * inv;
            if v < 0.0 || u + v > 1.0 {
                continue;
            }
            let t = e2.dot(&q) * inv;
            if t > 1e-9 && best.is_none_or(|(bt, _)| t < bt) {
                let n = self.normals[f[0]] * (1.0 - u - v) + self.normals[f[1]] * u + self.normals[f[2]] * v;
                best = Some((t, n.normalize()));
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Mesh(TriangleMesh),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VirtualObject {
    pub shape: Shape,
    pub material: Material,
    /// World-from-object transform.
    pub placement: RigidTransform,
}

/// Ray-object hit in world space.
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
}

impl VirtualObject {
    pub fn new(shape: Shape, material: Material, placement: RigidTransform) -> Result<Self> {
        if let Shape::Sphere { radius, .. } = &shape {
            if !(*radius > 0.0 && radius.is_finite()) {
                return Err(Error::domain(format!("sphere radius must be positive, got {radius}")));
            }
        }
        if let Material::Lambertian { albedo } = &material {
            if albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::domain("albedo must lie in [0, 1]"));
            }
        }
        Ok(Self {
            shape,
            material,
            placement,
        })
    }

    pub fn sphere(center: Vec3, radius: f64, material: Material) -> Result<Self> {
        Self::new(Shape::Sphere { center, radius }, material, RigidTransform::identity())
    }

    /// World-space centroid (sphere center or mean vertex).
    pub fn centroid(&self) -> Vec3 {
        let local = match &self.shape {
            Shape::Sphere { center, .. } => *center,
            Shape::Mesh(m) => m.vertices.iter().sum::<Vec3>() / m.vertices.len().max(1) as f64,
        };
        self.placement.transform_point(&local)
    }

    /// Nearest hit with `t > 0` along a world ray with unit direction.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let o = self.placement.inverse_transform_point(origin);
        let d = self.placement.inverse_transform_vector(dir);
        let (t, n_local) = match &self.shape {
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let b = oc.dot(&d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = if -b - sq > 1e-9 { -b - sq } else { -b + sq };
                if t <= 1e-9 {
                    return None;
                }
                (t, (o + d * t - center) / *radius)
            }
            Shape::Mesh(m) => m.intersect(&o, &d)?,
        };
        Some(Hit {
            t,
            point: origin + dir * t,
            normal: self.placement.transform_vector(&n_local).normalize(),
        })
    }
}

fn check_unit(v: &Vec3, what: &str) -> Result<()> {
    let n = v.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!("{what} must be unit length, |v| = {n}")));
    }
    Ok(())
}

/// Mirror reflection of the incoming direction `view_dir` about `n`.
pub fn reflect(view_dir: &Vec3, n: &Vec3) -> Vec3 {
    view_dir - n * (2.0 * view_dir.dot(n))
}

/// Cosine-weighted integral of an environment map sampled on the fixed
/// [`LAMBERT_GRID`], divided by π.
fn diffuse_from(n: &Vec3, radiance: impl Fn(usize, usize, &Vec3) -> [f64; 3]) -> [f64; 3] {
    let (h, w) = LAMBERT_GRID;
    let mut sum = [0.0; 3];
    for row in 0..h {
        let d_omega = pixel_solid_angle(row, h, w);
        for col in 0..w {
            let d = envmap_direction(row, col, h, w);
            let cos = n.dot(&d);
            if cos <= 0.0 {
                continue;
            }
            let l = radiance(row, col, &d);
            for c in 0..3 {
                sum[c] += l[c] * cos * d_omega;
            }
        }
    }
    sum.map(|v| v / PI)
}

/// Outgoing radiance at surface point `p` with unit normal `n`, viewed along
/// the unit direction `view_dir` (pointing from the eye to the surface).
///
/// Mirrors trace one reflected ray through the volume from `p`. Lambertian
/// surfaces integrate an environment map rendered at `p` itself.
pub fn shade_point(
    vol: &MultiscaleVolume,
    p: &Vec3,
    n: &Vec3,
    view_dir: &Vec3,
    material: &Material,
    cfg: &RenderConfig,
) -> Result<[f64; 3]> {
    check_unit(n, "normal")?;
    check_unit(view_dir, "view direction")?;
    match material {
        Material::Mirror => Ok(trace_ray(vol, p, &reflect(view_dir, n), cfg).rgb),
        Material::Lambertian { albedo } => {
            let (h, w) = LAMBERT_GRID;
            let env = render_rays(vol, p, &Mat3::identity(), &cfg.with_resolution(h, w))?;
            let e = diffuse_from(n, |row, col, _| env.get(row, col));
            Ok([albedo[0] * e[0], albedo[1] * e[1], albedo[2] * e[2]])
        }
    }
}

/// Shading from a single precomputed environment map by direction lookup.
pub fn shade_from_envmap(env: &EnvironmentMap, n: &Vec3, view_dir: &Vec3, material: &Material) -> [f64; 3] {
    match material {
        Material::Mirror => env.lookup(&reflect(view_dir, n)),
        Material::Lambertian { albedo } => {
            let e = diffuse_from(n, |_, _, d| env.lookup(d));
            [albedo[0] * e[0], albedo[1] * e[1], albedo[2] * e[2]]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LightingMode {
    /// Every surface point gets its own lighting.
    PerPoint,
    /// One environment map per object, rendered at its centroid.
    Centroid,
}

/// Renders the objects over `photo` as seen by `cam`. Object pixels replace
/// photo pixels; the nearest object wins. Scene geometry in the photo never
/// occludes objects.
pub fn relight_and_composite(
    photo: &ImageRGBA,
    cam: &PinholeCamera,
    objects: &[VirtualObject],
    vol: &MultiscaleVolume,
    mode: LightingMode,
    cfg: &RenderConfig,
) -> Result<ImageRGBA> {
    if photo.width() != cam.width || photo.height() != cam.height {
        return Err(Error::dimension("photo does not match the camera"));
    }
    cfg.validate()?;
    let envmaps = match mode {
        LightingMode::Centroid => objects
            .iter()
            .map(|o| render_rays(vol, &o.centroid(), vol.reference_pose().rotation(), cfg).map(Some))
            .collect::<Result<Vec<_>>>()?,
        LightingMode::PerPoint => vec![None; objects.len()],
    };
    let w = cam.width;
    let mut out = photo.clone();
    out.pixels_mut()
        .par_chunks_mut(w)
        .enumerate()
        .try_for_each(|(y, row)| -> Result<()> {
            for (x, px) in row.iter_mut().enumerate() {
                let ray = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
                let nearest = objects
                    .iter()
                    .enumerate()
                    .filter_map(|(i, o)| o.intersect(&ray.origin, &ray.direction).map(|h| (i, h)))
                    .min_by(|a, b| a.1.t.total_cmp(&b.1.t));
                let Some((i, hit)) = nearest else { continue };
                let material = &objects[i].material;
                let rgb = match &envmaps[i] {
                    Some(env) => shade_from_envmap(env, &hit.normal, &ray.direction, material),
                    None => shade_point(vol, &hit.point, &hit.normal, &ray.direction, material, cfg)?,
                };
                *px = [rgb[0] as f32, rgb[1] as f32, rgb[2] as f32, 1.0];
            }
            Ok(())
        })?;
    Ok(out)
}

/// Parses the object scene description.
///
/// Objects start with an `[object]` line followed by `key = value` lines.
/// Keys: `shape` (`sphere` | `mesh`), `center` (x y z), `radius`,
/// `material` (`mirror` | `lambertian`), `albedo` (r g b), `vertices`
/// (flat x y z list), `faces` (flat index triples), `normals` (optional,
/// flat), `translation` (x y z) and `rotation` (nine row-major values).
/// `#` starts a comment.
pub fn parse_scene(text: &str) -> std::result::Result<Vec<VirtualObject>, String> {
    let mut blocks: Vec<Vec<(usize, String, String)>> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line == "[object]" {
            blocks.push(Vec::new());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        let block = blocks
            .last_mut()
            .ok_or_else(|| format!("line {}: entry before the first [object]", n + 1))?;
        block.push((n + 1, k.trim().to_string(), v.trim().to_string()));
    }
    blocks.iter().map(|b| parse_object(b)).collect()
}

fn parse_object(entries: &[(usize, String, String)]) -> std::result::Result<VirtualObject, String> {
    let get = |key: &str| entries.iter().find(|(_, k, _)| k == key);
    let floats = |key: &str| -> std::result::Result<Option<Vec<f64>>, String> {
        get(key)
            .map(|(n, _, v)| {
                v.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| format!("line {n}: {key}: {e}")))
                    .collect()
            })
            .transpose()
    };
    let vec3 = |key: &str| -> std::result::Result<Option<Vec3>, String> {
        match floats(key)? {
            Some(v) if v.len() == 3 => Ok(Some(Vec3::new(v[0], v[1], v[2]))),
            Some(v) => Err(format!("{key}: expected 3 values, got {}", v.len())),
            None => Ok(None),
        }
    };
    for (n, k, _) in entries {
        if !matches!(
            k.as_str(),
            "shape" | "center" | "radius" | "material" | "albedo" | "vertices" | "faces" | "normals" | "translation" | "rotation"
        ) {
            return Err(format!("line {n}: unknown key '{k}'"));
        }
    }
    let material = match get("material").map(|(_, _, v)| v.as_str()) {
        Some("mirror") | None => Material::Mirror,
        Some("lambertian") => {
            let a = vec3("albedo")?.unwrap_or(Vec3::new(0.8, 0.8, 0.8));
            Material::Lambertian { albedo: [a.x, a.y, a.z] }
        }
        Some(other) => return Err(format!("unknown material '{other}'")),
    };
    let shape = match get("shape").map(|(_, _, v)| v.as_str()) {
        Some("sphere") | None => {
            let center = vec3("center")?.ok_or("sphere needs a center")?;
            let radius = floats("radius")?
                .and_then(|v| v.first().copied())
                .ok_or("sphere needs a radius")?;
            Shape::Sphere { center, radius }
        }
        Some("mesh") => {
            let v = floats("vertices")?.ok_or("mesh needs vertices")?;
            let f = floats("faces")?.ok_or("mesh needs faces")?;
            if v.len() % 3 != 0 || f.len() % 3 != 0 {
                return Err("vertices and faces must come in triples".into());
            }
            let vertices = v.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            let faces = f
                .chunks(3)
                .map(|c| {
                    let idx = |x: f64| {
                        if x >= 0.0 && x.fract() == 0.0 {
                            Ok(x as usize)
                        } else {
                            Err(format!("bad face index {x}"))
                        }
                    };
                    Ok([idx(c[0])?, idx(c[1])?, idx(c[2])?])
                })
                .collect::<std::result::Result<_, String>>()?;
            let normals = floats("normals")?.map(|n| n.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2]).normalize()).collect());
            Shape::Mesh(TriangleMesh::new(vertices, faces, normals).map_err(|e| e.to_string())?)
        }
        Some(other) => return Err(format!("unknown shape '{other}'")),
    };
    let translation = vec3("translation")?.unwrap_or_else(Vec3::zeros);
    let rotation = match floats("rotation")? {
        Some(r) if r.len() == 9 => Mat3::from_row_slice(&r),
        Some(r) => return Err(format!("rotation: expected 9 values, got {}", r.len())),
        None => Mat3::identity(),
    };
    let placement = RigidTransform::from_approx(rotation, translation).map_err(|e| e.to_string())?;
    VirtualObject::new(shape, material, placement).map_err(|e| e.to_string())
}

pub fn read_scene(path: &Path) -> Result<Vec<VirtualObject>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text).map_err(|m| Error::format(path, m))
}
