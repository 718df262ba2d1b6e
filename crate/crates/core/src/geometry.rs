//! Camera models, rigid poses, rays and the equirectangular parameterization.
//!
//! Camera frames follow the computer-vision convention: +Z forward, +X right,
//! +Y down. Environment maps treat −Y as "up".

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHO_TOL: f64 = 1e-6;

/// Points closer to the camera plane than this are rejected by [`PinholeCamera::project`].
pub const PROJECT_EPS: f64 = 1e-9;

/// A world-from-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not proper orthonormal
    /// matrices to within 1e-6.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation, ORTHO_TOL)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("translation must be finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a transform from a rotation that is only approximately
    /// orthonormal (e.g. parsed from text), projecting it onto SO(3).
    pub fn from_approx(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation, 1e-3)?;
        Self::new(orthonormalize(&rotation), translation)
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Camera +Z axis expressed in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse_transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.transpose() * v
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vec3::new(v[3], v[7], v[11]);
        Self::from_approx(rotation, translation)
    }

    pub fn approx_eq(&self, other: &RigidTransform, tol: f64) -> bool {
        (self.rotation - other.rotation).abs().max() <= tol
            && (self.translation - other.translation).abs().max() <= tol
    }
}

fn check_rotation(r: &Mat3, tol: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::domain("rotation must be finite"));
    }
    let ortho_err = (r.transpose() * r - Mat3::identity()).abs().max();
    let det = r.determinant();
    if ortho_err > tol || (det - 1.0).abs() > tol {
        return Err(Error::domain(format!(
            "rotation is not orthonormal (|RᵀR − I| = {ortho_err:.3e}, det = {det:.6})"
        )));
    }
    Ok(())
}

/// Nearest rotation in the Frobenius sense.
fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Rotation about an arbitrary axis (Rodrigues).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).matrix()
}

/// Pinhole intrinsics plus a world-from-camera pose.
///
/// Pixel `(col, row)` covers `[col, col+1) × [row, row+1)` in continuous
/// image coordinates, so its center sits at `(col + 0.5, row + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: RigidTransform,
}

impl PinholeCamera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        pose: RigidTransform,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::domain(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::domain("image size must be nonzero"));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::domain(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            pose,
        })
    }

    pub fn with_pose(&self, pose: RigidTransform) -> Self {
        Self { pose, ..*self }
    }

    pub fn intrinsic_matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame point.
    pub fn project_camera(&self, p: &Vec3) -> Result<(Vector2<f64>, f64)> {
        if p.z <= PROJECT_EPS {
            return Err(Error::BehindCamera { z: p.z });
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        Ok((Vector2::new(u, v), p.z))
    }

    /// Projects a world point to continuous pixel coordinates and depth.
    pub fn project(&self, p_world: &Vec3) -> Result<(Vector2<f64>, f64)> {
        self.project_camera(&self.pose.inverse_transform_point(p_world))
    }

    /// Camera-frame point at pixel `(u, v)` with the given z-depth.
    pub fn unproject_camera(&self, u: f64, v: f64, depth: f64) -> Result<Vec3> {
        if !(depth > 0.0) {
            return Err(Error::InvalidDepth(depth));
        }
        Ok(Vec3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        ))
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<Vec3> {
        Ok(self.pose.transform_point(&self.unproject_camera(u, v, depth)?))
    }

    /// Unit world-space ray through continuous pixel coordinates `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Ray {
        let d = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        Ray {
            origin: self.pose.center(),
            direction: self.pose.transform_vector(&d).normalize(),
        }
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u <= self.width as f64 && v >= 0.0 && v <= self.height as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`; fails on a zero or non-finite direction.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n > 1e-12 && n.is_finite()) {
            return Err(Error::domain("ray direction must be nonzero and finite"));
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Envmap-frame direction for polar angle `theta` (from up) and azimuth `phi`
/// (zero at forward).
#[inline]
pub fn spherical_direction(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(st * sp, -ct, st * cp)
}

/// Polar and azimuth angles at the center of equirectangular pixel `(row, col)`.
#[inline]
pub fn pixel_angles(row: usize, col: usize, height: usize, width: usize) -> (f64, f64) {
    let theta = PI * (row as f64 + 0.5) / height as f64;
    let phi = 2.0 * PI * (col as f64 + 0.5) / width as f64 - PI;
    (theta, phi)
}

/// Envmap-frame unit direction through the center of pixel `(row, col)`.
pub fn envmap_direction(row: usize, col: usize, height: usize, width: usize) -> Vec3 {
    let (theta, phi) = pixel_angles(row, col, height, width);
    spherical_direction(theta, phi)
}

/// Continuous equirectangular coordinates `(row, col)` of an envmap-frame
/// direction, such that pixel centers land on integers.
pub fn direction_to_pixel(dir: &Vec3, height: usize, width: usize) -> (f64, f64) {
    let d = dir.normalize();
    let theta = (-d.y).clamp(-1.0, 1.0).acos();
    let phi = d.x.atan2(d.z);
    let row = theta / PI * height as f64 - 0.5;
    let col = (phi + PI) / (2.0 * PI) * width as f64 - 0.5;
    (row, col)
}

/// Solid angle covered by an equirectangular pixel in the given row.
pub fn pixel_solid_angle(row: usize, height: usize, width: usize) -> f64 {
    let t0 = PI * row as f64 / height as f64;
    let t1 = PI * (row + 1) as f64 / height as f64;
    (t0.cos() - t1.cos()) * 2.0 * PI / width as f64
}

/// The world-space ray leaving `center` through envmap pixel `(row, col)`.
pub fn envmap_ray(
    center: &Vec3,
    orientation: &Mat3,
    row: usize,
    col: usize,
    height: usize,
    width: usize,
) -> Result<Ray> {
    if row >= height || col >= width {
        return Err(Error::IndexOutOfRange {
            row,
            col,
            height,
            width,
        });
    }
    Ok(Ray {
        origin: *center,
        direction: orientation * envmap_direction(row, col, height, width),
    })
}

/// Parses the pose text format: one camera per line, twelve whitespace
/// separated floats forming a row-major 3×4 world-from-camera matrix.
/// `#` starts a comment.
pub fn parse_poses(text: &str) -> std::result::Result<Vec<RigidTransform>, String> {
    let mut poses = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        let arr: [f64; 12] = values
            .try_into()
            .map_err(|v: Vec<f64>| format!("line {}: expected 12 values, got {}", lineno + 1, v.len()))?;
        let pose = RigidTransform::from_row_major(&arr).map_err(|e| format!("line {}: {e}", lineno + 1))?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn format_poses(poses: &[RigidTransform]) -> String {
    let mut out = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major().iter().map(|v| format!("{v:.9}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_poses(path: &Path) -> Result<Vec<RigidTransform>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text).map_err(|m| Error::format(path, m))
}

/// Intrinsics file: `fx fy cx cy width height` on the first non-comment line.
pub fn parse_intrinsics(text: &str) -> std::result::Result<PinholeCamera, String> {
    let line = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .find(|l| !l.is_empty())
        .ok_or_else(|| "empty intrinsics file".to_string())?;
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 6 {
        return Err(format!("expected 6 values, got {}", tokens.len()));
    }
    let f = |i: usize| tokens[i].parse::<f64>().map_err(|e| format!("value {}: {e}", i + 1));
    let size = |i: usize| {
        let v = f(i)?;
        if v.fract() != 0.0 || v < 1.0 {
            return Err(format!("value {} must be a positive integer", i + 1));
        }
        Ok(v as usize)
    };
    PinholeCamera::new(f(0)?, f(1)?, f(2)?, f(3)?, size(4)?, size(5)?, RigidTransform::identity())
        .map_err(|e| e.to_string())
}

pub fn read_intrinsics(path: &Path) -> Result<PinholeCamera> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_intrinsics(&text).map_err(|m| Error::format(path, m))
}

pub fn format_intrinsics(cam: &PinholeCamera) -> String {
    format!(
        "{} {} {} {} {} {}\n",
        cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height
    )
}
