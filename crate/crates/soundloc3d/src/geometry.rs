//! Rigid transforms, pinhole projection, and bilinear feature sampling.
//!
//! Conventions used throughout the crate:
//! - camera frame: +z forward, +x right, +y down (aligned with pixel axes);
//! - depth maps store camera-frame z-depth, not along-ray range;
//! - all quantities are f64, lengths in meters, pixels continuous.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Rigid transform `p ↦ R p + t`. For camera poses this maps camera frame to
/// world frame; `inverse()` gives the world-to-camera map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Build from a raw 3×3 matrix, re-orthonormalizing via nearest rotation.
    pub fn from_matrix(m: &Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation: Rotation3::from_matrix(m),
            translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_dir(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.inverse();
        Self {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera pose at `eye` with +z looking at `target`. `up` fixes the roll:
    /// camera −y (image up) is aligned with `up` as far as the forward
    /// direction allows. Falls back to +z then +x up when degenerate.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Result<Self> {
        let fwd = target - eye;
        let norm = fwd.norm();
        if norm < 1e-12 {
            return Err(Error::Invalid("look_at: eye equals target".into()));
        }
        let f = fwd / norm;
        let mut down = -up + f * up.dot(&f);
        if down.norm() < 1e-9 {
            for cand in [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0)] {
                down = -cand + f * cand.dot(&f);
                if down.norm() >= 1e-9 {
                    break;
                }
            }
        }
        let d = down.normalize();
        let r = d.cross(&f);
        let m = Matrix3::from_columns(&[r, d, f]);
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(m),
            translation: *eye,
        })
    }

    /// ZYX Euler angles (roll about x, pitch about y, yaw about z) such that
    /// `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
    pub fn euler_zyx(&self) -> (f64, f64, f64) {
        self.rotation.euler_angles()
    }

    pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64, translation: Vec3) -> Self {
        Self {
            rotation: Rotation3::from_euler_angles(roll, pitch, yaw),
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let m = self.rotation.matrix();
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

/// JSON-friendly form of [`RigidTransform`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidTransformJson {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for RigidTransformJson {
    fn from(t: &RigidTransform) -> Self {
        Self {
            rotation: t.rotation_matrix(),
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl From<&RigidTransformJson> for RigidTransform {
    fn from(j: &RigidTransformJson) -> Self {
        let m = Matrix3::new(
            j.rotation[0][0],
            j.rotation[0][1],
            j.rotation[0][2],
            j.rotation[1][0],
            j.rotation[1][1],
            j.rotation[1][2],
            j.rotation[2][0],
            j.rotation[2][1],
            j.rotation[2][2],
        );
        RigidTransform::from_matrix(&m, Vec3::new(j.translation[0], j.translation[1], j.translation[2]))
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("intrinsics: focal lengths must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) || !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::Config("intrinsics: principal point outside image".into()));
        }
        Ok(())
    }

    /// Square image with a 90° horizontal field of view: f = size/2, principal
    /// point at the center.
    pub fn square_fov90(size: usize) -> Self {
        let s = size as f64;
        Self {
            fx: s / 2.0,
            fy: s / 2.0,
            cx: s / 2.0,
            cy: s / 2.0,
            width: size,
            height: size,
        }
    }
}

/// Continuous pixel location plus a visibility flag. Invalid pixels keep their
/// coordinates for diagnostics but must not be sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

/// Perspective projection of a camera-frame point. Valid iff the point is in
/// front of the camera and lands inside the image.
pub fn project(k: &Intrinsics, p_cam: &Vec3) -> PixelPoint {
    if p_cam.z <= 1e-12 {
        return PixelPoint {
            x: 0.0,
            y: 0.0,
            valid: false,
        };
    }
    let x = k.fx * p_cam.x / p_cam.z + k.cx;
    let y = k.fy * p_cam.y / p_cam.z + k.cy;
    let valid = x >= 0.0 && x < k.width as f64 && y >= 0.0 && y < k.height as f64;
    PixelPoint { x, y, valid }
}

/// Camera-frame point on the ray through `pix` whose z-coordinate equals
/// `depth` (z-depth convention).
pub fn backproject(k: &Intrinsics, pix: &PixelPoint, depth: f64) -> Result<Vec3> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::Invalid(format!("backproject: depth must be positive and finite, got {depth}")));
    }
    Ok(Vec3::new(
        (pix.x - k.cx) / k.fx * depth,
        (pix.y - k.cy) / k.fy * depth,
        depth,
    ))
}

/// Unit direction in the camera frame of the ray through pixel (x, y).
pub fn pixel_ray_dir(k: &Intrinsics, x: f64, y: f64) -> Unit<Vec3> {
    Unit::new_normalize(Vec3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0))
}

/// Dense per-view feature grid; `values` laid out `[channel][row][col]`.
/// `pixel_to_grid_scale` = image pixels per grid cell; cell (gx, gy) is
/// centered on pixel ((gx+0.5)·scale, (gy+0.5)·scale).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub pixel_to_grid_scale: f64,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, grid_h: usize, grid_w: usize, pixel_to_grid_scale: f64) -> Self {
        Self {
            channels,
            grid_h,
            grid_w,
            pixel_to_grid_scale,
            values: vec![0.0; channels * grid_h * grid_w],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, gy: usize, gx: usize) -> f64 {
        self.values[(c * self.grid_h + gy) * self.grid_w + gx]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, gy: usize, gx: usize) -> &mut f64 {
        &mut self.values[(c * self.grid_h + gy) * self.grid_w + gx]
    }
}

/// Bilinear sample of a feature map at a pixel location. Grid coordinates are
/// pixel/scale − 0.5 so that cell centers sit on the integer lattice. Invalid
/// pixels and coordinates outside [0, grid−1] yield the all-zero vector.
pub fn bilinear_sample(map: &FeatureMap, pix: &PixelPoint) -> Vec<f64> {
    let mut out = vec![0.0; map.channels];
    if !pix.valid {
        return out;
    }
    let gx = pix.x / map.pixel_to_grid_scale - 0.5;
    let gy = pix.y / map.pixel_to_grid_scale - 0.5;
    if gx < 0.0 || gy < 0.0 || gx > (map.grid_w - 1) as f64 || gy > (map.grid_h - 1) as f64 {
        return out;
    }
    let x0 = (gx.floor() as usize).min(map.grid_w - 1);
    let y0 = (gy.floor() as usize).min(map.grid_h - 1);
    let x1 = (x0 + 1).min(map.grid_w - 1);
    let y1 = (y0 + 1).min(map.grid_h - 1);
    let fx = gx - x0 as f64;
    let fy = gy - y0 as f64;
    for c in 0..map.channels {
        let v00 = map.at(c, y0, x0);
        let v01 = map.at(c, y0, x1);
        let v10 = map.at(c, y1, x0);
        let v11 = map.at(c, y1, x1);
        out[c] = v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) + v10 * (1.0 - fx) * fy + v11 * fx * fy;
    }
    out
}

/// Bounded planar patch: origin plus two orthonormal edge directions with
/// extents in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePatch {
    pub origin: [f64; 3],
    pub edge_u: [f64; 3],
    pub edge_v: [f64; 3],
    pub extent_u: f64,
    pub extent_v: f64,
}

impl SurfacePatch {
    pub fn origin_v(&self) -> Vec3 {
        Vec3::new(self.origin[0], self.origin[1], self.origin[2])
    }
    pub fn edge_u_v(&self) -> Vec3 {
        Vec3::new(self.edge_u[0], self.edge_u[1], self.edge_u[2])
    }
    pub fn edge_v_v(&self) -> Vec3 {
        Vec3::new(self.edge_v[0], self.edge_v[1], self.edge_v[2])
    }

    pub fn normal(&self) -> Vec3 {
        self.edge_u_v().cross(&self.edge_v_v()).normalize()
    }

    pub fn point_at(&self, u: f64, v: f64) -> Vec3 {
        self.origin_v() + self.edge_u_v() * u + self.edge_v_v() * v
    }

    pub fn validate(&self) -> Result<()> {
        let eu = self.edge_u_v();
        let ev = self.edge_v_v();
        if eu.cross(&ev).norm() < 1e-9 {
            return Err(Error::Config("surface patch: edge vectors are parallel".into()));
        }
        if !(self.extent_u > 0.0 && self.extent_v > 0.0) {
            return Err(Error::Config("surface patch: extents must be positive".into()));
        }
        Ok(())
    }

    /// Distance from a point to this bounded patch.
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let rel = p - self.origin_v();
        let eu = self.edge_u_v().normalize();
        let ev = self.edge_v_v().normalize();
        let u = rel.dot(&eu).clamp(0.0, self.extent_u);
        let v = rel.dot(&ev).clamp(0.0, self.extent_v);
        (self.point_at(u, v) - p).norm()
    }
}

/// Intersect a ray `o + t·d` with a bounded patch. Returns (t, u, v) of the
/// nearest hit with t > eps, or None.
pub fn ray_patch_intersect(o: &Vec3, d: &Vec3, patch: &SurfacePatch) -> Option<(f64, f64, f64)> {
    let n = patch.edge_u_v().cross(&patch.edge_v_v());
    let denom = d.dot(&n);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (patch.origin_v() - o).dot(&n) / denom;
    if t <= 1e-9 {
        return None;
    }
    let hit = o + d * t;
    let rel = hit - patch.origin_v();
    let eu = patch.edge_u_v().normalize();
    let ev = patch.edge_v_v().normalize();
    let u = rel.dot(&eu);
    let v = rel.dot(&ev);
    if u < 0.0 || u > patch.extent_u || v < 0.0 || v > patch.extent_v {
        return None;
    }
    Some((t, u, v))
}
