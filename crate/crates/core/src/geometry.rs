//! Cameras, rigid poses, per-pixel rays and cross-frame ray transport.
//!
//! Conventions:
//! - camera frame: +x right, +y down, +z forward (optical axis);
//! - camera extrinsics are camera-to-ego, ego poses are ego-to-world;
//! - pixel rays pass through the pixel center `(u + 0.5, v + 0.5)` unless
//!   [`PixelConvention::Corner`] is requested.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pinhole {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Pinhole {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Pinhole {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Symmetric camera with the given horizontal field of view.
    pub fn from_hfov(width: u32, height: u32, hfov_deg: f64) -> Result<Self> {
        let fx = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(
            fx,
            fx,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid(format!(
                "pinhole focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("pinhole image size must be at least 1x1"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    pub fn project(&self, p_cam: &Vec3) -> Option<(f64, f64)> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Mat3::identity())
            .abs()
            .max();
        let det = rotation.determinant();
        if !(err <= ORTHONORMAL_TOL) || !((det - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(Error::invalid(format!(
                "rotation is not proper orthonormal (|RᵀR−I|={err:.3e}, det={det})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about a unit axis.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Pose {
            rotation: *r.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    fn to_row_major(self) -> PoseJson {
        let r = &self.rotation;
        PoseJson {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
    }
}

/// JSON layout: row-major 3×3 rotation plus translation.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseJson {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = PoseJson::deserialize(d)?;
        let rotation = Mat3::from_row_slice(&j.rotation);
        Pose::new(rotation, Vec3::from(j.translation)).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelConvention {
    #[default]
    Center,
    Corner,
}

/// A labelled ray. `depth_label` is the distance along the unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    pub frame_offset: i32,
    pub sem_label: u16,
    pub depth_label: Option<f64>,
    pub weight: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() || !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(
                "ray needs a finite origin and nonzero direction",
            ));
        }
        Ok(Ray {
            origin,
            direction: direction / n,
            t_near: 0.0,
            t_far: f64::INFINITY,
            frame_offset: 0,
            sem_label: 0,
            depth_label: None,
            weight: 1.0,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).any(|i| !(max[i] > min[i])) {
            return Err(Error::invalid(
                "box must have positive extent on every axis",
            ));
        }
        Ok(Aabb { min, max })
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

/// Back-projects pixel `(u, v)` through the pixel center.
pub fn pixel_ray(cam: &Pinhole, cam_pose: &Pose, u: u32, v: u32) -> Result<Ray> {
    pixel_ray_with(cam, cam_pose, u, v, PixelConvention::Center)
}

pub fn pixel_ray_with(
    cam: &Pinhole,
    cam_pose: &Pose,
    u: u32,
    v: u32,
    convention: PixelConvention,
) -> Result<Ray> {
    if u >= cam.width || v >= cam.height {
        return Err(Error::invalid(format!(
            "pixel ({u}, {v}) outside a {}x{} image",
            cam.width, cam.height
        )));
    }
    let offset = match convention {
        PixelConvention::Center => 0.5,
        PixelConvention::Corner => 0.0,
    };
    let d_cam = Vec3::new(
        (u as f64 + offset - cam.cx) / cam.fx,
        (v as f64 + offset - cam.cy) / cam.fy,
        1.0,
    );
    let mut ray = Ray::new(*cam_pose.translation(), cam_pose.transform_vector(&d_cam))?;
    // the rotation preserves length, but renormalize to keep ‖d‖ = 1 tight
    ray.direction /= ray.direction.norm();
    Ok(ray)
}

/// Maps a ray from the `src_ego` frame into the `dst_ego` frame
/// (`dst⁻¹ · src`). Labels and the frame offset ride along unchanged.
pub fn transform_ray(ray: &Ray, src_ego: &Pose, dst_ego: &Pose) -> Ray {
    if src_ego == dst_ego {
        return *ray;
    }
    let rel = dst_ego.inverse().compose(src_ego);
    let dir = rel.transform_vector(&ray.direction);
    Ray {
        origin: rel.transform_point(&ray.origin),
        direction: dir / dir.norm(),
        ..*ray
    }
}

/// Slab-method intersection clipped to `[ray.t_near, ray.t_far]`.
pub fn grid_intersect(ray: &Ray, bounds: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = ray.t_near;
    let mut t1 = ray.t_far;
    for axis in 0..3 {
        let o = ray.origin[axis];
        let d = ray.direction[axis];
        if d == 0.0 {
            if o < bounds.min[axis] || o > bounds.max[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut a, mut b) = ((bounds.min[axis] - o) * inv, (bounds.max[axis] - o) * inv);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 >= t1 {
            return None;
        }
    }
    Some((t0, t1))
}
