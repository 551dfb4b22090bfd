//! Frames, spherical/Cartesian conversions and planar-angle utilities.
//!
//! Conventions used throughout the crate:
//! - World frame is z-up; gravity is `(0, 0, -9.81)` m/s².
//! - Spherical coordinates use inclination `theta` measured from +z and
//!   azimuth `phi` measured from +x, so
//!   `x = r sin(theta) cos(phi)`, `y = r sin(theta) sin(phi)`, `z = r cos(theta)`.
//! - The camera frame has its optical axis along +x after the mount rotation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 3D vector in meters (or m/s, m/s² by context).
pub type Vec3 = Vector3<f64>;

/// Standard gravity in the world frame.
pub const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate direction: zero-length vector")]
    DegenerateDirection,
    #[error("degenerate angle: coincident horizontal positions")]
    DegenerateAngle,
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w - two_pi
    } else {
        w
    }
}

/// Absolute angular difference wrapped to `[0, pi]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// Range/inclination/bearing triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    /// Range in meters, `>= 0`.
    pub r: f64,
    /// Inclination from +z in radians, in `[0, pi]`.
    pub theta: f64,
    /// Bearing from +x in radians, in `(-pi, pi]`.
    pub phi: f64,
}

impl SphericalCoord {
    pub fn new(r: f64, theta: f64, phi: f64) -> Self {
        Self { r, theta, phi }
    }
}

/// Position plus yaw/pitch/roll orientation of one MAV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MavPose {
    pub position: Vec3,
    /// Yaw about world +z, radians in `(-pi, pi]`.
    pub yaw: f64,
    /// Pitch about body +y, radians.
    pub pitch: f64,
    /// Roll about body +x, radians.
    pub roll: f64,
}

impl MavPose {
    pub fn new(position: Vec3, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self {
            position,
            yaw: wrap_angle(yaw),
            pitch: wrap_angle(pitch),
            roll: wrap_angle(roll),
        }
    }

    pub fn level(position: Vec3, yaw: f64) -> Self {
        Self::new(position, yaw, 0.0, 0.0)
    }

    /// Body-to-world rotation (ZYX yaw-pitch-roll).
    pub fn rotation_body_to_world(&self) -> Matrix3<f64> {
        rot_z(self.yaw) * rot_y(self.pitch) * rot_x(self.roll)
    }
}

/// Pinhole camera rigidly mounted on the MAV body, pitched down by `mount_pitch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Downward mount pitch in radians (default `pi/4`).
    pub mount_pitch: f64,
    /// Horizontal field-of-view half-angle, radians in `(0, pi/2)`.
    pub hfov_half: f64,
    /// Vertical field-of-view half-angle, radians in `(0, pi/2)`.
    pub vfov_half: f64,
    /// Image width in pixels.
    pub img_width: u32,
    /// Image height in pixels.
    pub img_height: u32,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            mount_pitch: std::f64::consts::FRAC_PI_4,
            hfov_half: 29f64.to_radians(),
            vfov_half: 22.5f64.to_radians(),
            img_width: 640,
            img_height: 480,
        }
    }
}

impl CameraModel {
    /// Camera-to-body rotation: optical axis +x pitched down by `mount_pitch`.
    pub fn rotation_camera_to_body(&self) -> Matrix3<f64> {
        rot_y(self.mount_pitch)
    }

    /// Camera-to-world rotation for a given MAV pose.
    pub fn rotation_camera_to_world(&self, pose: &MavPose) -> Matrix3<f64> {
        pose.rotation_body_to_world() * self.rotation_camera_to_body()
    }

    /// World point expressed in the camera frame.
    pub fn world_to_camera(&self, pose: &MavPose, point_world: &Vec3) -> Vec3 {
        self.rotation_camera_to_world(pose).transpose() * (point_world - pose.position)
    }

    /// True iff a camera-frame point lies inside the viewing frustum.
    pub fn in_frustum(&self, p_cam: &Vec3) -> bool {
        p_cam.x > 0.0
            && (p_cam.y / p_cam.x).abs() <= self.hfov_half.tan()
            && (p_cam.z / p_cam.x).abs() <= self.vfov_half.tan()
    }

    /// Project a camera-frame point to normalized image coordinates in
    /// `[-1, 1]` per axis (`None` if behind the camera). +u is to the right
    /// of the image, +v is up.
    pub fn project_normalized(&self, p_cam: &Vec3) -> Option<(f64, f64)> {
        if p_cam.x <= 0.0 {
            return None;
        }
        let u = (-p_cam.y / p_cam.x) / self.hfov_half.tan();
        let v = (p_cam.z / p_cam.x) / self.vfov_half.tan();
        Some((u, v))
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Spherical to Cartesian under the crate convention.
pub fn spherical_to_cartesian(s: &SphericalCoord) -> Vec3 {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    Vec3::new(s.r * st * cp, s.r * st * sp, s.r * ct)
}

/// Cartesian to spherical. At the poles the bearing tie-breaks to `phi = 0`.
pub fn cartesian_to_spherical(v: &Vec3) -> Result<SphericalCoord, GeometryError> {
    let r = v.norm();
    if r <= 0.0 {
        return Err(GeometryError::DegenerateDirection);
    }
    let theta = (v.z / r).clamp(-1.0, 1.0).acos();
    let phi = if v.x == 0.0 && v.y == 0.0 {
        0.0
    } else {
        wrap_angle(v.y.atan2(v.x))
    };
    Ok(SphericalCoord::new(r, theta, phi))
}

/// Planar angle of a MAV about the target in the world frame, measured
/// from world +x. Only the horizontal components enter.
pub fn angle_about_target(mav: &Vec3, target: &Vec3) -> Result<f64, GeometryError> {
    let dx = mav.x - target.x;
    let dy = mav.y - target.y;
    if dx.hypot(dy) < 1e-12 {
        return Err(GeometryError::DegenerateAngle);
    }
    Ok(wrap_angle(dy.atan2(dx)))
}

/// Horizontal unit vector perpendicular to the approach direction, with the
/// sign chosen so that it points away from the neighbor (`result . away_from >= 0`).
///
/// The perpendicular is constructed in the horizontal plane, so it is
/// orthogonal to the full 3D approach direction as well.
pub fn perpendicular_in_approach_plane(
    approach_dir: &Vec3,
    away_from: &Vec3,
) -> Result<Vec3, GeometryError> {
    let n = approach_dir.x.hypot(approach_dir.y);
    if n < 1e-12 {
        return Err(GeometryError::DegenerateDirection);
    }
    let perp = Vec3::new(-approach_dir.y / n, approach_dir.x / n, 0.0);
    if perp.dot(away_from) < 0.0 {
        Ok(-perp)
    } else {
        Ok(perp)
    }
}
