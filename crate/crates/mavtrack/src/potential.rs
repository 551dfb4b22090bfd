//! Repulsive potential fields acting as external control inputs: angular
//! formation spreading, dynamic and static obstacle avoidance, person safety
//! and approach-angle penalties, plus the avoidance-guarantee thresholds.
//!
//! All field magnitudes share a single compactly supported profile: clamped
//! at `f_max` below `d_min`, zero beyond `d_max`, cotangent-shaped in
//! between.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_about_target, angular_distance, wrap_angle, Vec3};
use crate::sensing::MavId;

#[derive(Debug, Error, PartialEq)]
pub enum PotentialError {
    #[error("invalid field params: require 0 < d_min < d_max, f_max > 0")]
    InvalidFieldParams,
    #[error("degenerate approach direction")]
    DegenerateApproach,
}

/// Thresholds for one potential-field force type. `d_min`/`d_max` are meters
/// for distance-argument fields and radians for angle-argument fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub d_min: f64,
    pub d_max: f64,
    /// Clamp magnitude; chosen `>= |u_max|` so avoidance overrides control.
    pub f_max: f64,
    /// Non-zero floor in the active-tracking magnitude.
    pub c: f64,
    /// Shape gain of the cotangent profile.
    pub lambda: f64,
}

impl FieldParams {
    pub fn new(d_min: f64, d_max: f64, f_max: f64, c: f64, lambda: f64) -> Self {
        Self {
            d_min,
            d_max,
            f_max,
            c,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<(), PotentialError> {
        if self.d_min > 0.0
            && self.d_max > self.d_min
            && self.f_max > 0.0
            && self.c >= 0.0
            && self.lambda > 0.0
        {
            Ok(())
        } else {
            Err(PotentialError::InvalidFieldParams)
        }
    }
}

/// Cotangential field magnitude: `f_max` for `d <= d_min`, zero for
/// `d >= d_max`, `min(f_max, lambda * cot(pi/2 * (d-d_min)/(d_max-d_min)))`
/// in between.
pub fn cotangential_magnitude(d: f64, p: &FieldParams) -> f64 {
    if d <= p.d_min {
        p.f_max
    } else if d >= p.d_max {
        0.0
    } else {
        let x = (d - p.d_min) / (p.d_max - p.d_min);
        let arg = std::f64::consts::FRAC_PI_2 * x;
        (p.lambda * arg.cos() / arg.sin()).min(p.f_max)
    }
}

/// Obstacle geometry: a sphere or a vertical capsule (tree-trunk style, axis
/// from `center` up to `center + (0,0,height)` with hemispherical caps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObstacleShape {
    Sphere,
    VerticalCapsule { height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObstacleKind {
    Static,
    Dynamic(MavId),
    Person,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec3,
    pub radius: f64,
    pub kind: ObstacleKind,
    pub shape: ObstacleShape,
}

impl Obstacle {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Self {
            center,
            radius,
            kind: ObstacleKind::Static,
            shape: ObstacleShape::Sphere,
        }
    }

    pub fn trunk(center: Vec3, radius: f64, height: f64) -> Self {
        Self {
            center,
            radius,
            kind: ObstacleKind::Static,
            shape: ObstacleShape::VerticalCapsule { height },
        }
    }

    pub fn person(center: Vec3, radius: f64, height: f64) -> Self {
        Self {
            center,
            radius,
            kind: ObstacleKind::Person,
            shape: ObstacleShape::VerticalCapsule { height },
        }
    }

    fn closest_axis_point(&self, p: &Vec3) -> Vec3 {
        match self.shape {
            ObstacleShape::Sphere => self.center,
            ObstacleShape::VerticalCapsule { height } => {
                let z = p.z.clamp(self.center.z, self.center.z + height);
                Vec3::new(self.center.x, self.center.y, z)
            }
        }
    }

    /// Signed distance from a point to the obstacle surface (negative inside).
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        (p - self.closest_axis_point(p)).norm() - self.radius
    }

    /// Unit direction pushing away from the obstacle, `None` when the point
    /// sits exactly on the axis.
    pub fn repulsion_dir(&self, p: &Vec3) -> Option<Vec3> {
        let d = p - self.closest_axis_point(p);
        let n = d.norm();
        if n < 1e-9 {
            None
        } else {
            Some(d / n)
        }
    }

    /// Smallest distance from segment `a..b` to the obstacle surface.
    pub fn segment_clearance(&self, a: &Vec3, b: &Vec3) -> f64 {
        let d = match self.shape {
            ObstacleShape::Sphere => point_segment_distance(&self.center, a, b),
            ObstacleShape::VerticalCapsule { height } => {
                let top = self.center + Vec3::new(0.0, 0.0, height);
                segment_segment_distance(a, b, &self.center, &top)
            }
        };
        d - self.radius
    }
}

/// True iff the segment `a..b` clears every non-person obstacle.
pub fn segment_clear(a: &Vec3, b: &Vec3, obstacles: &[Obstacle]) -> bool {
    obstacles
        .iter()
        .filter(|o| o.kind != ObstacleKind::Person)
        .all(|o| o.segment_clearance(a, b) > 0.0)
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 < 1e-18 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Closest distance between segments `p1..q1` and `p2..q2`.
fn segment_segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);

    let (s, t);
    if a < 1e-18 && e < 1e-18 {
        return (p1 - p2).norm();
    }
    if a < 1e-18 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e < 1e-18 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut sv = if denom > 1e-18 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut tv = (b * sv + f) / e;
            if tv < 0.0 {
                tv = 0.0;
                sv = (-c / a).clamp(0.0, 1.0);
            } else if tv > 1.0 {
                tv = 1.0;
                sv = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = sv;
            t = tv;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Safety inputs for the avoidance-guarantee thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    /// Low-level tracking error bound, m.
    pub e_max: f64,
    /// Maximum MAV speed norm, m/s.
    pub v_max_norm: f64,
    /// Control period, s.
    pub dt: f64,
    /// Maximum self-localization covariance eigenvalue (own), m.
    pub r_sigma_self: f64,
    /// Maximum teammate localization covariance eigenvalue, m.
    pub r_sigma_mate: f64,
    /// Communication-delay allowance, m.
    pub r_comm: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            e_max: 1.0,
            v_max_norm: 5.0,
            dt: 0.1,
            r_sigma_self: 1.0,
            r_sigma_mate: 1.0,
            r_comm: 0.5,
        }
    }
}

/// Avoidance thresholds: `d_min = e_max + v_max dt`,
/// `d_max = r_sigma_self + r_sigma_mate + r_comm`, floored at `d_min + 0.1`
/// so the field stays well-formed.
pub fn safety_thresholds(s: &SafetyParams) -> (f64, f64) {
    let d_min = s.e_max + s.v_max_norm * s.dt;
    let d_max = (s.r_sigma_self + s.r_sigma_mate + s.r_comm).max(d_min + 0.1);
    (d_min, d_max)
}

/// Field parameters per force type, plus the clamp applied to the summed
/// external input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSet {
    /// Angular formation field; `d_min`/`d_max` in radians, `d_max = 2pi/K`.
    pub active: FieldParams,
    /// Inter-MAV avoidance; thresholds from [`safety_thresholds`].
    pub dynamic: FieldParams,
    /// Static-obstacle avoidance, measured to the obstacle surface.
    pub static_obs: FieldParams,
    /// Person standoff (applied to the person-kind obstacle).
    pub person: FieldParams,
    /// Approach-angle penalty; `d_min` is the obstruction margin in meters.
    pub angular: FieldParams,
    /// Norm clamp on the total external input.
    pub f_max_total: f64,
}

impl FieldSet {
    /// Defaults for a team of `k` MAVs. The avoidance clamps satisfy
    /// `f_max >= |u_max| = |(3, 3, 11)| ~ 11.79` and the shape gain is
    /// `|u_max| / 4`. The view-point fields (active, angular) carry smaller
    /// clamps so collision avoidance keeps precedence when forces mix under
    /// the total clamp.
    pub fn for_team(k: usize) -> Self {
        let u_max_norm = (9.0f64 + 9.0 + 121.0).sqrt();
        let f_max = 12.0;
        let lambda = u_max_norm / 4.0;
        let active_d_max = std::f64::consts::TAU / (k.max(1) as f64);
        let (dyn_min, dyn_max) = safety_thresholds(&SafetyParams::default());
        Self {
            // The floor c keeps the angular push alive near the safety
            // surface, where the radial factor of the magnitude vanishes.
            active: FieldParams::new(0.1_f64.min(active_d_max / 2.0), active_d_max, 4.0, 1.0, lambda),
            dynamic: FieldParams::new(dyn_min, dyn_max, f_max, 0.0, lambda),
            static_obs: FieldParams::new(1.5, 4.0, f_max, 0.0, lambda),
            person: FieldParams::new(2.0, 4.0, f_max, 0.0, lambda),
            angular: FieldParams::new(1.0, 3.0, 3.0, 0.0, lambda),
            f_max_total: f_max,
        }
    }

    pub fn validate(&self) -> Result<(), PotentialError> {
        self.active.validate()?;
        self.dynamic.validate()?;
        self.static_obs.validate()?;
        self.person.validate()?;
        self.angular.validate()?;
        if self.f_max_total > 0.0 {
            Ok(())
        } else {
            Err(PotentialError::InvalidFieldParams)
        }
    }
}

/// Angular formation force: for every teammate closer than `d_max = 2pi/K`
/// in wrapped angle about the target, push tangentially away from that
/// teammate's angle with magnitude `(|r_des - range| + c) F(d_act)`.
/// The result is horizontal.
pub fn active_tracking_force(
    self_plan_pos: &Vec3,
    teammate_angles: &[f64],
    target_pos: &Vec3,
    r_des: f64,
    p: &FieldParams,
) -> Result<Vec3, PotentialError> {
    let gamma_self =
        angle_about_target(self_plan_pos, target_pos).map_err(|_| PotentialError::DegenerateApproach)?;
    let radial = self_plan_pos - target_pos;
    let range = radial.norm();
    let rho = Vec3::new(radial.x, radial.y, 0.0);
    let rho_n = rho.norm();
    if rho_n < 1e-12 {
        return Err(PotentialError::DegenerateApproach);
    }
    // Counter-clockwise tangent; moving along +tangent increases gamma_self.
    let tangent = Vec3::new(-rho.y / rho_n, rho.x / rho_n, 0.0);

    let mut force = Vector3::zeros();
    for &gamma_j in teammate_angles {
        let d_act = angular_distance(gamma_self, gamma_j);
        let f = cotangential_magnitude(d_act, p);
        if f == 0.0 {
            continue;
        }
        // View-point shaping stays subordinate to collision avoidance:
        // the per-teammate magnitude saturates at this field's own clamp.
        let magnitude = (((r_des - range).abs() + p.c) * f).min(p.f_max);
        let diff = wrap_angle(gamma_self - gamma_j);
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            1.0
        };
        force += tangent * (sign * magnitude);
    }
    Ok(force)
}

/// Deterministic horizontal unit vector for coincident-position tie-breaks,
/// derived from the unordered id pair; the lower id gets `+dir`, the higher
/// id `-dir`, preserving pairwise antisymmetry.
fn tie_break_dir(self_id: MavId, other_id: MavId) -> Vec3 {
    let (lo, hi) = if self_id <= other_id {
        (self_id, other_id)
    } else {
        (other_id, self_id)
    };
    let mut h = (lo as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ (hi as u64).wrapping_mul(0xd1b54a32d192ed03);
    h ^= h >> 31;
    let angle = (h as f64 / u64::MAX as f64) * std::f64::consts::TAU;
    let dir = Vec3::new(angle.cos(), angle.sin(), 0.0);
    if self_id <= other_id {
        dir
    } else {
        -dir
    }
}

/// Pairwise repulsion from teammates' planned positions at the same horizon
/// step: `sum_j F(|x_k - x_j|) beta_kj` with `beta_kj` pointing away from
/// teammate `j`.
pub fn dynamic_obstacle_force(
    self_id: MavId,
    self_pos: &Vec3,
    teammates: &[(MavId, Vec3)],
    p: &FieldParams,
) -> Vec3 {
    let mut force = Vector3::zeros();
    for (mate_id, mate_pos) in teammates {
        let delta = self_pos - mate_pos;
        let d = delta.norm();
        if d < 1e-9 {
            force += tie_break_dir(self_id, *mate_id) * p.f_max;
            continue;
        }
        let f = cotangential_magnitude(d, p);
        if f > 0.0 {
            force += delta / d * f;
        }
    }
    force
}

/// Repulsion from obstacle surfaces: `sum F(surface_distance) beta`.
/// Positions inside an obstacle are pushed at `f_max` from the obstacle axis.
/// Works for any obstacle kind, so the person-safety term is this function
/// applied to a person-kind obstacle.
pub fn static_obstacle_force(self_pos: &Vec3, obstacles: &[Obstacle], p: &FieldParams) -> Vec3 {
    let mut force = Vector3::zeros();
    for (idx, obs) in obstacles.iter().enumerate() {
        let d = obs.surface_distance(self_pos);
        let f = cotangential_magnitude(d.max(0.0), p);
        if f == 0.0 {
            continue;
        }
        let dir = obs.repulsion_dir(self_pos).unwrap_or_else(|| {
            // On the axis exactly: fixed deterministic horizontal push.
            let a = idx as f64 * 2.399963; // golden angle spacing
            Vec3::new(a.cos(), a.sin(), 0.0)
        });
        force += dir * f;
    }
    force
}

/// Penalize approach angles whose line of approach to the target is blocked:
/// obstacles near the self-to-target segment produce a tangential push away
/// from the obstructed angle, with the field profile applied to the segment
/// clearance (margin `d_min`, soft falloff to `d_max`). Pushes toward the
/// side with the larger free angular gap when dead-on.
pub fn angular_obstacle_force(
    self_pos: &Vec3,
    target_pos: &Vec3,
    obstacles: &[Obstacle],
    p: &FieldParams,
) -> Vec3 {
    let gamma_self = match angle_about_target(self_pos, target_pos) {
        Ok(g) => g,
        Err(_) => return Vector3::zeros(),
    };
    let radial = self_pos - target_pos;
    let rho = Vec3::new(radial.x, radial.y, 0.0);
    let rho_n = rho.norm();
    if rho_n < 1e-12 {
        return Vector3::zeros();
    }
    let tangent = Vec3::new(-rho.y / rho_n, rho.x / rho_n, 0.0);

    // Angle and field magnitude of every obstacle near the approach line.
    let mut obstructed: Vec<(f64, f64)> = Vec::new();
    for obs in obstacles {
        if obs.kind == ObstacleKind::Person {
            continue;
        }
        let clearance = obs.segment_clearance(self_pos, target_pos).max(0.0);
        let magnitude = cotangential_magnitude(clearance, p);
        if magnitude > 0.0 {
            let g = angle_about_target(&obs.center, target_pos).unwrap_or(gamma_self);
            obstructed.push((g, magnitude));
        }
    }
    if obstructed.is_empty() {
        return Vector3::zeros();
    }

    let mut force = Vector3::zeros();
    for (i, &(g_obs, magnitude)) in obstructed.iter().enumerate() {
        let diff = wrap_angle(gamma_self - g_obs);
        let sign = if diff.abs() > 1e-9 {
            diff.signum()
        } else {
            // Dead-on: pick the side with more clearance from the other
            // obstructed angles.
            let gap = |dir: f64| {
                obstructed
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, &(go, _))| angular_distance(gamma_self + dir * 0.5, go))
                    .fold(f64::INFINITY, f64::min)
            };
            if gap(1.0) >= gap(-1.0) {
                1.0
            } else {
                -1.0
            }
        };
        force += tangent * (sign * magnitude);
    }
    force
}

/// Clamp the summed external input to `f_max`, preserving direction.
pub fn total_external_input(f_act: &Vec3, f_obs: &Vec3, f_max: f64) -> Vec3 {
    let sum = f_act + f_obs;
    let n = sum.norm();
    if n <= f_max || n == 0.0 {
        sum
    } else {
        sum * (f_max / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn params(d_min: f64, d_max: f64, f_max: f64, c: f64, lambda: f64) -> FieldParams {
        let p = FieldParams::new(d_min, d_max, f_max, c, lambda);
        p.validate().unwrap();
        p
    }

    #[test]
    fn cotangential_boundaries() {
        let p = params(1.0, 3.0, 10.0, 0.0, 2.0);
        assert_eq!(cotangential_magnitude(3.0, &p), 0.0);
        assert_eq!(cotangential_magnitude(5.0, &p), 0.0);
        assert_eq!(cotangential_magnitude(1.0, &p), 10.0);
        assert_eq!(cotangential_magnitude(0.0, &p), 10.0);
        // Midpoint: cot(pi/4) = 1.
        assert_relative_eq!(cotangential_magnitude(2.0, &p), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cotangential_strictly_decreasing_where_unclamped() {
        let p = params(1.0, 3.0, 1e6, 0.0, 2.0);
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let d = 1.0 + 2.0 * i as f64 / 200.0;
            let f = cotangential_magnitude(d, &p);
            assert!(f < prev, "not strictly decreasing at d={d}");
            prev = f;
        }
    }

    #[test]
    fn safety_threshold_values() {
        let s = SafetyParams {
            e_max: 1.0,
            v_max_norm: 5.0,
            dt: 0.1,
            ..SafetyParams::default()
        };
        let (d_min, _) = safety_thresholds(&s);
        assert_relative_eq!(d_min, 1.5);

        let s = SafetyParams {
            e_max: 1.0,
            v_max_norm: 5.0,
            dt: 0.1,
            r_sigma_self: 0.5,
            r_sigma_mate: 0.5,
            r_comm: 0.5,
        };
        let (d_min, d_max) = safety_thresholds(&s);
        assert_relative_eq!(d_min, 1.5);
        assert_relative_eq!(d_max, 1.6, epsilon = 1e-12); // floored

        let s = SafetyParams {
            r_sigma_self: 0.0,
            r_sigma_mate: 0.0,
            r_comm: 0.0,
            ..s
        };
        let (d_min, d_max) = safety_thresholds(&s);
        assert_relative_eq!(d_max, d_min + 0.1);
    }

    #[test]
    fn active_force_zero_outside_field() {
        let k = 3.0;
        let p = params(0.1, 2.0 * PI / k, 12.0, 0.1, 3.0);
        let target = Vec3::zeros();
        let self_pos = Vec3::new(8.0, 0.0, 8.0);
        // Teammates exactly at and beyond 2pi/3 separation.
        let f = active_tracking_force(
            &self_pos,
            &[2.0 * PI / 3.0, -2.0 * PI / 3.0],
            &target,
            11.3,
            &p,
        )
        .unwrap();
        // Separations sit exactly on the field boundary; only angle-wrap
        // rounding can leak through.
        assert!(f.norm() < 1e-9, "expected zero force, got {f:?}");
    }

    #[test]
    fn active_force_farther_mav_pushed_harder() {
        let p = params(0.1, 2.0 * PI / 3.0, 12.0, 0.1, 3.0);
        let target = Vec3::zeros();
        let r_des = 11.3137;
        // Both at the same approach angle as one teammate at gamma = 0.3.
        let a = active_tracking_force(
            &Vec3::new(r_des + 2.0, 0.0, 0.0),
            &[0.3],
            &target,
            r_des,
            &p,
        )
        .unwrap();
        let b = active_tracking_force(&Vec3::new(r_des, 0.0, 0.0), &[0.3], &target, r_des, &p)
            .unwrap();
        assert!(a.norm() > b.norm());
        assert_eq!(a.z, 0.0);
        assert_eq!(b.z, 0.0);
    }

    #[test]
    fn active_force_floor_at_desired_surface() {
        let p = params(0.1, 2.0 * PI / 3.0, 12.0, 0.1, 3.0);
        let target = Vec3::zeros();
        let r_des = 8.0;
        // Teammate at identical angle: d_act = 0 so F = f_max; self at r_des.
        let f = active_tracking_force(&Vec3::new(8.0, 0.0, 0.0), &[0.0], &target, r_des, &p)
            .unwrap();
        assert_relative_eq!(f.norm(), 0.1 * 12.0, epsilon = 1e-9);
    }

    #[test]
    fn dynamic_force_cases() {
        let p = params(1.5, 3.0, 10.0, 0.0, 3.0);
        let own = Vec3::new(0.0, 0.0, 8.0);
        // All far away.
        let f = dynamic_obstacle_force(0, &own, &[(1, Vec3::new(5.0, 0.0, 8.0))], &p);
        assert_eq!(f, Vec3::zeros());
        // Teammate at exactly d_min along +x: push along -x at f_max.
        let f = dynamic_obstacle_force(0, &own, &[(1, Vec3::new(1.5, 0.0, 8.0))], &p);
        assert_relative_eq!(f, Vec3::new(-10.0, 0.0, 0.0), epsilon = 1e-9);
        // Symmetric teammates at +-y cancel in y.
        let f = dynamic_obstacle_force(
            0,
            &own,
            &[(1, Vec3::new(0.0, 2.0, 8.0)), (2, Vec3::new(0.0, -2.0, 8.0))],
            &p,
        );
        assert!(f.y.abs() < 1e-12);
    }

    #[test]
    fn dynamic_force_antisymmetric_tie_break() {
        let p = params(1.5, 3.0, 10.0, 0.0, 3.0);
        let pos = Vec3::new(1.0, 2.0, 8.0);
        let f01 = dynamic_obstacle_force(0, &pos, &[(1, pos)], &p);
        let f10 = dynamic_obstacle_force(1, &pos, &[(0, pos)], &p);
        assert_relative_eq!(f01, -f10, epsilon = 1e-12);
        assert_relative_eq!(f01.norm(), 10.0, epsilon = 1e-12);
        assert_eq!(f01.z, 0.0);
    }

    #[test]
    fn static_force_cases() {
        let p = params(1.5, 3.0, 10.0, 0.0, 3.0);
        let pos = Vec3::new(0.0, 0.0, 8.0);
        // No obstacle within range.
        let far = Obstacle::sphere(Vec3::new(10.0, 0.0, 8.0), 0.5);
        assert_eq!(static_obstacle_force(&pos, &[far], &p), Vec3::zeros());
        // Obstacle surface at exactly d_min along -x: push along +x at f_max.
        let near = Obstacle::sphere(Vec3::new(-2.0, 0.0, 8.0), 0.5);
        let f = static_obstacle_force(&pos, &[near], &p);
        assert_relative_eq!(f, Vec3::new(10.0, 0.0, 0.0), epsilon = 1e-9);
        // Person below at d_min horizontal: horizontal repulsion at f_max.
        let person = Obstacle::person(Vec3::new(1.8, 0.0, 0.0), 0.3, 20.0);
        let f = static_obstacle_force(&pos, &[person], &p);
        assert!(f.x < 0.0);
        assert_relative_eq!(f.norm(), 10.0, epsilon = 1e-9);
        assert_eq!(f.z, 0.0);
    }

    #[test]
    fn static_force_inside_obstacle_clamps() {
        let p = params(1.5, 3.0, 10.0, 0.0, 3.0);
        let obs = Obstacle::sphere(Vec3::new(0.0, 0.0, 8.0), 1.0);
        let f = static_obstacle_force(&Vec3::new(0.5, 0.0, 8.0), &[obs], &p);
        assert_relative_eq!(f, Vec3::new(10.0, 0.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn angular_force_cases() {
        let p = params(1.5, 3.0, 10.0, 0.0, 3.0);
        let target = Vec3::zeros();
        let self_pos = Vec3::new(8.0, 0.0, 8.0);
        assert_eq!(
            angular_obstacle_force(&self_pos, &target, &[], &p),
            Vec3::zeros()
        );
        // Obstacle on the approach ray midpoint: tangential push.
        let mid = Obstacle::sphere(Vec3::new(4.0, 0.0, 4.0), 0.5);
        let f = angular_obstacle_force(&self_pos, &target, &[mid], &p);
        assert!(f.norm() > 0.0);
        let approach = self_pos - target;
        assert!(f.dot(&approach).abs() < 1e-9);
        // Obstacle behind the MAV: no force.
        let behind = Obstacle::sphere(Vec3::new(12.0, 0.0, 12.0), 0.5);
        assert_eq!(
            angular_obstacle_force(&self_pos, &target, &[behind], &p),
            Vec3::zeros()
        );
    }

    #[test]
    fn total_input_clamps() {
        let f = total_external_input(&Vec3::new(1.0, 0.0, 0.0), &Vec3::new(0.0, 1.0, 0.0), 10.0);
        assert_relative_eq!(f, Vec3::new(1.0, 1.0, 0.0));
        let f = total_external_input(
            &Vec3::new(12.0, 0.0, 0.0),
            &Vec3::new(0.0, 16.0, 0.0),
            10.0,
        );
        assert_relative_eq!(f.norm(), 10.0, epsilon = 1e-12);
        assert_relative_eq!(f.y / f.x, 16.0 / 12.0, epsilon = 1e-12);
        assert_eq!(
            total_external_input(&Vec3::zeros(), &Vec3::zeros(), 10.0),
            Vec3::zeros()
        );
    }

    #[test]
    fn capsule_geometry() {
        let trunk = Obstacle::trunk(Vec3::new(0.0, 0.0, 0.0), 0.5, 10.0);
        // Beside the trunk at mid height.
        assert_relative_eq!(trunk.surface_distance(&Vec3::new(2.0, 0.0, 5.0)), 1.5);
        // Above the top cap.
        assert_relative_eq!(trunk.surface_distance(&Vec3::new(0.0, 0.0, 12.0)), 1.5);
        // Segment passing through the trunk is blocked.
        assert!(!segment_clear(
            &Vec3::new(-3.0, 0.0, 5.0),
            &Vec3::new(3.0, 0.0, 5.0),
            &[trunk]
        ));
        // Segment passing above it is clear.
        assert!(segment_clear(
            &Vec3::new(-3.0, 0.0, 12.0),
            &Vec3::new(3.0, 0.0, 12.0),
            &[trunk]
        ));
        // Person obstacles never occlude.
        let person = Obstacle::person(Vec3::zeros(), 0.3, 2.0);
        assert!(segment_clear(
            &Vec3::new(-3.0, 0.0, 1.0),
            &Vec3::new(3.0, 0.0, 1.0),
            &[person]
        ));
    }

    proptest! {
        #[test]
        fn field_monotone_nonincreasing(
            d_min in 0.1f64..2.0,
            width in 0.1f64..5.0,
            f_max in 0.5f64..20.0,
            lambda in 0.1f64..10.0,
        ) {
            let p = FieldParams::new(d_min, d_min + width, f_max, 0.0, lambda);
            let mut prev = f64::INFINITY;
            for i in 0..=100 {
                let d = (d_min + width + 1.0) * i as f64 / 100.0;
                let f = cotangential_magnitude(d, &p);
                prop_assert!(f <= prev + 1e-12);
                prop_assert!(f >= 0.0);
                if d >= p.d_max {
                    prop_assert!(f == 0.0);
                }
                prev = f;
            }
        }

        #[test]
        fn total_input_norm_bounded(
            ax in -30f64..30.0, ay in -30f64..30.0, az in -30f64..30.0,
            bx in -30f64..30.0, by in -30f64..30.0, bz in -30f64..30.0,
            f_max in 0.1f64..20.0,
        ) {
            let f = total_external_input(&Vec3::new(ax, ay, az), &Vec3::new(bx, by, bz), f_max);
            prop_assert!(f.norm() <= f_max + 1e-9);
        }

        #[test]
        fn dynamic_force_pair_antisymmetric_direction(
            x in -5f64..5.0, y in -5f64..5.0, z in 3f64..10.0,
            dx in -4f64..4.0, dy in -4f64..4.0,
        ) {
            prop_assume!(dx.hypot(dy) > 1e-6);
            let p = FieldParams::new(1.5, 3.0, 10.0, 0.0, 3.0);
            let a = Vec3::new(x, y, z);
            let b = Vec3::new(x + dx, y + dy, z);
            let fab = dynamic_obstacle_force(0, &a, &[(1, b)], &p);
            let fba = dynamic_obstacle_force(1, &b, &[(0, a)], &p);
            prop_assert!((fab + fba).norm() < 1e-9);
        }
    }
}
