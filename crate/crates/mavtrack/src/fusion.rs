//! Per-MAV replicated EKF over own and teammate person detections,
//! recursive covariance merging, and the formation-geometry uncertainty
//! oracle.
//!
//! The filter is a constant-velocity Kalman filter over `[position,
//! velocity]` with white-acceleration process noise; every converted
//! detection is fused as an independent linear position update, so the
//! replicated instances agree whenever they see the same measurement set.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rot_z, SphericalCoord, Vec3};
use crate::sensing::{
    convert_measurement, noise_variances, CartesianMeasurement, NoiseModel, SphericalMeasurement,
};

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("singular innovation covariance")]
    SingularInnovation,
    #[error("singular covariance sum in merge")]
    SingularMergeSum,
    #[error("need at least {min} sensors, got {got}")]
    TooFewSensors { min: usize, got: usize },
    #[error("sensor count must be positive")]
    ZeroSensors,
    #[error("conversion failed: {0}")]
    Conversion(#[from] crate::sensing::SensingError),
}

/// Fused person state: position, velocity and 6x6 covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub position: Vec3,
    pub velocity: Vec3,
    pub cov: Matrix6<f64>,
    pub stamp: f64,
}

impl TargetEstimate {
    pub fn new(position: Vec3, velocity: Vec3, pos_std: f64, vel_std: f64, stamp: f64) -> Self {
        let mut cov = Matrix6::zeros();
        for i in 0..3 {
            cov[(i, i)] = pos_std * pos_std;
            cov[(i + 3, i + 3)] = vel_std * vel_std;
        }
        Self {
            position,
            velocity,
            cov,
            stamp,
        }
    }

    pub fn position_cov(&self) -> Matrix3<f64> {
        self.cov.fixed_view::<3, 3>(0, 0).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EkfParams {
    /// White-acceleration process noise std, m/s².
    pub accel_noise_std: f64,
    /// Initial position std, m.
    pub init_pos_std: f64,
    /// Initial velocity std, m/s.
    pub init_vel_std: f64,
    /// Mahalanobis gate on the position innovation.
    pub gate: f64,
    /// Measurements older than this are dropped, s.
    pub staleness: f64,
}

impl Default for EkfParams {
    fn default() -> Self {
        Self {
            accel_noise_std: 2.0,
            init_pos_std: 5.0,
            init_vel_std: 2.0,
            gate: 5.0,
            staleness: 0.5,
        }
    }
}

/// Constant-velocity prediction with discrete white-acceleration noise.
pub fn ekf_predict(est: &TargetEstimate, dt: f64, params: &EkfParams) -> TargetEstimate {
    let mut f = Matrix6::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    let q = params.accel_noise_std * params.accel_noise_std;
    let dt2 = dt * dt;
    let mut qm = Matrix6::zeros();
    for i in 0..3 {
        qm[(i, i)] = q * dt2 * dt2 / 4.0;
        qm[(i, i + 3)] = q * dt2 * dt / 2.0;
        qm[(i + 3, i)] = q * dt2 * dt / 2.0;
        qm[(i + 3, i + 3)] = q * dt2;
    }
    let cov = f * est.cov * f.transpose() + qm;
    TargetEstimate {
        position: est.position + est.velocity * dt,
        velocity: est.velocity,
        cov,
        stamp: est.stamp + dt,
    }
}

/// Linear position update with Mahalanobis gating and Joseph-form covariance.
/// A gated measurement leaves the estimate unchanged.
pub fn ekf_update(
    est: &TargetEstimate,
    z: &CartesianMeasurement,
    params: &EkfParams,
) -> Result<TargetEstimate, FusionError> {
    let p_pos = est.position_cov();
    let s = p_pos + z.cov;
    let s_inv = s.try_inverse().ok_or(FusionError::SingularInnovation)?;
    let innovation = z.mean - est.position;
    let d2 = (innovation.transpose() * s_inv * innovation)[(0, 0)];
    if d2 > params.gate * params.gate {
        return Ok(est.clone());
    }

    // K = P H' S^-1 with H = [I 0].
    let ph_t = est.cov.fixed_view::<6, 3>(0, 0).into_owned();
    let k = ph_t * s_inv;

    let dx: Vector6<f64> = k * innovation;
    let position = est.position + Vector3::new(dx[0], dx[1], dx[2]);
    let velocity = est.velocity + Vector3::new(dx[3], dx[4], dx[5]);

    // Joseph form: (I - KH) P (I - KH)' + K R K'.
    let mut kh = Matrix6::zeros();
    kh.fixed_view_mut::<6, 3>(0, 0).copy_from(&k);
    let i_kh = Matrix6::identity() - kh;
    let cov = i_kh * est.cov * i_kh.transpose() + k * z.cov * k.transpose();

    Ok(TargetEstimate {
        position,
        velocity,
        cov: 0.5 * (cov + cov.transpose()),
        stamp: est.stamp,
    })
}

/// Recursive covariance merge `S = S1 - S1 (S1 + S2)^-1 S1`.
pub fn merge_covariances(
    sigma1: &Matrix3<f64>,
    sigma2: &Matrix3<f64>,
) -> Result<Matrix3<f64>, FusionError> {
    let sum = sigma1 + sigma2;
    let inv = sum.try_inverse().ok_or(FusionError::SingularMergeSum)?;
    let merged = sigma1 - sigma1 * inv * sigma1;
    Ok(0.5 * (merged + merged.transpose()))
}

/// Trace of the fused covariance for a formation of sensors at the given
/// planar angles and ranges about the target. Each sensor's converted
/// covariance is built at `(r_k, theta_inclination, 0)` and rotated about +z
/// to its bearing before recursive merging.
pub fn formation_fused_trace(
    angles: &[f64],
    ranges: &[f64],
    model: &NoiseModel,
    theta_inclination: f64,
) -> Result<f64, FusionError> {
    if angles.len() < 2 || angles.len() != ranges.len() {
        return Err(FusionError::TooFewSensors {
            min: 2,
            got: angles.len().min(ranges.len()),
        });
    }
    let mut merged: Option<Matrix3<f64>> = None;
    for (&gamma, &r) in angles.iter().zip(ranges.iter()) {
        let (vr, vt, vp) = noise_variances(model, r)?;
        let local = convert_measurement(&SphericalMeasurement {
            coord: SphericalCoord::new(r, theta_inclination, 0.0),
            var_r: vr,
            var_theta: vt,
            var_phi: vp,
            stamp: 0.0,
            observer: 0,
        })?;
        let rz = rot_z(gamma);
        let world = rz * local.cov * rz.transpose();
        merged = Some(match merged {
            None => world,
            Some(acc) => merge_covariances(&acc, &world)?,
        });
    }
    Ok(merged.expect("at least two sensors").trace())
}

/// Optimal angular separation between formation members: `2pi / K`.
pub fn optimal_separation(k: usize) -> Result<f64, FusionError> {
    if k == 0 {
        return Err(FusionError::ZeroSensors);
    }
    Ok(std::f64::consts::TAU / k as f64)
}
