//! Synthetic person detection and measurement-noise modeling with
//! spherical-to-Cartesian covariance conversion.
//!
//! The detector stands in for an on-board DNN: it returns the true spherical
//! coordinate of the person perturbed by zero-mean Gaussian noise whenever
//! the person is inside the camera frustum with an unblocked line of sight.
//!
//! The conversion debiases the Cartesian mean multiplicatively and evaluates
//! the exact second moments of the converted random vector at the measured
//! coordinate, so the covariance is consistent with Monte-Carlo conversions
//! of noisy spherical samples.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    cartesian_to_spherical, spherical_to_cartesian, CameraModel, MavPose, SphericalCoord, Vec3,
};
use crate::potential::Obstacle;

pub type MavId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum SensingError {
    #[error("range must be positive, got {0}")]
    NonPositiveRange(f64),
    #[error("noise constants must be positive")]
    InvalidNoiseModel,
    #[error("conversion degenerate: covariance not positive semidefinite")]
    ConversionDegenerate,
}

/// Measurement-noise constants: range variance grows quadratically with
/// distance (`sigma_r^2 = c1 r^2`), bearing and inclination variances are
/// constant (`sigma_phi^2 = c2`, `sigma_theta^2 = c3`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub c1: f64,
    /// Bearing variance, rad².
    pub c2: f64,
    /// Inclination variance, rad².
    pub c3: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        // ~0.8 m range std at the 8 m working distance, ~1.1 deg angle std.
        Self {
            c1: 0.01,
            c2: 4e-4,
            c3: 4e-4,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SensingError> {
        if self.c1 > 0.0 && self.c2 > 0.0 && self.c3 > 0.0 {
            Ok(())
        } else {
            Err(SensingError::InvalidNoiseModel)
        }
    }
}

/// `(sigma_r^2, sigma_theta^2, sigma_phi^2)` at range `r`.
pub fn noise_variances(model: &NoiseModel, r: f64) -> Result<(f64, f64, f64), SensingError> {
    if r <= 0.0 {
        return Err(SensingError::NonPositiveRange(r));
    }
    Ok((model.c1 * r * r, model.c3, model.c2))
}

/// One spherical observation of the person with its noise variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalMeasurement {
    pub coord: SphericalCoord,
    pub var_r: f64,
    pub var_theta: f64,
    pub var_phi: f64,
    /// Simulation time of the observation, seconds.
    pub stamp: f64,
    pub observer: MavId,
}

/// Converted measurement: Cartesian mean and covariance. The frame is
/// whatever frame the spherical measurement was expressed in; the simulator
/// rotates camera-frame conversions into the world frame before fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartesianMeasurement {
    pub mean: Vec3,
    pub cov: Matrix3<f64>,
}

impl CartesianMeasurement {
    /// Rotate into another frame and translate, optionally inflating the
    /// covariance with the observer's self-localization position covariance.
    pub fn transformed(
        &self,
        rotation: &Matrix3<f64>,
        translation: &Vec3,
        self_pos_cov: Option<&Matrix3<f64>>,
    ) -> CartesianMeasurement {
        let mean = rotation * self.mean + translation;
        let mut cov = rotation * self.cov * rotation.transpose();
        if let Some(sc) = self_pos_cov {
            cov += sc;
        }
        CartesianMeasurement { mean, cov }
    }
}

/// Convert a spherical measurement to a Cartesian mean and covariance.
///
/// The mean is the multiplicatively debiased conversion; the covariance
/// entries are the exact moments of `r_m sin(theta_m) cos(phi_m)` (etc.)
/// under independent Gaussian noise, evaluated at the measured coordinate.
pub fn convert_measurement(
    s: &SphericalMeasurement,
) -> Result<CartesianMeasurement, SensingError> {
    let SphericalCoord { r, theta, phi } = s.coord;
    let (vr, vt, vp) = (s.var_r, s.var_theta, s.var_phi);

    let lam_t = (-vt / 2.0).exp();
    let lam_p = (-vp / 2.0).exp();
    let e2t = (-2.0 * vt).exp();
    let e2p = (-2.0 * vp).exp();

    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let cos2t = 2.0 * ct * ct - 1.0;
    let cos2p = 2.0 * cp * cp - 1.0;
    let sin2t = 2.0 * st * ct;
    let sin2p = 2.0 * sp * cp;

    // Debiased mean.
    let mean = Vec3::new(
        r * st * cp / (lam_t * lam_p),
        r * st * sp / (lam_t * lam_p),
        r * ct / lam_t,
    );

    // Raw-conversion first moments and second-moment factors.
    let mx = r * st * cp * lam_t * lam_p;
    let my = r * st * sp * lam_t * lam_p;
    let mz = r * ct * lam_t;
    let er2 = r * r + vr;
    let e_s2t = 0.5 * (1.0 - cos2t * e2t);
    let e_c2t = 0.5 * (1.0 + cos2t * e2t);
    let e_s2p = 0.5 * (1.0 - cos2p * e2p);
    let e_c2p = 0.5 * (1.0 + cos2p * e2p);
    let e_stct = 0.5 * sin2t * e2t;
    let e_spcp = 0.5 * sin2p * e2p;

    let rxx = er2 * e_s2t * e_c2p - mx * mx;
    let ryy = er2 * e_s2t * e_s2p - my * my;
    let rzz = er2 * e_c2t - mz * mz;
    let rxy = er2 * e_s2t * e_spcp - mx * my;
    let rxz = er2 * e_stct * cp * lam_p - mx * mz;
    let ryz = er2 * e_stct * sp * lam_p - my * mz;

    let cov = Matrix3::new(rxx, rxy, rxz, rxy, ryy, ryz, rxz, ryz, rzz);

    let scale = cov.trace().abs().max(1.0);
    let min_eig = cov
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    if min_eig < -1e-10 * scale {
        return Err(SensingError::ConversionDegenerate);
    }
    Ok(CartesianMeasurement { mean, cov })
}

/// Diagonal covariance model `diag(cx r^2, cy r^2, cz r^2)` with
/// `kappa = cx + cy + cz`, valid at the nominal geometry `theta = pi/2`,
/// `phi = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompactCovModel {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub kappa: f64,
}

impl CompactCovModel {
    /// Closed-form constants implied by the noise model at the nominal
    /// geometry (`sigma_r^2 = c1 r^2` substituted).
    pub fn from_noise_model(m: &NoiseModel) -> Self {
        let e2p = (-2.0 * m.c2).exp();
        let e2t = (-2.0 * m.c3).exp();
        let cx = (1.0 + m.c1) * (1.0 + e2t) * (1.0 + e2p) / 4.0 - (-(m.c2 + m.c3)).exp();
        let cy = (1.0 + m.c1) * (1.0 + e2t) * (1.0 - e2p) / 4.0;
        let cz = (1.0 + m.c1) * (1.0 - e2t) / 2.0;
        Self {
            cx,
            cy,
            cz,
            kappa: cx + cy + cz,
        }
    }
}

/// `diag(cx r^2, cy r^2, cz r^2)`.
pub fn compact_covariance(m: &CompactCovModel, r: f64) -> Result<Matrix3<f64>, SensingError> {
    if r <= 0.0 {
        return Err(SensingError::NonPositiveRange(r));
    }
    let r2 = r * r;
    Ok(Matrix3::from_diagonal(&Vector3::new(
        m.cx * r2,
        m.cy * r2,
        m.cz * r2,
    )))
}

/// `kappa r^2`; equals the trace of [`compact_covariance`].
pub fn trace_cov(m: &CompactCovModel, r: f64) -> Result<f64, SensingError> {
    if r <= 0.0 {
        return Err(SensingError::NonPositiveRange(r));
    }
    Ok(m.kappa * r * r)
}

/// Synthetic detection: the true spherical coordinate of the person in the
/// camera frame, perturbed per the noise model, or `None` when the person is
/// outside the frustum or occluded.
pub fn synth_detect<R: Rng + ?Sized>(
    person_gt: &Vec3,
    mav: &MavPose,
    cam: &CameraModel,
    model: &NoiseModel,
    obstacles: &[Obstacle],
    stamp: f64,
    observer: MavId,
    rng: &mut R,
) -> Option<SphericalMeasurement> {
    let p_cam = cam.world_to_camera(mav, person_gt);
    if !cam.in_frustum(&p_cam) {
        return None;
    }
    if !crate::potential::segment_clear(&mav.position, person_gt, obstacles) {
        return None;
    }
    let truth = cartesian_to_spherical(&p_cam).ok()?;
    let (vr, vt, vp) = noise_variances(model, truth.r).ok()?;

    let nr: f64 = rng.sample(StandardNormal);
    let nt: f64 = rng.sample(StandardNormal);
    let np: f64 = rng.sample(StandardNormal);
    let coord = SphericalCoord::new(
        (truth.r + vr.sqrt() * nr).max(1e-6),
        (truth.theta + vt.sqrt() * nt).clamp(0.0, std::f64::consts::PI),
        crate::geometry::wrap_angle(truth.phi + vp.sqrt() * np),
    );
    Some(SphericalMeasurement {
        coord,
        var_r: vr,
        var_theta: vt,
        var_phi: vp,
        stamp,
        observer,
    })
}

/// Map a spherical measurement through the plain (biased) conversion;
/// used by the Monte-Carlo oracle and tests.
pub fn raw_conversion(coord: &SphericalCoord) -> Vec3 {
    spherical_to_cartesian(coord)
}
