//! Dense box-constrained QP solver: operator splitting (alternating
//! projection onto the constraint boxes and a linear-system solve) with an
//! active-set polish step for high-accuracy terminations.
//!
//! Solves `min 1/2 x'Hx + q'x  s.t.  l <= Cx <= u` with `H` positive
//! definite. Deterministic: fixed iteration schedule, no randomness.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("QP infeasible")]
    Infeasible,
    #[error("iteration cap exceeded: primal residual {primal:.3e}, dual residual {dual:.3e}")]
    IterationCap { primal: f64, dual: f64 },
    #[error("Hessian not positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Over-relaxation parameter.
    pub alpha: f64,
    /// Residual threshold below which polishing is attempted.
    pub polish_trigger: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 4000,
            alpha: 1.6,
            polish_trigger: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    /// Constraint multipliers (for warm starting).
    pub y: DVector<f64>,
    pub iterations: usize,
    pub polished: bool,
}

pub struct BoxQp<'a> {
    pub h: &'a DMatrix<f64>,
    pub q: &'a DVector<f64>,
    pub cmat: &'a DMatrix<f64>,
    pub lower: &'a DVector<f64>,
    pub upper: &'a DVector<f64>,
}

impl<'a> BoxQp<'a> {
    fn kkt_factor(&self, sigma: f64, rho: f64) -> Result<Cholesky<f64, nalgebra::Dyn>, QpError> {
        let n = self.h.nrows();
        let mut kkt = self.h.clone();
        for i in 0..n {
            kkt[(i, i)] += sigma;
        }
        kkt += self.cmat.transpose() * self.cmat * rho;
        Cholesky::new(kkt).ok_or(QpError::NotPositiveDefinite)
    }

    /// Stationarity residual `||Hx + q + C'y||_inf`.
    fn dual_residual(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (self.h * x + self.q + self.cmat.transpose() * y).amax()
    }

    fn primal_residual(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
        (self.cmat * x - z).amax()
    }

    /// Max violation of the box `l <= Cx <= u`.
    pub fn feasibility_violation(&self, x: &DVector<f64>) -> f64 {
        let cx = self.cmat * x;
        let mut v: f64 = 0.0;
        for i in 0..cx.len() {
            v = v.max(self.lower[i] - cx[i]).max(cx[i] - self.upper[i]);
        }
        v.max(0.0)
    }

    /// Active-set polish: solve the equality-constrained KKT system for the
    /// constraints judged active from `(z, y)` and accept only if the result
    /// satisfies the full KKT conditions tightly.
    fn polish(
        &self,
        z: &DVector<f64>,
        y: &DVector<f64>,
        tol: f64,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.h.nrows();
        let m = self.cmat.nrows();
        let act_tol = 1e-7;
        let mut active: Vec<(usize, f64, f64)> = Vec::new(); // (row, bound, sign)
        for i in 0..m {
            if y[i] < -act_tol || (z[i] - self.lower[i]).abs() < act_tol && y[i] <= act_tol {
                if (z[i] - self.lower[i]).abs() < 1e-4 {
                    active.push((i, self.lower[i], -1.0));
                }
            } else if y[i] > act_tol || (z[i] - self.upper[i]).abs() < act_tol {
                if (z[i] - self.upper[i]).abs() < 1e-4 {
                    active.push((i, self.upper[i], 1.0));
                }
            }
        }
        let na = active.len();
        let dim = n + na;
        let delta = 1e-9;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(self.h);
        for i in 0..n {
            kkt[(i, i)] += delta;
        }
        for (ai, &(row, _, _)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + ai, j)] = self.cmat[(row, j)];
                kkt[(j, n + ai)] = self.cmat[(row, j)];
            }
            kkt[(n + ai, n + ai)] = -delta;
        }
        let mut rhs = DVector::zeros(dim);
        for i in 0..n {
            rhs[i] = -self.q[i];
        }
        for (ai, &(_, bound, _)) in active.iter().enumerate() {
            rhs[n + ai] = bound;
        }
        let lu = kkt.clone().lu();
        let mut sol = lu.solve(&rhs)?;
        // One round of iterative refinement against the regularization.
        let resid = &rhs - &kkt * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }

        let x = DVector::from_iterator(n, (0..n).map(|i| sol[i]));
        let mut y_full = DVector::zeros(m);
        for (ai, &(row, _, sign)) in active.iter().enumerate() {
            let mult = sol[n + ai];
            // Keep only sign-consistent multipliers.
            if mult * sign < -1e-7 {
                return None;
            }
            y_full[row] = mult;
        }
        if self.feasibility_violation(&x) > tol {
            return None;
        }
        if self.dual_residual(&x, &y_full) > tol.max(1e-8) {
            return None;
        }
        Some((x, y_full))
    }

    /// Primal infeasibility certificate test on the multiplier increment.
    fn certifies_infeasible(&self, dy: &DVector<f64>) -> bool {
        let scale = dy.amax();
        if scale < 1e-12 {
            return false;
        }
        let dyn_ = dy / scale;
        if (self.cmat.transpose() * &dyn_).amax() > 1e-8 {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dyn_.len() {
            support += self.upper[i] * dyn_[i].max(0.0) + self.lower[i] * dyn_[i].min(0.0);
        }
        support < -1e-8
    }

    pub fn solve(
        &self,
        opts: &SolveOptions,
        warm: Option<(&DVector<f64>, &DVector<f64>)>,
    ) -> Result<Solution, QpError> {
        let n = self.h.nrows();
        let m = self.cmat.nrows();
        for i in 0..m {
            if self.lower[i] > self.upper[i] + 1e-12 {
                return Err(QpError::Infeasible);
            }
        }

        let sigma = 1e-6;
        let mut rho = 0.1;
        let mut chol = self.kkt_factor(sigma, rho)?;

        let mut x = warm.map_or_else(|| DVector::zeros(n), |(wx, _)| wx.clone());
        let mut y = warm.map_or_else(|| DVector::zeros(m), |(_, wy)| wy.clone());
        let mut z = {
            let cx = self.cmat * &x;
            DVector::from_iterator(
                m,
                (0..m).map(|i| cx[i].clamp(self.lower[i], self.upper[i])),
            )
        };

        let mut last_primal = f64::INFINITY;
        let mut last_dual = f64::INFINITY;

        for iter in 1..=opts.max_iter {
            let rhs = &x * sigma - self.q + self.cmat.transpose() * (&z * rho - &y);
            let x_tilde = chol.solve(&rhs);
            let z_tilde = self.cmat * &x_tilde;

            let x_next = &x_tilde * opts.alpha + &x * (1.0 - opts.alpha);
            let z_relaxed = &z_tilde * opts.alpha + &z * (1.0 - opts.alpha);
            let mut z_next = DVector::zeros(m);
            for i in 0..m {
                z_next[i] = (z_relaxed[i] + y[i] / rho).clamp(self.lower[i], self.upper[i]);
            }
            let y_next = &y + (&z_relaxed - &z_next) * rho;
            let dy = &y_next - &y;

            x = x_next;
            z = z_next;
            y = y_next;

            if iter % 25 == 0 || iter == opts.max_iter {
                last_primal = self.primal_residual(&x, &z);
                last_dual = self.dual_residual(&x, &y);
                if last_primal < opts.polish_trigger && last_dual < opts.polish_trigger {
                    if let Some((px, py)) = self.polish(&z, &y, opts.tol) {
                        return Ok(Solution {
                            x: px,
                            y: py,
                            iterations: iter,
                            polished: true,
                        });
                    }
                }
                if last_primal < opts.tol && last_dual < opts.tol {
                    return Ok(Solution {
                        x,
                        y,
                        iterations: iter,
                        polished: false,
                    });
                }
                if self.certifies_infeasible(&dy) {
                    return Err(QpError::Infeasible);
                }
            }

            // Adaptive penalty: rebalance primal/dual progress.
            if iter % 100 == 0 {
                let cx_scale = (self.cmat * &x).amax().max(z.amax()).max(1e-10);
                let dual_scale = (self.h * &x)
                    .amax()
                    .max(self.q.amax())
                    .max((self.cmat.transpose() * &y).amax())
                    .max(1e-10);
                let rp = self.primal_residual(&x, &z) / cx_scale;
                let rd = self.dual_residual(&x, &y) / dual_scale;
                let ratio = (rp / rd.max(1e-16)).sqrt().clamp(1e-4, 1e4);
                if ratio > 5.0 || ratio < 0.2 {
                    rho = (rho * ratio).clamp(1e-6, 1e6);
                    chol = self.kkt_factor(sigma, rho)?;
                }
            }
        }

        Err(QpError::IterationCap {
            primal: last_primal,
            dual: last_dual,
        })
    }
}
