//! Reference QP solver used by the test suites: accelerated projected
//! gradient on the Lagrangian dual.
//!
//! Independent of the operator-splitting solver: it works on the one-sided
//! form `A x <= b`, iterates only first-order dual steps, and never shares
//! state with the primary path. Accuracy comes from running until the
//! projected-gradient mapping is tiny (capped at one million iterations).

use nalgebra::{Cholesky, DMatrix, DVector};

pub struct DualOracle {
    h_chol: Cholesky<f64, nalgebra::Dyn>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

#[derive(Debug)]
pub struct OracleResult {
    pub x: DVector<f64>,
    pub objective: f64,
    pub dual_value: f64,
    pub iterations: usize,
    pub max_violation: f64,
}

impl DualOracle {
    /// Build from the two-sided box form `l <= Cx <= u`.
    pub fn from_box(
        h: &DMatrix<f64>,
        q: &DVector<f64>,
        cmat: &DMatrix<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
    ) -> Self {
        let m = cmat.nrows();
        let n = cmat.ncols();
        let mut a = DMatrix::zeros(2 * m, n);
        let mut b = DVector::zeros(2 * m);
        a.view_mut((0, 0), (m, n)).copy_from(cmat);
        a.view_mut((m, 0), (m, n)).copy_from(&(-cmat));
        for i in 0..m {
            b[i] = upper[i];
            b[m + i] = -lower[i];
        }
        Self {
            h_chol: Cholesky::new(h.clone()).expect("oracle requires positive definite Hessian"),
            q: q.clone(),
            a,
            b,
        }
    }

    fn primal_of(&self, lambda: &DVector<f64>) -> DVector<f64> {
        -self.h_chol.solve(&(&self.q + self.a.transpose() * lambda))
    }

    fn objective_of(&self, x: &DVector<f64>, h: &DMatrix<f64>) -> f64 {
        0.5 * (x.transpose() * h * x)[(0, 0)] + self.q.dot(x)
    }

    /// Lipschitz constant of the dual gradient: the largest eigenvalue of
    /// `A H^-1 A'`.
    fn dual_lipschitz(&self) -> f64 {
        let m = self.a.nrows();
        let mut gram = DMatrix::zeros(m, m);
        let hinv_at = self.h_chol.solve(&self.a.transpose());
        gram.copy_from(&(&self.a * hinv_at));
        let sym = 0.5 * (&gram + gram.transpose());
        sym.symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |a, &b| a.max(b))
    }

    /// FISTA on the dual with non-negativity projection.
    pub fn solve(&self, h: &DMatrix<f64>, max_iter: usize) -> OracleResult {
        let m = self.a.nrows();
        let lip = self.dual_lipschitz().max(1e-12);
        let step = 1.0 / (lip * 1.01);

        let mut lambda = DVector::zeros(m);
        let mut momentum = lambda.clone();
        let mut t = 1.0f64;
        let mut iterations = max_iter;

        for iter in 1..=max_iter {
            // grad h(momentum) = -A x(momentum) + b
            let x = self.primal_of(&momentum);
            let grad = &self.b - &self.a * &x;
            let mut next = &momentum - &grad * step;
            for i in 0..m {
                if next[i] < 0.0 {
                    next[i] = 0.0;
                }
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            momentum = &next + (&next - &lambda) * ((t - 1.0) / t_next);
            // Restart on non-monotone steps keeps FISTA stable.
            if (&next - &lambda).dot(&grad) > 0.0 {
                momentum = next.clone();
                t = 1.0;
            } else {
                t = t_next;
            }

            if iter % 500 == 0 || iter == max_iter {
                let xg = self.primal_of(&next);
                let g = &self.b - &self.a * &xg;
                let mut pg_norm: f64 = 0.0;
                for i in 0..m {
                    let stepped = (next[i] - step * g[i]).max(0.0);
                    pg_norm = pg_norm.max((next[i] - stepped).abs() / step);
                }
                if pg_norm < 1e-9 {
                    lambda = next;
                    iterations = iter;
                    break;
                }
            }
            lambda = next;
        }

        let x = self.primal_of(&lambda);
        let viol = (&self.a * &x - &self.b).amax().max(0.0);
        let objective = self.objective_of(&x, h);
        // Dual value: -1/2 (q + A'l)' H^-1 (q + A'l) - b'l.
        let qal = &self.q + self.a.transpose() * &lambda;
        let dual_value = -0.5 * qal.dot(&self.h_chol.solve(&qal)) - self.b.dot(&lambda);
        OracleResult {
            x,
            objective,
            dual_value,
            iterations,
            max_violation: viol,
        }
    }
}
