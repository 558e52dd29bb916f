//! Penalized least-squares coefficients for fixed `(theta, rho)`.
//!
//! Minimizes
//! `J(c) = (1 - rho)/N |y - Phi c|^2 + rho/T (c'Rc + 2c'S + f_norm)`
//! with `T` the domain length, whose minimizer solves `M c = rhs` for
//! `M = (1 - rho)/N Phi'Phi + rho/T R` and `rhs = (1 - rho)/N Phi'y - rho/T S`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_len, Error, Result};
use crate::model::PenaltyMatrices;

/// Condition estimate above which `M` is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Observations and their basis evaluation matrix, with the cross products
/// that every solve reuses.
#[derive(Debug, Clone)]
pub struct Design {
    pub y: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub domain_len: f64,
    phi_t_phi: DMatrix<f64>,
    phi_t_y: DVector<f64>,
}

impl Design {
    pub fn new(y: DVector<f64>, phi: DMatrix<f64>, domain_len: f64) -> Result<Self> {
        check_len("observations", phi.nrows(), y.len())?;
        if !(domain_len > 0.0) {
            return Err(Error::InvalidModel(format!("domain length {domain_len} must be positive")));
        }
        let phi_t_phi = phi.tr_mul(&phi);
        let phi_t_y = phi.tr_mul(&y);
        Ok(Self {
            y,
            phi,
            domain_len,
            phi_t_phi,
            phi_t_y,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn num_basis(&self) -> usize {
        self.phi.ncols()
    }

    pub fn phi_t_phi(&self) -> &DMatrix<f64> {
        &self.phi_t_phi
    }

    /// `((1 - rho)/N, rho/T)`.
    pub fn weights(&self, rho: f64) -> (f64, f64) {
        ((1.0 - rho) / self.n_obs() as f64, rho / self.domain_len)
    }

    pub fn solve(&self, pm: &PenaltyMatrices, rho: f64, theta: &[f64]) -> Result<PenalizedFit> {
        check_len("penalty matrix", self.num_basis(), pm.r.nrows())?;
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Numerical(format!("rho = {rho} must lie in [0, 1)")));
        }
        let (a, s) = self.weights(rho);
        let m = &self.phi_t_phi * a + &pm.r * s;
        let rhs = &self.phi_t_y * a - &pm.s * s;
        let singular = |condition: f64| Error::SingularSystem {
            rho,
            theta: theta.to_vec(),
            condition,
        };
        let chol = Cholesky::new(m.clone()).ok_or_else(|| singular(f64::INFINITY))?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        let condition = (hi / lo).powi(2);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(singular(condition));
        }
        let c_hat = chol.solve(&rhs);
        let residuals = &self.y - &self.phi * &c_hat;
        let penalty = (c_hat.transpose() * &pm.r * &c_hat)[(0, 0)] + 2.0 * c_hat.dot(&pm.s) + pm.f_norm;
        let j_value = a * residuals.norm_squared() + s * penalty;
        Ok(PenalizedFit {
            c_hat,
            m,
            rhs,
            chol,
            residuals,
            j_value,
            rho,
            condition,
        })
    }
}

/// Solution of the inner problem at one `(theta, rho)`.
#[derive(Debug, Clone)]
pub struct PenalizedFit {
    pub c_hat: DVector<f64>,
    pub m: DMatrix<f64>,
    pub rhs: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    pub residuals: DVector<f64>,
    pub j_value: f64,
    pub rho: f64,
    pub condition: f64,
}

impl PenalizedFit {
    pub fn solve_with(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }

    /// `J(c)` for an arbitrary coefficient vector.
    pub fn criterion_at(&self, design: &Design, pm: &PenaltyMatrices, c: &DVector<f64>) -> f64 {
        let (a, s) = design.weights(self.rho);
        let r = &design.y - &design.phi * c;
        let penalty = (c.transpose() * &pm.r * c)[(0, 0)] + 2.0 * c.dot(&pm.s) + pm.f_norm;
        a * r.norm_squared() + s * penalty
    }
}

/// `c_hat(theta, rho)` for data `y` with basis matrix `phi`.
pub fn solve_coefficients(
    y: &DVector<f64>,
    phi: &DMatrix<f64>,
    pm: &PenaltyMatrices,
    rho: f64,
    domain_len: f64,
) -> Result<PenalizedFit> {
    Design::new(y.clone(), phi.clone(), domain_len)?.solve(pm, rho, &[])
}

/// `d c_hat / d theta` (`K x P`), from differentiating `M c = rhs`:
/// column `j` is `M^-1 (-rho/T (dR_j c + dS_j))`.
pub fn dc_dtheta(fit: &PenalizedFit, pm: &PenaltyMatrices, rho: f64, domain_len: f64) -> DMatrix<f64> {
    let k = fit.c_hat.len();
    let p = pm.dr.len();
    let s = rho / domain_len;
    let mut rhs = DMatrix::zeros(k, p);
    for j in 0..p {
        let col = (&pm.dr[j] * &fit.c_hat + &pm.ds[j]) * (-s);
        rhs.set_column(j, &col);
    }
    if p == 0 || s == 0.0 {
        return rhs;
    }
    fit.solve_with(&rhs)
}

/// Trace of the smoother `(1 - rho)/N Phi M^-1 Phi'`, computed as
/// `trace(M^-1 (1 - rho)/N Phi'Phi)`.
pub fn degrees_of_freedom(fit: &PenalizedFit, phi: &DMatrix<f64>, rho: f64) -> f64 {
    let a = (1.0 - rho) / phi.nrows() as f64;
    let ptp = phi.tr_mul(phi) * a;
    fit.solve_with(&ptp).trace()
}
