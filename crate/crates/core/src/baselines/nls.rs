//! Nonlinear least squares on the RK4 solution, jointly over the parameters
//! and the initial conditions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ivp::Trajectory;
use crate::error::{check_len, Error, Result};
use crate::optim::{self, GaussNewtonControls};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NlsControls {
    /// Largest RK4 step.
    pub max_step: f64,
    /// Relative forward-difference step: `h = fd_step * (1 + |x|)`.
    pub fd_step: f64,
    pub optimizer: GaussNewtonControls,
}

impl Default for NlsControls {
    fn default() -> Self {
        Self {
            max_step: 0.05,
            fd_step: 1e-6,
            optimizer: GaussNewtonControls::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NlsResult {
    pub theta_hat: Vec<f64>,
    pub init_hat: Vec<f64>,
    /// `sigma2 (J'J)^-1` over `(theta, init)`; `None` when `J'J` is singular.
    pub covariance: Option<DMatrix<f64>>,
    pub sigma2: f64,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step.
    pub trace: Vec<f64>,
}

impl NlsResult {
    /// Normal-theory interval for parameter `j` of `theta`.
    pub fn theta_ci(&self, j: usize, z: f64) -> Option<(f64, f64)> {
        let cov = self.covariance.as_ref()?;
        let hw = z * cov[(j, j)].max(0.0).sqrt();
        Some((self.theta_hat[j] - hw, self.theta_hat[j] + hw))
    }
}

fn residuals(traj: &Trajectory, y: &[f64], x: &[f64], p: usize) -> Result<DVector<f64>> {
    let pred = traj.predict(&x[..p], &x[p..])?;
    Ok(DVector::from_iterator(y.len(), y.iter().zip(&pred).map(|(a, b)| a - b)))
}

fn fd_jacobian(traj: &Trajectory, y: &[f64], x: &[f64], p: usize, r0: &DVector<f64>, rel: f64) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(y.len(), x.len());
    let mut xs = x.to_vec();
    for j in 0..x.len() {
        let h = rel * (1.0 + x[j].abs());
        xs[j] = x[j] + h;
        let rj = residuals(traj, y, &xs, p)?;
        jac.set_column(j, &((rj - r0) / h));
        xs[j] = x[j];
    }
    Ok(jac)
}

pub fn nls_fit(
    traj: &Trajectory,
    y: &[f64],
    theta0: &[f64],
    init0: &[f64],
    controls: &NlsControls,
) -> Result<NlsResult> {
    let model = traj.model();
    let p = model.theta_dim();
    check_len("theta0", p, theta0.len())?;
    check_len("initial conditions", model.order(), init0.len())?;
    check_len("observations", traj.n_times(), y.len())?;
    if theta0.iter().chain(init0).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite starting values".into()));
    }
    let x0: Vec<f64> = theta0.iter().chain(init0).copied().collect();
    let mut problem = |x: &[f64], want: bool| -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let r = residuals(traj, y, x, p)?;
        let j = if want {
            Some(fd_jacobian(traj, y, x, p, &r, controls.fd_step)?)
        } else {
            None
        };
        Ok((r, j))
    };
    let out = optim::minimize(&mut problem, &x0, &controls.optimizer)?;

    let n = y.len();
    let dim = x0.len();
    let r = residuals(traj, y, &out.x, p)?;
    let sse = r.norm_squared();
    let sigma2 = if n > dim { sse / (n - dim) as f64 } else { f64::NAN };
    let jac = fd_jacobian(traj, y, &out.x, p, &r, controls.fd_step)?;
    let covariance = jac.tr_mul(&jac).try_inverse().map(|inv| inv * sigma2);
    Ok(NlsResult {
        theta_hat: out.x[..p].to_vec(),
        init_hat: out.x[p..].to_vec(),
        covariance,
        sigma2,
        sse,
        iterations: out.iterations,
        converged: out.converged,
        trace: out.trace.into_iter().map(|(_, f)| f).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::head_impact_model;

    const TRUTH: [f64; 3] = [-0.05, -0.15, 0.39];

    fn setup() -> (Trajectory, Vec<f64>) {
        let model = head_impact_model((0.0, 60.0), 14.0, 1.0).unwrap();
        let times: Vec<f64> = (0..101).map(|i| 0.6 * i as f64).collect();
        let traj = Trajectory::new(model, &times, 0.05).unwrap();
        let y = traj.predict(&TRUTH, &[0.0, 0.0]).unwrap();
        (traj, y)
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let (traj, y) = setup();
        let out = nls_fit(&traj, &y, &TRUTH, &[0.0, 0.0], &NlsControls::default()).unwrap();
        assert!(out.sse < 1e-8);
        for (a, b) in out.theta_hat.iter().zip(TRUTH) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn recovers_from_stable_start() {
        let (traj, y) = setup();
        let out = nls_fit(&traj, &y, &[-0.01, -0.01, 0.01], &[0.0, 0.0], &NlsControls::default()).unwrap();
        for (a, b) in out.theta_hat.iter().zip(TRUTH) {
            assert!((a - b).abs() < 1e-3, "{:?}", out.theta_hat);
        }
        for w in out.trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn rejects_bad_lengths() {
        let (traj, y) = setup();
        assert!(nls_fit(&traj, &y, &[0.0; 2], &[0.0, 0.0], &NlsControls::default()).is_err());
        assert!(nls_fit(&traj, &y, &[0.0; 3], &[0.0], &NlsControls::default()).is_err());
    }
}
