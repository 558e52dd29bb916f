//! Delta-method uncertainty for `theta_hat` and the fitted curve.
//!
//! `d theta / d y` comes from implicitly differentiating the stationarity
//! condition `grad_theta H(theta | rho) = 0`:
//! `d theta / d y = -(d2H/dtheta2)^-1 d2H/(dtheta dy)`.
//! With `r = y - Phi c`, `c_j = dc/dtheta_j`, `c_y = dc/dy` and
//! `c_jy = d2c/(dtheta_j dy)`:
//!
//! - `d2H/(dtheta_j dtheta_k) = 2 (Phi c_k)'(Phi c_j) - 2 r' Phi c_jk`
//! - `d2H/(dtheta_j dy) = -2 [(I - Phi c_y)' Phi c_j + c_jy' Phi' r]`
//!
//! The Gauss–Newton variant drops the terms carrying `r`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner::degrees_of_freedom;
use crate::outer::{Evaluation, FitProblem};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Largest accepted ratio of extreme Hessian eigenvalues.
const MAX_HESSIAN_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianKind {
    #[default]
    Exact,
    GaussNewton,
}

/// Derivatives of the estimates with respect to the data at one `(theta, rho)`.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    /// `P x N`.
    pub dtheta_dy: DMatrix<f64>,
    /// `dc/dy` with `theta` held fixed, `K x N`.
    pub dc_dy_partial: DMatrix<f64>,
    /// Total derivative `dc/dy + dc/dtheta dtheta/dy`, `K x N`.
    pub dc_dy_total: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct InferenceReport {
    pub theta: Vec<f64>,
    pub rho: f64,
    pub df: f64,
    pub sigma2_y: f64,
    pub var_theta: DMatrix<f64>,
    pub theta_ci: Vec<(f64, f64)>,
    pub times: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub var_x: Vec<f64>,
    pub x_ci: Vec<(f64, f64)>,
    pub x_pi: Vec<(f64, f64)>,
}

impl InferenceReport {
    pub fn theta_se(&self) -> Vec<f64> {
        (0..self.theta.len()).map(|j| self.var_theta[(j, j)].max(0.0).sqrt()).collect()
    }

    pub fn covers(&self, j: usize, value: f64) -> bool {
        let (lo, hi) = self.theta_ci[j];
        lo <= value && value <= hi
    }
}

/// `RSS / (N - df)`.
pub fn sigma2_estimate(residuals: &DVector<f64>, df: f64) -> Result<f64> {
    let n = residuals.len() as f64;
    if !(df < n) {
        return Err(Error::Numerical(format!(
            "degrees of freedom {df} leave no residual degrees of freedom out of {n}"
        )));
    }
    Ok(residuals.norm_squared() / (n - df))
}

pub fn dtheta_dy(problem: &FitProblem, ev: &Evaluation, kind: HessianKind) -> Result<Sensitivity> {
    let design = problem.design();
    let phi = &design.phi;
    let n = design.n_obs();
    let p = problem.theta_dim();
    let (a, s) = design.weights(ev.rho);
    let fit = &ev.fit;
    let r = &fit.residuals;

    let c_y = fit.solve_with(&(phi.transpose() * a));
    let phi_c = phi * &ev.dc;
    let resid_map = DMatrix::<f64>::identity(n, n) - phi * &c_y;

    let mut hessian = phi_c.tr_mul(&phi_c) * 2.0;
    let mut cross = resid_map.tr_mul(&phi_c).transpose() * -2.0;

    if kind == HessianKind::Exact && s > 0.0 {
        let assembler = problem.assembler();
        let phi_t_r = phi.tr_mul(r);
        let c = &fit.c_hat;
        for j in 0..p {
            for k in j..p {
                let rhs = (assembler.d2r(j, k) * c
                    + &ev.penalty.dr[j] * ev.dc.column(k)
                    + &ev.penalty.dr[k] * ev.dc.column(j)
                    + assembler.d2s(j, k))
                    * (-s);
                let c_jk = fit.solve_vec(&rhs);
                let v = -2.0 * phi_t_r.dot(&c_jk);
                hessian[(j, k)] += v;
                if j != k {
                    hessian[(k, j)] += v;
                }
            }
            let c_jy = fit.solve_with(&(&ev.penalty.dr[j] * &c_y * (-s)));
            let extra = c_jy.tr_mul(&phi_t_r) * -2.0;
            for i in 0..n {
                cross[(j, i)] += extra[i];
            }
        }
    }

    if p == 0 {
        return Ok(Sensitivity {
            dtheta_dy: DMatrix::zeros(0, n),
            dc_dy_total: c_y.clone(),
            dc_dy_partial: c_y,
            hessian,
        });
    }
    let eig = SymmetricEigen::new(hessian.clone());
    let hi = eig.eigenvalues.amax();
    let lo = eig.eigenvalues.min();
    if !(hi > 0.0) || !(lo > hi / MAX_HESSIAN_CONDITION) {
        return Err(Error::SingularSystem {
            rho: ev.rho,
            theta: ev.theta.clone(),
            condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        });
    }
    let chol = Cholesky::new(hessian.clone()).ok_or_else(|| Error::SingularSystem {
        rho: ev.rho,
        theta: ev.theta.clone(),
        condition: f64::INFINITY,
    })?;
    let dtdy = -chol.solve(&cross);
    let total = &c_y + &ev.dc * &dtdy;
    Ok(Sensitivity {
        dtheta_dy: dtdy,
        dc_dy_partial: c_y,
        dc_dy_total: total,
        hessian,
    })
}

/// `sigma2 (dtheta/dy)(dtheta/dy)'`.
pub fn var_theta(dtdy: &DMatrix<f64>, sigma2: f64) -> DMatrix<f64> {
    let v = dtdy * dtdy.transpose() * sigma2;
    (&v + v.transpose()) * 0.5
}

/// Pointwise variances `sigma2 diag(Phi dc/dy (dc/dy)' Phi')` at the rows of
/// `phi`.
pub fn var_x(phi: &DMatrix<f64>, dc_dy: &DMatrix<f64>, sigma2: f64) -> DVector<f64> {
    let g = phi * dc_dy;
    DVector::from_fn(g.nrows(), |i, _| sigma2 * g.row(i).norm_squared())
}

/// Full delta-method report at `(theta, rho)`, with bands at the observation
/// times.
pub fn infer(problem: &FitProblem, theta: &[f64], rho: f64, kind: HessianKind) -> Result<InferenceReport> {
    let ev = problem.evaluate(theta, rho)?;
    let design = problem.design();
    let df = degrees_of_freedom(&ev.fit, &design.phi, rho);
    let sigma2 = sigma2_estimate(&ev.fit.residuals, df)?;
    let sens = dtheta_dy(problem, &ev, kind)?;
    let vt = var_theta(&sens.dtheta_dy, sigma2);
    let theta_ci = theta
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let hw = Z95 * vt[(j, j)].max(0.0).sqrt();
            (t - hw, t + hw)
        })
        .collect();
    let x_hat = &design.phi * &ev.fit.c_hat;
    let vx = var_x(&design.phi, &sens.dc_dy_total, sigma2);
    let mut x_ci = Vec::with_capacity(vx.len());
    let mut x_pi = Vec::with_capacity(vx.len());
    for (x, v) in x_hat.iter().zip(vx.iter()) {
        let ci = Z95 * v.sqrt();
        let pi = (ci * ci + sigma2 * Z95 * Z95).sqrt();
        x_ci.push((x - ci, x + ci));
        x_pi.push((x - pi, x + pi));
    }
    Ok(InferenceReport {
        theta: theta.to_vec(),
        rho,
        df,
        sigma2_y: sigma2,
        var_theta: vt,
        theta_ci,
        times: problem.times().to_vec(),
        x_hat: x_hat.as_slice().to_vec(),
        var_x: vx.as_slice().to_vec(),
        x_ci,
        x_pi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BSplineBasis, QuadratureRule};
    use crate::model::{CoefficientTerm, ForcingTerm, InputFunction, LinearOdeModel};
    use crate::optim::GaussNewtonControls;
    use crate::simulation::SimulationScenario;

    fn noisy_problem(seed: usize) -> FitProblem {
        let s = SimulationScenario::new(101, 0.05, 1);
        let (_, y) = s.generate_data(seed).unwrap();
        s.fit_problem(y).unwrap()
    }

    fn one_parameter_problem() -> FitProblem {
        // D2 x = beta0 x + 0.39 u, damping fixed
        let domain = (0.0, 60.0);
        let pulse = InputFunction::unit_pulse(domain, 14.0, 1.0).unwrap();
        let mut forcing = ForcingTerm::constant_gain(pulse);
        forcing.fixed = Some(vec![0.39]);
        let model = LinearOdeModel::new(
            2,
            vec![CoefficientTerm::constant(0), CoefficientTerm::fixed_constant(1, -0.15)],
            vec![forcing],
            domain,
        )
        .unwrap();
        let base = noisy_problem(3);
        let basis = BSplineBasis::impulse_response(domain, 14.0, 1.0, 11, 5).unwrap();
        let quad = QuadratureRule::for_basis(&basis, &model.breakpoints(), 5).unwrap();
        FitProblem::new(model, basis, &quad, base.times().to_vec(), base.design().y.as_slice().to_vec()).unwrap()
    }

    fn tight() -> GaussNewtonControls {
        GaussNewtonControls {
            gradient_tol: 1e-14,
            step_tol: 1e-15,
            max_iterations: 200,
            ..Default::default()
        }
    }

    #[test]
    fn sigma2_basics() {
        assert_eq!(sigma2_estimate(&DVector::zeros(5), 1.0).unwrap(), 0.0);
        let r = DVector::from_element(4, 0.3);
        assert!((sigma2_estimate(&r, 0.0).unwrap() - 0.09).abs() < 1e-15);
        assert!(sigma2_estimate(&r, 4.0).is_err());
    }

    #[test]
    fn one_parameter_matches_refit() {
        let p = one_parameter_problem();
        let rho = 0.9;
        let fit = p.minimize_h(&[-0.05], rho, &tight()).unwrap();
        let ev = p.evaluate(&fit.theta_hat, rho).unwrap();
        let sens = dtheta_dy(&p, &ev, HessianKind::Exact).unwrap();
        let h = 1e-5;
        let y0 = p.design().y.clone();
        for i in (20..101).step_by(7) {
            let refit = |d: f64| {
                let mut y = y0.clone();
                y[i] += d;
                let q = p.with_data(y.as_slice().to_vec()).unwrap();
                let mut t = q.minimize_h(&fit.theta_hat, rho, &tight()).unwrap().theta_hat[0];
                // polish with Newton on the gradient; H itself is too flat to
                // resolve the minimizer beyond ~1e-8
                for _ in 0..3 {
                    let g = |t: f64| q.h_gradient(&[t], rho).unwrap()[0];
                    let e = 1e-6;
                    t -= g(t) * 2.0 * e / (g(t + e) - g(t - e));
                }
                t
            };
            let fd = (refit(h) - refit(-h)) / (2.0 * h);
            let an = sens.dtheta_dy[(0, i)];
            assert!((fd - an).abs() < 1e-3 * an.abs().max(1e-6), "{i}: {fd} vs {an}");
        }
    }

    #[test]
    fn orthogonal_perturbation_is_ignored() {
        let p = noisy_problem(0);
        let ev = p.evaluate(&[-0.05, -0.15, 0.39], 0.9).unwrap();
        let sens = dtheta_dy(&p, &ev, HessianKind::Exact).unwrap();
        // a direction orthogonal to the column space of Phi
        let phi = &p.design().phi;
        let z = DVector::from_fn(phi.nrows(), |i, _| ((i * 37 % 11) as f64 - 5.0) * (1.0 + i as f64).sqrt());
        let qr = phi.clone().qr();
        let q = qr.q();
        let proj = &q * (q.tr_mul(&z));
        let d = &z - proj;
        assert!(d.norm() > 1.0);
        let effect = &sens.dtheta_dy * &d;
        assert!(effect.amax() < 1e-10 * sens.dtheta_dy.norm() * d.norm(), "{effect}");
    }

    #[test]
    fn rho_zero_is_singular() {
        let p = noisy_problem(0);
        let ev = p.evaluate(&[-0.05, -0.15, 0.39], 0.0).unwrap();
        assert!(matches!(
            dtheta_dy(&p, &ev, HessianKind::GaussNewton),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn rho_zero_curve_variance_is_least_squares() {
        let p = noisy_problem(1);
        let ev = p.evaluate(&[-0.05, -0.15, 0.39], 0.0).unwrap();
        let phi = &p.design().phi;
        let c_y = ev.fit.solve_with(&(phi.transpose() * (1.0 / 101.0)));
        let v = var_x(phi, &c_y, 2.0);
        let hat = phi * (phi.tr_mul(phi)).try_inverse().unwrap() * phi.transpose();
        for i in 0..phi.nrows() {
            assert!((v[i] - 2.0 * hat[(i, i)]).abs() < 1e-8, "{i}");
        }
    }

    #[test]
    fn variance_scaling_and_symmetry() {
        let d = DMatrix::from_fn(3, 7, |i, j| ((i + 2 * j) as f64).sin());
        let v1 = var_theta(&d, 1.5);
        let v2 = var_theta(&d, 3.0);
        assert_eq!(v2, &v1 * 2.0);
        assert_eq!(v1, v1.transpose());
        assert_eq!(var_theta(&DMatrix::zeros(3, 7), 1.0).amax(), 0.0);
    }

    #[test]
    fn report_bands_nest() {
        let p = noisy_problem(2);
        let fit = p.minimize_h(&[-0.05, -0.15, 0.39], 0.99, &tight()).unwrap();
        let rep = infer(&p, &fit.theta_hat, 0.99, HessianKind::Exact).unwrap();
        let eig = SymmetricEigen::new(rep.var_theta.clone()).eigenvalues;
        assert!(eig.min() >= -1e-12 * rep.var_theta.trace());
        for i in 0..rep.x_hat.len() {
            assert!(rep.var_x[i] >= 0.0);
            assert!(rep.x_pi[i].0 <= rep.x_ci[i].0 && rep.x_ci[i].1 <= rep.x_pi[i].1);
            let ci = rep.x_ci[i].1 - rep.x_hat[i];
            let pi = rep.x_pi[i].1 - rep.x_hat[i];
            assert!((pi * pi - ci * ci - rep.sigma2_y * Z95 * Z95).abs() < 1e-12 * pi * pi);
        }
    }
}
