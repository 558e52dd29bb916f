//! Damped Gauss–Newton for sums of squares `f(x) = |r(x)|^2`.
//!
//! Levenberg-style additive damping `J'J + lambda I`, shrunk by
//! `damping_down` when the full step is accepted and grown by `damping_up`
//! otherwise, with step halving as a fallback before a step is rejected.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussNewtonControls {
    /// Stop when `|grad|_inf < gradient_tol * (1 + f)`.
    pub gradient_tol: f64,
    /// Stop when the accepted step has `|dx|_inf < step_tol`.
    pub step_tol: f64,
    pub max_iterations: usize,
    /// Initial damping relative to the largest diagonal entry of `J'J`.
    pub damping_init: f64,
    pub damping_down: f64,
    pub damping_up: f64,
    pub max_halvings: usize,
}

impl Default for GaussNewtonControls {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-8,
            step_tol: 1e-10,
            max_iterations: 100,
            damping_init: 1e-3,
            damping_down: 0.3,
            damping_up: 3.0,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussNewtonOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(x, f)` at the start and after every accepted step.
    pub trace: Vec<(Vec<f64>, f64)>,
}

/// Residuals at `x`, plus the Jacobian `dr/dx` when `want_jacobian` is set.
pub trait LeastSquaresProblem {
    fn evaluate(&mut self, x: &[f64], want_jacobian: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)>;
}

impl<F> LeastSquaresProblem for F
where
    F: FnMut(&[f64], bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)>,
{
    fn evaluate(&mut self, x: &[f64], want_jacobian: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        self(x, want_jacobian)
    }
}

pub fn minimize<P: LeastSquaresProblem>(
    problem: &mut P,
    x0: &[f64],
    controls: &GaussNewtonControls,
) -> Result<GaussNewtonOutcome> {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut r, jac) = problem.evaluate(x.as_slice(), true)?;
    let mut jac = jac.expect("jacobian requested");
    let mut f = r.norm_squared();
    let mut trace = vec![(x.as_slice().to_vec(), f)];

    let jtj0 = jac.tr_mul(&jac);
    let max_diag = jtj0.diagonal().amax();
    let mut lambda = controls.damping_init * if max_diag > 0.0 { max_diag } else { 1.0 };

    let mut converged = false;
    let mut iterations = 0;
    let mut grad = jac.tr_mul(&r) * 2.0;

    while iterations < controls.max_iterations {
        if n == 0 || grad.amax() < controls.gradient_tol * (1.0 + f) {
            converged = true;
            break;
        }
        iterations += 1;

        let jtj = jac.tr_mul(&jac);
        let mut a = jtj.clone();
        for i in 0..n {
            a[(i, i)] += lambda;
        }
        let Some(chol) = Cholesky::new(a) else {
            lambda *= controls.damping_up;
            continue;
        };
        let delta = chol.solve(&(-jac.tr_mul(&r)));

        let mut accepted = None;
        let mut scale = 1.0;
        for halving in 0..=controls.max_halvings {
            let candidate = &x + &delta * scale;
            if let Ok((rc, _)) = problem.evaluate(candidate.as_slice(), false) {
                let fc = rc.norm_squared();
                if fc.is_finite() && fc < f {
                    accepted = Some((candidate, halving == 0));
                    break;
                }
            }
            scale *= 0.5;
        }

        match accepted {
            Some((candidate, full_step)) => {
                lambda *= if full_step {
                    controls.damping_down
                } else {
                    controls.damping_up
                };
                let step = (&candidate - &x).amax();
                x = candidate;
                let (rn, jn) = problem.evaluate(x.as_slice(), true)?;
                r = rn;
                jac = jn.expect("jacobian requested");
                f = r.norm_squared();
                grad = jac.tr_mul(&r) * 2.0;
                trace.push((x.as_slice().to_vec(), f));
                if step < controls.step_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                lambda *= controls.damping_up;
                if delta.amax() < controls.step_tol {
                    // no descent direction left at working precision
                    converged = true;
                    break;
                }
            }
        }
    }

    Ok(GaussNewtonOutcome {
        x: x.as_slice().to_vec(),
        value: f,
        gradient_norm: grad.amax(),
        iterations,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_decay() {
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.5 * (-0.7 * t).exp()).collect();
        let mut problem = |x: &[f64], want: bool| {
            let r = DVector::from_fn(t.len(), |i, _| y[i] - x[0] * (-x[1] * t[i]).exp());
            let j = want.then(|| {
                DMatrix::from_fn(t.len(), 2, |i, c| {
                    let e = (-x[1] * t[i]).exp();
                    if c == 0 {
                        -e
                    } else {
                        x[0] * t[i] * e
                    }
                })
            });
            Ok((r, j))
        };
        let out = minimize(&mut problem, &[1.0, 0.1], &GaussNewtonControls::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 2.5).abs() < 1e-8 && (out.x[1] - 0.7).abs() < 1e-8);
        for w in out.trace.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn max_iterations_is_not_an_error() {
        let mut problem = |x: &[f64], want: bool| {
            // Rosenbrock as residuals
            let r = DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
            let j = want.then(|| DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]));
            Ok((r, j))
        };
        let controls = GaussNewtonControls {
            max_iterations: 1,
            ..Default::default()
        };
        let out = minimize(&mut problem, &[-1.2, 1.0], &controls).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(!out.converged);
        assert!(out.value <= out.trace[0].1);
    }
}
