//! The data-misfit criterion `H(theta | rho) = |y - Phi c_hat(theta, rho)|^2`
//! and its minimization over `theta`.

use nalgebra::{DMatrix, DVector};

use crate::basis::{BSplineBasis, QuadratureRule};
use crate::error::{check_len, Error, Result};
use crate::inner::{dc_dtheta, Design, PenalizedFit};
use crate::model::{LinearOdeModel, PenaltyAssembler, PenaltyMatrices};
use crate::optim::{self, GaussNewtonControls};

/// Data, model, basis and quadrature bundled for repeated `(theta, rho)`
/// evaluations.
#[derive(Debug, Clone)]
pub struct FitProblem {
    model: LinearOdeModel,
    basis: BSplineBasis,
    times: Vec<f64>,
    design: Design,
    assembler: PenaltyAssembler,
}

/// Everything computed at one `(theta, rho)`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub theta: Vec<f64>,
    pub rho: f64,
    pub penalty: PenaltyMatrices,
    pub fit: PenalizedFit,
    /// `d c_hat / d theta`, `K x P`.
    pub dc: DMatrix<f64>,
}

impl Evaluation {
    pub fn h(&self) -> f64 {
        self.fit.rss()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterResult {
    pub theta_hat: Vec<f64>,
    pub h_value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub step_trace: Vec<(Vec<f64>, f64)>,
}

impl FitProblem {
    pub fn new(
        model: LinearOdeModel,
        basis: BSplineBasis,
        quad: &QuadratureRule,
        times: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        check_len("observations", times.len(), y.len())?;
        if times.is_empty() {
            return Err(Error::Data {
                line: 0,
                message: "no observations".into(),
            });
        }
        let assembler = PenaltyAssembler::new(&model, &basis, quad)?;
        let phi = basis.eval_matrix(&times, 0)?;
        let (a, b) = model.domain();
        let design = Design::new(DVector::from_vec(y), phi, b - a)?;
        Ok(Self {
            model,
            basis,
            times,
            design,
            assembler,
        })
    }

    /// Same model, basis and times with a different observation vector.
    pub fn with_data(&self, y: Vec<f64>) -> Result<Self> {
        check_len("observations", self.times.len(), y.len())?;
        let design = Design::new(DVector::from_vec(y), self.design.phi.clone(), self.design.domain_len)?;
        Ok(Self {
            design,
            ..self.clone()
        })
    }

    pub fn model(&self) -> &LinearOdeModel {
        &self.model
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn assembler(&self) -> &PenaltyAssembler {
        &self.assembler
    }

    pub fn theta_dim(&self) -> usize {
        self.model.theta_dim()
    }

    pub fn evaluate(&self, theta: &[f64], rho: f64) -> Result<Evaluation> {
        check_len("theta", self.theta_dim(), theta.len())?;
        let penalty = self.assembler.assemble(theta)?;
        let fit = self.design.solve(&penalty, rho, theta)?;
        let dc = dc_dtheta(&fit, &penalty, rho, self.design.domain_len);
        Ok(Evaluation {
            theta: theta.to_vec(),
            rho,
            penalty,
            fit,
            dc,
        })
    }

    pub fn h_value(&self, theta: &[f64], rho: f64) -> Result<f64> {
        check_len("theta", self.theta_dim(), theta.len())?;
        let penalty = self.assembler.assemble_value(theta)?;
        Ok(self.design.solve(&penalty, rho, theta)?.rss())
    }

    /// `-2 (y - Phi c)' Phi dc/dtheta`.
    pub fn h_gradient(&self, theta: &[f64], rho: f64) -> Result<DVector<f64>> {
        let ev = self.evaluate(theta, rho)?;
        Ok(gradient_of(&self.design, &ev))
    }

    /// Jacobian of the residual `y - Phi c_hat`: `-Phi dc/dtheta`.
    pub fn residual_jacobian(&self, ev: &Evaluation) -> DMatrix<f64> {
        -(&self.design.phi * &ev.dc)
    }

    /// Gauss–Newton approximation `2 J'J` of the Hessian of `H`.
    pub fn gauss_newton_hessian(&self, ev: &Evaluation) -> DMatrix<f64> {
        let j = self.residual_jacobian(ev);
        j.tr_mul(&j) * 2.0
    }

    pub fn minimize_h(&self, theta0: &[f64], rho: f64, controls: &GaussNewtonControls) -> Result<OuterResult> {
        check_len("theta", self.theta_dim(), theta0.len())?;
        if theta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite starting point {theta0:?}")));
        }
        let mut problem = |theta: &[f64], want_jacobian: bool| -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
            if want_jacobian {
                let ev = self.evaluate(theta, rho)?;
                let j = self.residual_jacobian(&ev);
                Ok((ev.fit.residuals, Some(j)))
            } else {
                let penalty = self.assembler.assemble_value(theta)?;
                Ok((self.design.solve(&penalty, rho, theta)?.residuals, None))
            }
        };
        let out = optim::minimize(&mut problem, theta0, controls)?;
        Ok(OuterResult {
            theta_hat: out.x,
            h_value: out.value,
            gradient_norm: out.gradient_norm,
            iterations: out.iterations,
            converged: out.converged,
            step_trace: out.trace,
        })
    }

    /// `H` over a 2-D grid of two parameters with the others held at `base`.
    pub fn h_surface(
        &self,
        base: &[f64],
        axes: (usize, usize),
        first: &[f64],
        second: &[f64],
        rho: f64,
    ) -> Result<DMatrix<f64>> {
        check_len("theta", self.theta_dim(), base.len())?;
        let mut out = DMatrix::zeros(first.len(), second.len());
        let mut theta = base.to_vec();
        for (i, &a) in first.iter().enumerate() {
            for (j, &b) in second.iter().enumerate() {
                theta[axes.0] = a;
                theta[axes.1] = b;
                out[(i, j)] = match self.h_value(&theta, rho) {
                    Ok(h) => h,
                    Err(Error::SingularSystem { .. }) => f64::NAN,
                    Err(e) => return Err(e),
                };
            }
        }
        Ok(out)
    }
}

pub(crate) fn gradient_of(design: &Design, ev: &Evaluation) -> DVector<f64> {
    let phi_dc = &design.phi * &ev.dc;
    phi_dc.tr_mul(&ev.fit.residuals) * -2.0
}
