//! The rho-ladder: minimize `H(theta | rho)` along an increasing sequence of
//! `rho = logistic(gamma)` values, warm-starting each rung at the previous
//! estimate.
//!
//! A rung is accepted when the relative change in the minimized `H` is below
//! `eps0`; otherwise the pending `gamma` increment is halved and the rung is
//! retried from the last accepted `gamma`. The ladder stops when consecutive
//! accepted estimates differ by less than `eps1` in the max norm, or once
//! `rho` reaches `rho_max`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::GaussNewtonControls;
use crate::outer::FitProblem;

/// `exp(g) / (1 + exp(g))` without overflow.
pub fn logistic_rho(gamma: f64) -> f64 {
    if gamma >= 0.0 {
        1.0 / (1.0 + (-gamma).exp())
    } else {
        let e = gamma.exp();
        e / (1.0 + e)
    }
}

pub fn logit(rho: f64) -> f64 {
    (rho / (1.0 - rho)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderControls {
    pub gamma0: f64,
    /// Starting estimate; `None` means `0.01` for every parameter.
    pub theta0: Option<Vec<f64>>,
    pub eps0: f64,
    pub eps1: f64,
    pub rho_max: f64,
    pub gamma_increment: f64,
    pub min_gamma_increment: f64,
    pub max_rungs: usize,
    pub outer: GaussNewtonControls,
}

impl Default for LadderControls {
    fn default() -> Self {
        Self {
            gamma0: -4.0,
            theta0: None,
            eps0: 0.2,
            eps1: 1e-4,
            rho_max: 1.0 - 1e-8,
            gamma_increment: 1.0,
            min_gamma_increment: 1.0 / 64.0,
            max_rungs: 2000,
            outer: GaussNewtonControls::default(),
        }
    }
}

impl LadderControls {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.rho_max > 0.0 && self.rho_max < 1.0) {
            return bad("rho_max must lie in (0, 1)");
        }
        if logistic_rho(self.gamma0) >= self.rho_max {
            return bad("gamma0 must give rho below rho_max");
        }
        if !(self.gamma_increment > 0.0 && self.min_gamma_increment > 0.0) {
            return bad("gamma increments must be positive");
        }
        if self.min_gamma_increment > self.gamma_increment {
            return bad("min_gamma_increment exceeds gamma_increment");
        }
        if !(self.eps0 > 0.0 && self.eps1 >= 0.0) {
            return bad("eps0 must be positive and eps1 non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderState {
    pub step_index: usize,
    pub gamma: f64,
    pub rho: f64,
    pub theta: Vec<f64>,
    pub h: f64,
    /// Increment that led to this rung (zero for the first).
    pub gamma_increment: f64,
    pub outer_iterations: usize,
    pub outer_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    /// Consecutive estimates within `eps1`.
    Converged,
    /// `rho` reached `rho_max`.
    RhoCap,
    MaxRungs,
    /// A rung failed; the trace holds every rung before it.
    OuterFailure(String),
}

#[derive(Debug, Clone)]
pub struct LadderTrace {
    pub states: Vec<LadderState>,
    pub stop: StopReason,
    /// Rejected rung attempts (relative `H` change too large).
    pub rejected: usize,
}

impl LadderTrace {
    pub fn last(&self) -> &LadderState {
        self.states.last().expect("ladder trace is never empty")
    }

    pub fn theta_hat(&self) -> &[f64] {
        &self.last().theta
    }

    pub fn rho_hat(&self) -> f64 {
        self.last().rho
    }

    pub fn failed(&self) -> bool {
        matches!(self.stop, StopReason::OuterFailure(_))
    }
}

pub fn run_ladder(problem: &FitProblem, controls: &LadderControls) -> Result<LadderTrace> {
    controls.validate()?;
    let p = problem.theta_dim();
    let theta0 = match &controls.theta0 {
        Some(t) => {
            crate::error::check_len("theta0", p, t.len())?;
            t.clone()
        }
        None => vec![0.01; p],
    };
    let gamma_cap = logit(controls.rho_max);

    let rho0 = logistic_rho(controls.gamma0);
    let first = problem.minimize_h(&theta0, rho0, &controls.outer)?;
    let mut states = vec![LadderState {
        step_index: 0,
        gamma: controls.gamma0,
        rho: rho0,
        theta: first.theta_hat,
        h: first.h_value,
        gamma_increment: 0.0,
        outer_iterations: first.iterations,
        outer_converged: first.converged,
    }];
    let mut increment = controls.gamma_increment;
    let mut rejected = 0;

    let stop = loop {
        if states.len() >= controls.max_rungs {
            break StopReason::MaxRungs;
        }
        let prev = states.last().expect("non-empty");
        if prev.gamma >= gamma_cap {
            break StopReason::RhoCap;
        }
        let gamma = (prev.gamma + increment).min(gamma_cap);
        let rho = if gamma >= gamma_cap {
            controls.rho_max
        } else {
            logistic_rho(gamma)
        };
        let out = match problem.minimize_h(&prev.theta, rho, &controls.outer) {
            Ok(o) => o,
            Err(e) => break StopReason::OuterFailure(e.to_string()),
        };
        let rel = (out.h_value - prev.h) / prev.h.abs().max(f64::MIN_POSITIVE);
        if rel >= controls.eps0 && increment > controls.min_gamma_increment {
            increment = (increment * 0.5).max(controls.min_gamma_increment);
            rejected += 1;
            continue;
        }
        let change = out
            .theta_hat
            .iter()
            .zip(&prev.theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let used = gamma - prev.gamma;
        states.push(LadderState {
            step_index: states.len(),
            gamma,
            rho,
            theta: out.theta_hat,
            h: out.h_value,
            gamma_increment: used,
            outer_iterations: out.iterations,
            outer_converged: out.converged,
        });
        increment = controls.gamma_increment;
        if change < controls.eps1 {
            break StopReason::Converged;
        }
    };
    Ok(LadderTrace { states, stop, rejected })
}
