//! Simulated annealing over the parameters with the initial conditions held
//! fixed, cooled on the Boltzmann schedule `T_k = T0 / ln(k + e)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ivp::Trajectory;
use crate::error::{check_len, Error, Result};

/// Probability of accepting a move that raises the energy by `delta > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceRule {
    /// `1 / (1 + exp(delta / T))`
    #[default]
    Logistic,
    /// `exp(-delta / T)`
    Metropolis,
}

impl AcceptanceRule {
    pub fn probability(self, delta: f64, temperature: f64) -> f64 {
        if delta <= 0.0 {
            return 1.0;
        }
        let z = delta / temperature;
        match self {
            AcceptanceRule::Logistic => 1.0 / (1.0 + z.exp()),
            AcceptanceRule::Metropolis => (-z).exp(),
        }
    }
}

/// Energy assigned to a sum of squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Energy {
    /// `(N/2) ln(SSE)`: the negative Gaussian log-likelihood with the noise
    /// variance profiled out, which makes the temperature scale-free.
    #[default]
    ProfileLikelihood,
    /// The raw sum of squares.
    Sse,
}

impl Energy {
    pub fn of(self, sse: f64, n: usize) -> f64 {
        match self {
            Energy::ProfileLikelihood => 0.5 * n as f64 * sse.max(f64::MIN_POSITIVE).ln(),
            Energy::Sse => sse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealerConfig {
    pub t0: f64,
    pub max_iters: usize,
    /// Initial Gaussian step widths; `None` means `0.02 (1 + |theta0|)`.
    pub proposal_scale: Option<Vec<f64>>,
    /// Iterations between proposal-scale adjustments.
    pub adapt_interval: usize,
    pub target_acceptance: f64,
    pub seed: u64,
    pub acceptance: AcceptanceRule,
    pub energy: Energy,
    /// Largest RK4 step.
    pub max_step: f64,
}

impl Default for AnnealerConfig {
    fn default() -> Self {
        Self {
            t0: 100.0,
            max_iters: 4000,
            proposal_scale: None,
            adapt_interval: 50,
            target_acceptance: 0.3,
            seed: 7,
            acceptance: AcceptanceRule::Logistic,
            energy: Energy::ProfileLikelihood,
            max_step: 0.05,
        }
    }
}

impl AnnealerConfig {
    pub fn temperature(&self, k: usize) -> f64 {
        self.t0 / (k as f64 + std::f64::consts::E).ln()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0) {
            return Err(Error::Config("t0 must be positive".into()));
        }
        if self.adapt_interval == 0 {
            return Err(Error::Config("adapt_interval must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target_acceptance must lie in (0, 1)".into()));
        }
        if let Some(s) = &self.proposal_scale {
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config("proposal scales must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaStep {
    pub temperature: f64,
    pub theta: Vec<f64>,
    pub energy: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct SaResult {
    /// Lowest-energy point visited.
    pub theta_hat: Vec<f64>,
    pub sse: f64,
    pub acceptance_rate: f64,
    /// Current state after every iteration.
    pub trace: Vec<SaStep>,
}

pub fn sa_fit(traj: &Trajectory, y: &[f64], theta0: &[f64], init0: &[f64], cfg: &AnnealerConfig) -> Result<SaResult> {
    cfg.validate()?;
    let model = traj.model();
    let p = model.theta_dim();
    check_len("theta0", p, theta0.len())?;
    check_len("initial conditions", model.order(), init0.len())?;
    check_len("observations", traj.n_times(), y.len())?;
    let n = y.len();
    let sse_of = |theta: &[f64]| -> f64 {
        match traj.predict(theta, init0) {
            Ok(x) => {
                let s: f64 = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
                if s.is_finite() {
                    s
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    };

    let mut scale = match &cfg.proposal_scale {
        Some(s) => {
            check_len("proposal_scale", p, s.len())?;
            s.clone()
        }
        None => theta0.iter().map(|t| 0.02 * (1.0 + t.abs())).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = theta0.to_vec();
    let mut current_sse = sse_of(&current);
    let mut current_e = cfg.energy.of(current_sse, n);
    let mut best = (current.clone(), current_sse, current_e);
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut accepted_total = 0usize;
    let mut accepted_window = 0usize;

    for k in 0..cfg.max_iters {
        let temp = cfg.temperature(k);
        let proposal: Vec<f64> = current
            .iter()
            .zip(&scale)
            .map(|(t, s)| t + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let sse = sse_of(&proposal);
        let e = cfg.energy.of(sse, n);
        let u: f64 = rng.random();
        let accept = if !e.is_finite() {
            false
        } else if !current_e.is_finite() {
            true
        } else {
            u < cfg.acceptance.probability(e - current_e, temp)
        };
        if accept {
            current = proposal;
            current_sse = sse;
            current_e = e;
            accepted_total += 1;
            accepted_window += 1;
            if current_e < best.2 {
                best = (current.clone(), current_sse, current_e);
            }
        }
        trace.push(SaStep {
            temperature: temp,
            theta: current.clone(),
            energy: current_e,
            accepted: accept,
        });
        if (k + 1) % cfg.adapt_interval == 0 {
            let rate = accepted_window as f64 / cfg.adapt_interval as f64;
            let factor = if rate > cfg.target_acceptance { 1.1 } else { 0.9 };
            scale.iter_mut().for_each(|s| *s *= factor);
            accepted_window = 0;
        }
    }

    Ok(SaResult {
        theta_hat: best.0,
        sse: best.1,
        acceptance_rate: if cfg.max_iters > 0 {
            accepted_total as f64 / cfg.max_iters as f64
        } else {
            0.0
        },
        trace,
    })
}
