//! Synthetic data from the head-acceleration equation and replicate studies.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{integration_grid, nls_fit, rk4_solve, sa_fit, AnnealerConfig, IvpSolution, NlsControls, Trajectory};
use crate::basis::{BSplineBasis, BasisRecipe, QuadratureRule};
use crate::error::{Error, Result};
use crate::inference::{infer, HessianKind, Z95};
use crate::ladder::{run_ladder, LadderControls, StopReason};
use crate::model::{head_impact_model, LinearOdeModel};
use crate::outer::FitProblem;

pub const TRUE_THETA: [f64; 3] = [-0.05, -0.15, 0.39];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationScenario {
    pub true_theta: Vec<f64>,
    pub domain: (f64, f64),
    pub impact_time: f64,
    pub pulse_width: f64,
    pub n_obs: usize,
    /// Noise standard deviation as a fraction of the range of the truth.
    pub sigma: f64,
    pub replicates: usize,
    pub base_seed: u64,
    /// Number of grid points of the reference RK4 solution.
    pub reference_resolution: usize,
    /// Basis used by Data2LD fits.
    pub basis: BasisRecipe,
}

impl Default for SimulationScenario {
    fn default() -> Self {
        Self {
            true_theta: TRUE_THETA.to_vec(),
            domain: (0.0, 60.0),
            impact_time: 14.0,
            pulse_width: 1.0,
            n_obs: 101,
            sigma: 0.05,
            replicates: 100,
            base_seed: 20_240_601,
            reference_resolution: 6001,
            basis: BasisRecipe::default(),
        }
    }
}

impl SimulationScenario {
    pub fn new(n_obs: usize, sigma: f64, replicates: usize) -> Self {
        Self {
            n_obs,
            sigma,
            replicates,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs < 2 {
            return Err(Error::Config("n_obs must be at least 2".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("sigma must be non-negative".into()));
        }
        if self.reference_resolution < 2 {
            return Err(Error::Config("reference_resolution must be at least 2".into()));
        }
        if self.true_theta.len() != 3 {
            return Err(Error::Config("true_theta must hold (beta0, beta1, alpha)".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<LinearOdeModel> {
        head_impact_model(self.domain, self.impact_time, self.pulse_width)
    }

    /// By default order 5 with triple knots at both pulse edges and eleven
    /// equispaced knots after the pulse.
    pub fn basis(&self) -> Result<BSplineBasis> {
        self.basis.build(self.domain, self.impact_time, self.pulse_width)
    }

    pub fn observation_times(&self) -> Vec<f64> {
        let (a, b) = self.domain;
        let n = self.n_obs;
        (0..n)
            .map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
            .collect()
    }

    /// Reference RK4 trajectory with every observation time on the grid.
    pub fn true_solution(&self) -> Result<IvpSolution> {
        self.validate()?;
        let model = self.model()?;
        let (a, b) = self.domain;
        let step = (b - a) / (self.reference_resolution - 1) as f64;
        let grid = integration_grid(&model, &self.observation_times(), step);
        rk4_solve(&model, &self.true_theta, &[0.0, 0.0], &grid)
    }

    pub fn truth_on_grid(&self) -> Result<Vec<f64>> {
        Ok(self.true_solution()?.values_at(&self.observation_times()))
    }

    /// Standard deviation of the added noise: `sigma * range(x)` over the
    /// observation grid.
    pub fn noise_sd(&self, truth: &[f64]) -> f64 {
        let (lo, hi) = truth
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        self.sigma * (hi - lo)
    }

    /// Independent RNG stream for one replicate.
    pub fn replicate_rng(&self, replicate: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(replicate as u64);
        rng
    }

    /// Observation times and noisy data for one replicate, given the truth on
    /// the observation grid.
    pub fn data_from_truth(&self, truth: &[f64], replicate: usize) -> (Vec<f64>, Vec<f64>) {
        let sd = self.noise_sd(truth);
        let mut rng = self.replicate_rng(replicate);
        let y = truth
            .iter()
            .map(|x| x + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (self.observation_times(), y)
    }

    pub fn generate_data(&self, replicate: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let truth = self.truth_on_grid()?;
        Ok(self.data_from_truth(&truth, replicate))
    }

    /// Fitting problem for the given data on this scenario's model and basis.
    pub fn fit_problem(&self, y: Vec<f64>) -> Result<FitProblem> {
        let model = self.model()?;
        let basis = self.basis()?;
        let quad = QuadratureRule::for_basis(&basis, &model.breakpoints(), basis.order().max(5))?;
        FitProblem::new(model, basis, &quad, self.observation_times(), y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Data2ld,
    Nls,
    Sa,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Data2ld => "Data2LD",
            Estimator::Nls => "NLS",
            Estimator::Sa => "SA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorControls {
    pub ladder: LadderControls,
    pub hessian: HessianKind,
    pub nls: NlsControls,
    pub annealer: AnnealerConfig,
    /// Starting parameters for NLS and SA.
    pub baseline_theta0: Vec<f64>,
    /// Initial conditions for NLS (starting values) and SA (held fixed).
    pub baseline_init0: Vec<f64>,
}

impl Default for EstimatorControls {
    fn default() -> Self {
        Self {
            ladder: LadderControls::default(),
            hessian: HessianKind::Exact,
            nls: NlsControls::default(),
            annealer: AnnealerConfig::default(),
            baseline_theta0: vec![-0.01, -0.01, 0.01],
            baseline_init0: vec![0.0, 0.0],
        }
    }
}

/// One estimator applied to one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateFit {
    pub theta_hat: Vec<f64>,
    /// Whether each 95% interval holds the true value; `None` when the
    /// estimator gives no interval.
    pub covered: Vec<Option<bool>>,
    /// Fitted curve at the observation times.
    pub x_hat: Vec<f64>,
    pub seconds: f64,
}

/// Fits `estimator` to data `y` on the scenario's observation grid.
pub fn fit_replicate(
    scenario: &SimulationScenario,
    estimator: Estimator,
    y: &[f64],
    replicate: usize,
    controls: &EstimatorControls,
) -> Result<ReplicateFit> {
    let truth = &scenario.true_theta;
    let start = Instant::now();
    let (theta_hat, covered, x_hat) = match estimator {
        Estimator::Data2ld => {
            let problem = scenario.fit_problem(y.to_vec())?;
            let trace = run_ladder(&problem, &controls.ladder)?;
            if let StopReason::OuterFailure(msg) = &trace.stop {
                return Err(Error::Numerical(format!("ladder stopped early: {msg}")));
            }
            let theta = trace.theta_hat().to_vec();
            match infer(&problem, &theta, trace.rho_hat(), controls.hessian) {
                Ok(rep) => {
                    let cov = (0..theta.len()).map(|j| Some(rep.covers(j, truth[j]))).collect();
                    (theta, cov, rep.x_hat)
                }
                Err(_) => {
                    let ev = problem.evaluate(&theta, trace.rho_hat())?;
                    let x = (&problem.design().phi * &ev.fit.c_hat).as_slice().to_vec();
                    (theta, vec![None; truth.len()], x)
                }
            }
        }
        Estimator::Nls => {
            let traj = Trajectory::new(scenario.model()?, &scenario.observation_times(), controls.nls.max_step)?;
            let out = nls_fit(&traj, y, &controls.baseline_theta0, &controls.baseline_init0, &controls.nls)?;
            let cov = (0..out.theta_hat.len())
                .map(|j| out.theta_ci(j, Z95).map(|(lo, hi)| lo <= truth[j] && truth[j] <= hi))
                .collect();
            let x = traj.predict(&out.theta_hat, &out.init_hat)?;
            (out.theta_hat, cov, x)
        }
        Estimator::Sa => {
            let traj = Trajectory::new(scenario.model()?, &scenario.observation_times(), controls.annealer.max_step)?;
            let cfg = AnnealerConfig {
                seed: controls.annealer.seed.wrapping_add(replicate as u64),
                ..controls.annealer.clone()
            };
            let out = sa_fit(&traj, y, &controls.baseline_theta0, &controls.baseline_init0, &cfg)?;
            let x = traj.predict(&out.theta_hat, &controls.baseline_init0)?;
            (out.theta_hat, vec![None; truth.len()], x)
        }
    };
    Ok(ReplicateFit {
        theta_hat,
        covered,
        x_hat,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Aggregate metrics of one estimator in one `(N, sigma)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub estimator: Estimator,
    pub n_obs: usize,
    pub sigma: f64,
    pub replicates: usize,
    /// `(replicate, message)` of every failed fit, excluded from the metrics.
    pub failures: Vec<(usize, String)>,
    /// `100 x RMSE` per parameter over successful fits.
    pub rmse_theta: Vec<f64>,
    /// `100 x RMSE` of the fitted curve against the truth on the grid.
    pub rmse_x: f64,
    /// Percentage of intervals containing the truth, per parameter.
    pub coverage: Vec<Option<f64>>,
    /// Binomial standard error of `coverage`, in percent.
    pub coverage_se: Vec<Option<f64>>,
    pub mean_seconds: f64,
    /// Raw per-replicate estimates, in replicate order (failures omitted).
    pub estimates: Vec<(usize, Vec<f64>)>,
}

impl CellMetrics {
    pub fn successes(&self) -> usize {
        self.replicates - self.failures.len()
    }

    pub fn failure_rate(&self) -> f64 {
        if self.replicates == 0 {
            0.0
        } else {
            self.failures.len() as f64 / self.replicates as f64
        }
    }

    /// More than 20% of the fits failed.
    pub fn flagged(&self) -> bool {
        self.failure_rate() > 0.2
    }

    /// Too few intervals for a meaningful coverage estimate.
    pub fn low_confidence(&self) -> bool {
        self.successes() < 30
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub parameter_names: Vec<String>,
    pub cells: Vec<CellMetrics>,
}

impl MetricsTable {
    pub fn cell(&self, estimator: Estimator, n_obs: usize, sigma: f64) -> Option<&CellMetrics> {
        self.cells
            .iter()
            .find(|c| c.estimator == estimator && c.n_obs == n_obs && c.sigma == sigma)
    }
}

/// Runs every estimator on every replicate of `scenario`. Replicates run in
/// parallel; results are gathered in replicate order.
pub fn run_study(scenario: &SimulationScenario, estimators: &[Estimator], controls: &EstimatorControls) -> Result<MetricsTable> {
    scenario.validate()?;
    let truth = scenario.truth_on_grid()?;
    let names = scenario.model()?.parameter_names();
    let per_rep: Vec<Vec<Result<ReplicateFit>>> = (0..scenario.replicates)
        .into_par_iter()
        .map(|rep| {
            let (_, y) = scenario.data_from_truth(&truth, rep);
            estimators
                .iter()
                .map(|&e| fit_replicate(scenario, e, &y, rep, controls))
                .collect()
        })
        .collect();

    let p = scenario.true_theta.len();
    let mut cells = Vec::with_capacity(estimators.len());
    for (ei, &estimator) in estimators.iter().enumerate() {
        let mut failures = Vec::new();
        let mut sq = vec![0.0; p];
        let mut sq_x = 0.0;
        let mut hits = vec![0usize; p];
        let mut with_ci = vec![0usize; p];
        let mut seconds = 0.0;
        let mut estimates = Vec::new();
        for (rep, fits) in per_rep.iter().enumerate() {
            match &fits[ei] {
                Ok(fit) => {
                    for j in 0..p {
                        sq[j] += (fit.theta_hat[j] - scenario.true_theta[j]).powi(2);
                        if let Some(c) = fit.covered[j] {
                            with_ci[j] += 1;
                            hits[j] += c as usize;
                        }
                    }
                    let mse_x: f64 = fit
                        .x_hat
                        .iter()
                        .zip(&truth)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        / truth.len() as f64;
                    sq_x += mse_x;
                    seconds += fit.seconds;
                    estimates.push((rep, fit.theta_hat.clone()));
                }
                Err(e) => failures.push((rep, e.to_string())),
            }
        }
        let ok = estimates.len();
        let mean = |v: f64| if ok > 0 { v / ok as f64 } else { f64::NAN };
        let coverage: Vec<Option<f64>> = (0..p)
            .map(|j| (with_ci[j] > 0).then(|| 100.0 * hits[j] as f64 / with_ci[j] as f64))
            .collect();
        let coverage_se = coverage
            .iter()
            .zip(&with_ci)
            .map(|(c, n)| c.map(|c| (c * (100.0 - c) / *n as f64).sqrt()))
            .collect();
        cells.push(CellMetrics {
            estimator,
            n_obs: scenario.n_obs,
            sigma: scenario.sigma,
            replicates: scenario.replicates,
            failures,
            rmse_theta: sq.iter().map(|v| 100.0 * mean(*v).sqrt()).collect(),
            rmse_x: 100.0 * mean(sq_x).sqrt(),
            coverage,
            coverage_se,
            mean_seconds: mean(seconds),
            estimates,
        });
    }
    Ok(MetricsTable {
        parameter_names: names,
        cells,
    })
}

/// `run_study` over every `(N, sigma)` pair, each cell seeded identically.
pub fn run_grid(
    base: &SimulationScenario,
    sizes: &[usize],
    sigmas: &[f64],
    estimators: &[Estimator],
    controls: &EstimatorControls,
) -> Result<MetricsTable> {
    let mut table = MetricsTable {
        parameter_names: base.model()?.parameter_names(),
        cells: Vec::new(),
    };
    for &sigma in sigmas {
        for &n_obs in sizes {
            let sc = SimulationScenario {
                n_obs,
                sigma,
                ..base.clone()
            };
            table.cells.extend(run_study(&sc, estimators, controls)?.cells);
        }
    }
    Ok(table)
}
