//! The `fit`, `simulate`, `benchmark` and `surface` commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::io::{fmt_num, read_data_csv, write_csv, write_text_csv};
use crate::basis::{default_nodes_per_interval, QuadratureRule};
use crate::error::{Error, Result};
use crate::inference::{infer, Z95};
use crate::ladder::{run_ladder, StopReason};
use crate::outer::FitProblem;
use crate::simulation::{run_grid, MetricsTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterEstimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RungRecord {
    pub step: usize,
    pub gamma: f64,
    pub rho: f64,
    pub h: f64,
    pub theta: Vec<f64>,
    /// Width of each 95% interval at this rung; NaN where the delta method
    /// is unavailable.
    pub ci_width: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvePoint {
    pub t: f64,
    pub x_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub pi_lo: f64,
    pub pi_hi: f64,
}

/// Everything `fit` writes; `report.toml` holds all of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub n_obs: usize,
    pub rho: f64,
    pub df: f64,
    /// Root mean squared residual of the fitted curve.
    pub rmse_residuals: f64,
    pub sigma_y: f64,
    pub stop: String,
    pub rejected_rungs: usize,
    pub parameters: Vec<ParameterEstimate>,
    pub ladder: Vec<RungRecord>,
    pub curve: Vec<CurvePoint>,
}

impl FitReport {
    pub fn theta(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.estimate).collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Numerical(format!("cannot serialize report: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Data {
            line: 0,
            message: format!("malformed report: {e}"),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for p in &self.parameters {
            let _ = writeln!(s, "{:>8} = {:>10.5} +/- {:.5}   [{:.5}, {:.5}]", p.name, p.estimate, Z95 * p.se, p.ci_lo, p.ci_hi);
        }
        let _ = writeln!(s, "     rho = {:.8}  ({} rungs, stop: {})", self.rho, self.ladder.len(), self.stop);
        let _ = writeln!(s, "      df = {:.4}", self.df);
        let _ = writeln!(s, " sigma_y = {:.6}", self.sigma_y);
        let _ = write!(s, "    rmse = {:.6}", self.rmse_residuals);
        s
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn stop_name(stop: &StopReason) -> String {
    match stop {
        StopReason::Converged => "converged".into(),
        StopReason::RhoCap => "rho_cap".into(),
        StopReason::MaxRungs => "max_rungs".into(),
        StopReason::OuterFailure(m) => format!("outer_failure: {m}"),
    }
}

/// Data2LD fit of the observations in `data`. Writes `report.toml`,
/// `curve.csv` and `ladder.csv` under `out`.
pub fn fit(cfg: &RunConfig, data: &Path, out: &Path) -> Result<FitReport> {
    let model = cfg.model.build()?;
    let (times, y) = read_data_csv(data, model.domain())?;
    let m = &cfg.model;
    let basis = cfg.basis.build(m.domain, m.impact_time, m.pulse_width)?;
    let quad = QuadratureRule::for_basis(&basis, &model.breakpoints(), default_nodes_per_interval(&basis))?;
    let names = model.parameter_names();
    let problem = FitProblem::new(model, basis, &quad, times, y)?;
    let report = fit_problem(&problem, cfg, &names)?;

    ensure_dir(out)?;
    std::fs::write(out.join("report.toml"), report.to_toml()?)?;
    let header: Vec<String> = ["t", "x_hat", "ci_lo", "ci_hi", "pi_lo", "pi_hi"].map(String::from).to_vec();
    let rows: Vec<Vec<f64>> = report
        .curve
        .iter()
        .map(|c| vec![c.t, c.x_hat, c.ci_lo, c.ci_hi, c.pi_lo, c.pi_hi])
        .collect();
    write_csv(&out.join("curve.csv"), &header, rows.iter().map(Vec::as_slice))?;
    let mut header = vec!["rho".to_string()];
    header.extend(names.iter().cloned());
    header.extend(names.iter().map(|n| format!("ci_width_{n}")));
    let rows: Vec<Vec<f64>> = report
        .ladder
        .iter()
        .map(|r| {
            let mut row = vec![r.rho];
            row.extend(&r.theta);
            row.extend(&r.ci_width);
            row
        })
        .collect();
    write_csv(&out.join("ladder.csv"), &header, rows.iter().map(Vec::as_slice))?;
    Ok(report)
}

/// Ladder plus inference on an assembled problem.
pub fn fit_problem(problem: &FitProblem, cfg: &RunConfig, names: &[String]) -> Result<FitReport> {
    let controls = &cfg.estimation;
    let trace = run_ladder(problem, &controls.ladder)?;
    if let StopReason::OuterFailure(msg) = &trace.stop {
        return Err(Error::Numerical(format!(
            "ladder stopped after {} rungs: {msg}",
            trace.states.len()
        )));
    }
    let ladder = trace
        .states
        .iter()
        .map(|s| {
            let ci_width = match infer(problem, &s.theta, s.rho, controls.hessian) {
                Ok(rep) => rep.theta_ci.iter().map(|(lo, hi)| hi - lo).collect(),
                Err(_) => vec![f64::NAN; s.theta.len()],
            };
            RungRecord {
                step: s.step_index,
                gamma: s.gamma,
                rho: s.rho,
                h: s.h,
                theta: s.theta.clone(),
                ci_width,
            }
        })
        .collect();
    let rep = infer(problem, trace.theta_hat(), trace.rho_hat(), controls.hessian)?;
    let se = rep.theta_se();
    let parameters = names
        .iter()
        .enumerate()
        .map(|(j, n)| ParameterEstimate {
            name: n.clone(),
            estimate: rep.theta[j],
            se: se[j],
            ci_lo: rep.theta_ci[j].0,
            ci_hi: rep.theta_ci[j].1,
        })
        .collect();
    let y = &problem.design().y;
    let n = y.len();
    let rss: f64 = y.iter().zip(&rep.x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    let curve = (0..n)
        .map(|i| CurvePoint {
            t: rep.times[i],
            x_hat: rep.x_hat[i],
            ci_lo: rep.x_ci[i].0,
            ci_hi: rep.x_ci[i].1,
            pi_lo: rep.x_pi[i].0,
            pi_hi: rep.x_pi[i].1,
        })
        .collect();
    Ok(FitReport {
        n_obs: n,
        rho: rep.rho,
        df: rep.df,
        rmse_residuals: (rss / n as f64).sqrt(),
        sigma_y: rep.sigma2_y.sqrt(),
        stop: stop_name(&trace.stop),
        rejected_rungs: trace.rejected,
        parameters,
        ladder,
        curve,
    })
}

/// Name of the data file of one simulated replicate.
pub fn replicate_file_name(replicate: usize) -> String {
    format!("replicate_{replicate:04}.csv")
}

/// Writes `truth.csv` (`t,x`) and one `t,y` file per replicate. Returns the
/// replicate paths.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let scenario = cfg.scenario();
    scenario.validate()?;
    let truth = scenario.truth_on_grid()?;
    let times = scenario.observation_times();
    ensure_dir(out)?;
    let rows: Vec<[f64; 2]> = times.iter().zip(&truth).map(|(t, x)| [*t, *x]).collect();
    write_csv(&out.join("truth.csv"), &["t".into(), "x".into()], rows.iter().map(|r| r.as_slice()))?;
    let mut paths = Vec::with_capacity(scenario.replicates);
    for rep in 0..scenario.replicates {
        let (t, y) = scenario.data_from_truth(&truth, rep);
        let rows: Vec<[f64; 2]> = t.iter().zip(&y).map(|(t, y)| [*t, *y]).collect();
        let path = out.join(replicate_file_name(rep));
        write_csv(&path, &["t".into(), "y".into()], rows.iter().map(|r| r.as_slice()))?;
        paths.push(path);
    }
    Ok(paths)
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} threads: {e}")))
}

/// Replicate study over the configured grid. Writes `metrics.csv`,
/// `estimates.csv`, `timing.csv` and the formatted `metrics.txt`.
pub fn benchmark(cfg: &RunConfig, out: &Path) -> Result<MetricsTable> {
    let b = &cfg.benchmark;
    if b.estimators.is_empty() {
        return Err(Error::Config("benchmark.estimators is empty".into()));
    }
    let scenario = cfg.scenario();
    let table = thread_pool(cfg.threads)?
        .install(|| run_grid(&scenario, &b.n_obs, &b.sigmas, &b.estimators, &cfg.estimation))?;
    ensure_dir(out)?;
    write_metrics(&table, out)?;
    std::fs::write(out.join("metrics.txt"), format_table(&table))?;
    Ok(table)
}

fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn write_metrics(table: &MetricsTable, out: &Path) -> Result<()> {
    let names = &table.parameter_names;
    let mut header: Vec<String> = ["estimator", "n_obs", "sigma", "replicates", "failures", "flagged", "low_confidence"]
        .map(String::from)
        .to_vec();
    header.extend(names.iter().map(|n| format!("rmse_{n}")));
    header.push("rmse_x".into());
    header.extend(names.iter().map(|n| format!("coverage_{n}")));
    header.extend(names.iter().map(|n| format!("coverage_se_{n}")));
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    let mut estimates = Vec::new();
    for c in &table.cells {
        let key = vec![c.estimator.name().to_string(), c.n_obs.to_string(), fmt_num(c.sigma)];
        let mut row = key.clone();
        row.extend([
            c.replicates.to_string(),
            c.failures.len().to_string(),
            c.flagged().to_string(),
            c.low_confidence().to_string(),
        ]);
        row.extend(c.rmse_theta.iter().map(|v| fmt_num(*v)));
        row.push(fmt_num(c.rmse_x));
        row.extend(c.coverage.iter().map(|v| opt_num(*v)));
        row.extend(c.coverage_se.iter().map(|v| opt_num(*v)));
        rows.push(row);
        let mut t = key.clone();
        t.push(fmt_num(c.mean_seconds));
        timing.push(t);
        for (rep, theta) in &c.estimates {
            let mut e = key.clone();
            e.push(rep.to_string());
            e.extend(theta.iter().map(|v| fmt_num(*v)));
            estimates.push(e);
        }
    }
    write_text_csv(&out.join("metrics.csv"), &header, &rows)?;
    let key_header: Vec<String> = ["estimator", "n_obs", "sigma"].map(String::from).to_vec();
    let mut h = key_header.clone();
    h.push("mean_seconds".into());
    write_text_csv(&out.join("timing.csv"), &h, &timing)?;
    let mut h = key_header;
    h.push("replicate".into());
    h.extend(names.iter().cloned());
    write_text_csv(&out.join("estimates.csv"), &h, &estimates)?;
    Ok(())
}

/// Tables with one row per `(sigma, n)` and one column per estimator and
/// parameter: `100 x RMSE` of the parameters, coverage of the 95% intervals,
/// `100 x RMSE` of the fitted curve, and mean seconds per fit. `!` marks a
/// cell where more than 20% of fits failed, `*` a coverage figure from fewer
/// than 30 intervals.
pub fn format_table(table: &MetricsTable) -> String {
    let mut estimators: Vec<_> = table.cells.iter().map(|c| c.estimator).collect();
    estimators.sort();
    estimators.dedup();
    let mut rows: Vec<(f64, usize)> = Vec::new();
    for c in &table.cells {
        if !rows.contains(&(c.sigma, c.n_obs)) {
            rows.push((c.sigma, c.n_obs));
        }
    }
    let names = &table.parameter_names;
    let mut s = String::new();
    let col = |s: &mut String, v: String| {
        let _ = write!(s, "{v:>10}");
    };
    let head = |s: &mut String, title: &str, per_param: bool| {
        let _ = writeln!(s, "{title}");
        let _ = write!(s, "{:>6}{:>6}", "sigma", "N");
        for e in &estimators {
            if per_param {
                for n in names {
                    let _ = write!(s, "{:>10}", format!("{}:{}", e.name(), n));
                }
            } else {
                let _ = write!(s, "{:>10}", e.name());
            }
        }
        s.push('\n');
    };
    let flag = |c: &crate::simulation::CellMetrics| if c.flagged() { "!" } else { "" };

    head(&mut s, "100 x RMSE of parameter estimates", true);
    for &(sigma, n) in &rows {
        let _ = write!(s, "{sigma:>6}{n:>6}");
        for &e in &estimators {
            for j in 0..names.len() {
                let v = table
                    .cell(e, n, sigma)
                    .map(|c| format!("{:.3}{}", c.rmse_theta[j], flag(c)))
                    .unwrap_or_default();
                col(&mut s, v);
            }
        }
        s.push('\n');
    }
    s.push('\n');
    head(&mut s, "Coverage (%) of 95% intervals", true);
    for &(sigma, n) in &rows {
        let _ = write!(s, "{sigma:>6}{n:>6}");
        for &e in &estimators {
            for j in 0..names.len() {
                let v = table
                    .cell(e, n, sigma)
                    .map(|c| match c.coverage[j] {
                        Some(v) => format!("{v:.1}{}{}", if c.low_confidence() { "*" } else { "" }, flag(c)),
                        None => "-".into(),
                    })
                    .unwrap_or_default();
                col(&mut s, v);
            }
        }
        s.push('\n');
    }
    s.push('\n');
    head(&mut s, "100 x RMSE of fitted curve", false);
    for &(sigma, n) in &rows {
        let _ = write!(s, "{sigma:>6}{n:>6}");
        for &e in &estimators {
            let v = table
                .cell(e, n, sigma)
                .map(|c| format!("{:.3}{}", c.rmse_x, flag(c)))
                .unwrap_or_default();
            col(&mut s, v);
        }
        s.push('\n');
    }
    s.push('\n');
    head(&mut s, "Mean seconds per fit", false);
    for &(sigma, n) in &rows {
        let _ = write!(s, "{sigma:>6}{n:>6}");
        for &e in &estimators {
            let v = table
                .cell(e, n, sigma)
                .map(|c| format!("{:.4}", c.mean_seconds))
                .unwrap_or_default();
            col(&mut s, v);
        }
        s.push('\n');
    }
    let failed: Vec<_> = table.cells.iter().filter(|c| !c.failures.is_empty()).collect();
    if !failed.is_empty() {
        s.push_str("\nFailed fits\n");
        for c in failed {
            let _ = writeln!(s, "{} sigma={} N={}: {}/{}", c.estimator.name(), c.sigma, c.n_obs, c.failures.len(), c.replicates);
        }
    }
    s
}

/// `H(theta | rho)` over a grid of two parameters at one `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub rho: f64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    /// `h[i][j]` at `(first[i], second[j])`; NaN where the inner system is
    /// singular.
    pub h: Vec<Vec<f64>>,
}

impl Surface {
    /// Grid indices and coordinates of the smallest finite value.
    pub fn argmin(&self) -> Option<((usize, usize), (f64, f64))> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (i, row) in self.h.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if v.is_finite() && best.is_none_or(|(_, b)| *v < b) {
                    best = Some(((i, j), *v));
                }
            }
        }
        best.map(|((i, j), _)| ((i, j), (self.first[i], self.second[j])))
    }
}

pub fn surface_file_name(rho: f64) -> String {
    format!("surface_rho_{rho}.csv")
}

fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Dumps `H` grids, one CSV per `rho`, in long form with columns named after
/// the two parameters and `h`. Uses `data` when given, otherwise the
/// configured simulated replicate.
pub fn surface(cfg: &RunConfig, data: Option<&Path>, out: &Path) -> Result<Vec<Surface>> {
    let spec = &cfg.surface;
    let scenario = cfg.scenario();
    let model = cfg.model.build()?;
    let names = model.parameter_names();
    let problem = match data {
        Some(path) => {
            let (times, y) = read_data_csv(path, model.domain())?;
            let basis = scenario.basis()?;
            let quad = QuadratureRule::for_basis(&basis, &model.breakpoints(), default_nodes_per_interval(&basis))?;
            FitProblem::new(model, basis, &quad, times, y)?
        }
        None => {
            let (_, y) = scenario.generate_data(spec.replicate)?;
            scenario.fit_problem(y)?
        }
    };
    let base = spec.base.clone().unwrap_or_else(|| scenario.true_theta.clone());
    let first = linspace(spec.first, spec.points);
    let second = linspace(spec.second, spec.points);
    ensure_dir(out)?;
    let header = vec![names[spec.axes.0].clone(), names[spec.axes.1].clone(), "h".into()];
    let mut surfaces = Vec::with_capacity(spec.rho.len());
    for &rho in &spec.rho {
        let grid = problem.h_surface(&base, spec.axes, &first, &second, rho)?;
        let mut rows = Vec::with_capacity(first.len() * second.len());
        for (i, a) in first.iter().enumerate() {
            for (j, b) in second.iter().enumerate() {
                rows.push([*a, *b, grid[(i, j)]]);
            }
        }
        write_csv(&out.join(surface_file_name(rho)), &header, rows.iter().map(|r| r.as_slice()))?;
        surfaces.push(Surface {
            rho,
            first: first.clone(),
            second: second.clone(),
            h: (0..first.len()).map(|i| grid.row(i).iter().copied().collect()).collect(),
        });
    }
    Ok(surfaces)
}
