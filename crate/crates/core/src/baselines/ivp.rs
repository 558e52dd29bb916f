//! Classical fixed-step RK4 on the companion first-order system.

use crate::error::{Error, Result};
use crate::model::LinearOdeModel;

/// Trajectory of `(x, Dx, ..., D^{p-1} x)` on a grid, with a cubic Hermite
/// dense evaluator for `x`.
#[derive(Debug, Clone)]
pub struct IvpSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `(Dx at left end, Dx at right end)` of every step, using the
    /// forcing piece active on that step.
    slopes: Vec<(f64, f64)>,
}

impl IvpSolution {
    pub fn x(&self) -> Vec<f64> {
        self.states.iter().map(|s| s[0]).collect()
    }

    /// `x(t)` by cubic Hermite interpolation between grid points.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.states[0][0];
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1][0];
        }
        let i = self.times.partition_point(|&g| g <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (x0, x1) = (self.states[i][0], self.states[i + 1][0]);
        let (m0, m1) = self.slopes[i];
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * x0 + h10 * h * m0 + h01 * x1 + h11 * h * m1
    }

    /// Values at points that lie on the grid (looked up exactly), falling
    /// back to interpolation elsewhere.
    pub fn values_at(&self, query: &[f64]) -> Vec<f64> {
        query
            .iter()
            .map(|&t| {
                let i = self.times.partition_point(|&g| g < t);
                if i < self.times.len() && self.times[i] == t {
                    self.states[i][0]
                } else {
                    self.eval(t)
                }
            })
            .collect()
    }
}

/// Grid from `domain.0` covering `required` times and the model breakpoints,
/// refined so no step exceeds `max_step`.
pub fn integration_grid(model: &LinearOdeModel, required: &[f64], max_step: f64) -> Vec<f64> {
    let (a, b) = model.domain();
    let mut anchors = vec![a, b];
    anchors.extend(required.iter().copied().filter(|&t| t >= a && t <= b));
    anchors.extend(model.breakpoints());
    anchors.sort_by(|x, y| x.total_cmp(y));
    anchors.dedup();
    let mut grid = vec![anchors[0]];
    for w in anchors.windows(2) {
        let n = ((w[1] - w[0]) / max_step).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n as f64;
        for i in 1..n {
            grid.push(w[0] + h * i as f64);
        }
        grid.push(w[1]);
    }
    grid
}

fn rhs(model: &LinearOdeModel, theta: &[f64], t: f64, lo: f64, hi: f64, state: &[f64], out: &mut [f64]) {
    let p = state.len();
    let (betas, forcing) = model.ode_terms_on(theta, t, lo, hi);
    out[..p - 1].copy_from_slice(&state[1..]);
    out[p - 1] = betas.iter().zip(state).map(|(b, s)| b * s).sum::<f64>() + forcing;
}

/// RK4 from `init` at `grid[0]`. The grid must contain every model breakpoint
/// inside its range so that no step straddles a discontinuity.
pub fn rk4_solve(model: &LinearOdeModel, theta: &[f64], init: &[f64], grid: &[f64]) -> Result<IvpSolution> {
    let p = model.order();
    crate::error::check_len("initial conditions", p, init.len())?;
    crate::error::check_len("theta", model.theta_dim(), theta.len())?;
    if grid.is_empty() {
        return Err(Error::InvalidModel("empty integration grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidModel("integration grid must be strictly increasing".into()));
    }
    let (g0, g1) = (grid[0], grid[grid.len() - 1]);
    for bp in model.breakpoints() {
        if bp > g0 && bp < g1 && grid.binary_search_by(|g| g.total_cmp(&bp)).is_err() {
            return Err(Error::InvalidModel(format!(
                "integration grid must contain the breakpoint {bp}"
            )));
        }
    }

    let mut states = Vec::with_capacity(grid.len());
    let mut slopes = Vec::with_capacity(grid.len().saturating_sub(1));
    let mut s = init.to_vec();
    states.push(s.clone());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; p], vec![0.0; p], vec![0.0; p], vec![0.0; p]);
    let mut tmp = vec![0.0; p];
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        rhs(model, theta, t0, t0, t1, &s, &mut k1);
        for i in 0..p {
            tmp[i] = s[i] + 0.5 * h * k1[i];
        }
        rhs(model, theta, t0 + 0.5 * h, t0, t1, &tmp, &mut k2);
        for i in 0..p {
            tmp[i] = s[i] + 0.5 * h * k2[i];
        }
        rhs(model, theta, t0 + 0.5 * h, t0, t1, &tmp, &mut k3);
        for i in 0..p {
            tmp[i] = s[i] + h * k3[i];
        }
        rhs(model, theta, t1, t0, t1, &tmp, &mut k4);
        let left_slope = if p > 1 { s[1] } else { k1[0] };
        for i in 0..p {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: t1 });
        }
        let right_slope = if p > 1 {
            s[1]
        } else {
            rhs(model, theta, t1, t0, t1, &s, &mut tmp);
            tmp[0]
        };
        slopes.push((left_slope, right_slope));
        states.push(s.clone());
    }
    Ok(IvpSolution {
        times: grid.to_vec(),
        states,
        slopes,
    })
}

/// Forward map `(theta, init) -> x(t_i)` on a fixed grid, reused across many
/// parameter values.
///
/// The equation's coefficients and forcing are affine in `theta`, so their
/// values at every RK4 stage time are tabulated once as affine maps and each
/// solve only takes dot products.
#[derive(Debug, Clone)]
pub struct Trajectory {
    model: LinearOdeModel,
    grid: Vec<f64>,
    index: Vec<usize>,
    /// Per step and stage (left, mid, right): a `(p + 1) x (P + 1)` row-major
    /// block mapping `(1, theta)` to `(beta_0..beta_{p-1}, f)`.
    stages: Vec<f64>,
}

impl Trajectory {
    pub fn new(model: LinearOdeModel, times: &[f64], max_step: f64) -> Result<Self> {
        let (a, b) = model.domain();
        if let Some(t) = times.iter().find(|t| !(**t >= a && **t <= b)) {
            return Err(Error::OutsideDomain { t: *t, start: a, end: b });
        }
        if !(max_step > 0.0) {
            return Err(Error::Config(format!("integration step {max_step} must be positive")));
        }
        let grid = integration_grid(&model, times, max_step);
        let index = times
            .iter()
            .map(|t| grid.partition_point(|g| g < t))
            .collect();
        let p = model.order();
        let np = model.theta_dim();
        let block = (p + 1) * (np + 1);
        let mut stages = Vec::with_capacity(grid.len().saturating_sub(1) * 3 * block);
        let mut unit = vec![0.0; np];
        for w in grid.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            for t in [t0, 0.5 * (t0 + t1), t1] {
                unit.iter_mut().for_each(|v| *v = 0.0);
                let (b0, f0) = model.ode_terms_on(&unit, t, t0, t1);
                let mut cols = vec![(b0.clone(), f0)];
                for j in 0..np {
                    unit[j] = 1.0;
                    let (bj, fj) = model.ode_terms_on(&unit, t, t0, t1);
                    unit[j] = 0.0;
                    cols.push((bj.iter().zip(&b0).map(|(x, y)| x - y).collect(), fj - f0));
                }
                for r in 0..=p {
                    for (bs, f) in &cols {
                        stages.push(if r < p { bs[r] } else { *f });
                    }
                }
            }
        }
        Ok(Self {
            model,
            grid,
            index,
            stages,
        })
    }

    pub fn model(&self) -> &LinearOdeModel {
        &self.model
    }

    pub fn n_times(&self) -> usize {
        self.index.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn predict(&self, theta: &[f64], init: &[f64]) -> Result<Vec<f64>> {
        let p = self.model.order();
        let np = self.model.theta_dim();
        crate::error::check_len("initial conditions", p, init.len())?;
        crate::error::check_len("theta", np, theta.len())?;
        let block = (p + 1) * (np + 1);
        let mut out = vec![0.0; self.index.len()];
        let mut next = 0;
        let mut s = init.to_vec();
        let mut emit = |i: usize, s: &[f64], next: &mut usize| {
            while *next < self.index.len() && self.index[*next] == i {
                out[*next] = s[0];
                *next += 1;
            }
        };
        emit(0, &s, &mut next);

        // coefficient values at one stage
        let mut coef = vec![0.0; p + 1];
        let eval = |blk: &[f64], coef: &mut [f64]| {
            for (r, c) in coef.iter_mut().enumerate() {
                let row = &blk[r * (np + 1)..(r + 1) * (np + 1)];
                *c = row[0] + row[1..].iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
            }
        };
        let deriv = |coef: &[f64], x: &[f64], k: &mut [f64]| {
            k[..p - 1].copy_from_slice(&x[1..]);
            k[p - 1] = coef[..p].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + coef[p];
        };
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; p], vec![0.0; p], vec![0.0; p], vec![0.0; p]);
        let mut tmp = vec![0.0; p];
        for (i, w) in self.grid.windows(2).enumerate() {
            let h = w[1] - w[0];
            let base = i * 3 * block;
            eval(&self.stages[base..base + block], &mut coef);
            deriv(&coef, &s, &mut k1);
            eval(&self.stages[base + block..base + 2 * block], &mut coef);
            for j in 0..p {
                tmp[j] = s[j] + 0.5 * h * k1[j];
            }
            deriv(&coef, &tmp, &mut k2);
            for j in 0..p {
                tmp[j] = s[j] + 0.5 * h * k2[j];
            }
            deriv(&coef, &tmp, &mut k3);
            eval(&self.stages[base + 2 * block..base + 3 * block], &mut coef);
            for j in 0..p {
                tmp[j] = s[j] + h * k3[j];
            }
            deriv(&coef, &tmp, &mut k4);
            for j in 0..p {
                s[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { t: w[1] });
            }
            emit(i + 1, &s, &mut next);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{head_impact_model, CoefficientTerm};

    const TRUTH: [f64; 3] = [-0.05, -0.15, 0.39];

    fn model() -> LinearOdeModel {
        head_impact_model((0.0, 60.0), 14.0, 1.0).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_solution() {
        let m = model();
        let grid = integration_grid(&m, &[], 0.1);
        let sol = rk4_solve(&m, &[0.0; 3], &[0.0, 0.0], &grid).unwrap();
        assert!(sol.x().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn quiet_before_the_pulse() {
        let m = model();
        let grid = integration_grid(&m, &[], 0.05);
        let sol = rk4_solve(&m, &TRUTH, &[0.0, 0.0], &grid).unwrap();
        for (t, x) in sol.times.iter().zip(sol.x()) {
            if *t <= 14.0 {
                assert_eq!(x, 0.0);
            }
        }
        assert!(sol.x().iter().any(|v| v.abs() > 0.5));
    }

    #[test]
    fn fourth_order_convergence() {
        let m = model();
        let end = |h: f64| {
            let grid = integration_grid(&m, &[], h);
            rk4_solve(&m, &TRUTH, &[0.0, 0.0], &grid).unwrap().states.last().unwrap()[0]
        };
        let (a, b, c) = (end(0.1), end(0.05), end(0.025));
        let ratio = (a - b) / (b - c);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn first_order_exponential() {
        // Dx = -0.5 x, x(0) = 2
        let m = LinearOdeModel::new(1, vec![CoefficientTerm::constant(0)], vec![], (0.0, 4.0)).unwrap();
        let grid = integration_grid(&m, &[], 0.01);
        let sol = rk4_solve(&m, &[-0.5], &[2.0], &grid).unwrap();
        assert!((sol.states.last().unwrap()[0] - 2.0 * (-2.0f64).exp()).abs() < 1e-10);
        assert!((sol.eval(1.005) - 2.0 * (-0.5025f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn grid_must_resolve_breakpoints() {
        let m = model();
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 1.5).collect();
        assert!(rk4_solve(&m, &TRUTH, &[0.0, 0.0], &grid).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let m = model();
        let grid = integration_grid(&m, &[], 0.5);
        assert!(matches!(
            rk4_solve(&m, &[1e6, 1e6, 1.0], &[1.0, 0.0], &grid),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn trajectory_matches_direct_solve() {
        let m = model();
        let times: Vec<f64> = (0..=30).map(|i| 2.0 * i as f64).collect();
        let traj = Trajectory::new(m.clone(), &times, 0.05).unwrap();
        let theta = [-0.07, -0.2, 0.5];
        let fast = traj.predict(&theta, &[0.1, -0.02]).unwrap();
        let sol = rk4_solve(&m, &theta, &[0.1, -0.02], traj.grid()).unwrap();
        let slow = sol.values_at(&times);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-13, "{a} {b}");
        }
    }
}
