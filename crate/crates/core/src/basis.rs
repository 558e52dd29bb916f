//! B-spline bases over a clamped knot vector, plus the composite Gauss–Legendre
//! rule used for every penalty integral.
//!
//! Knots are stored as `(breakpoint, multiplicity)` pairs. The boundary knots
//! always carry multiplicity equal to the order. Evaluation at the right end of
//! the domain takes the left limit, so no row of an evaluation matrix is zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An interior breakpoint with its knot multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub time: f64,
    pub multiplicity: usize,
}

impl Breakpoint {
    pub fn new(time: f64, multiplicity: usize) -> Self {
        Self { time, multiplicity }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    domain_start: f64,
    domain_end: f64,
    interior: Vec<Breakpoint>,
    order: usize,
}

impl KnotVector {
    pub fn new(domain: (f64, f64), interior: &[Breakpoint], order: usize) -> Result<Self> {
        let (start, end) = domain;
        if order < 1 {
            return Err(Error::InvalidBasis(format!("order must be >= 1, got {order}")));
        }
        if !(start.is_finite() && end.is_finite()) || start >= end {
            return Err(Error::InvalidBasis(format!(
                "domain [{start}, {end}] must be finite with start < end"
            )));
        }
        let mut prev = start;
        for b in interior {
            if !b.time.is_finite() || b.time <= start || b.time >= end {
                return Err(Error::InvalidBasis(format!(
                    "breakpoint {} is not strictly inside ({start}, {end})",
                    b.time
                )));
            }
            if b.time <= prev {
                return Err(Error::InvalidBasis(format!(
                    "breakpoints must be strictly increasing; {} follows {prev}",
                    b.time
                )));
            }
            if b.multiplicity < 1 || b.multiplicity > order {
                return Err(Error::InvalidBasis(format!(
                    "multiplicity {} at {} must lie in 1..={order}",
                    b.multiplicity, b.time
                )));
            }
            prev = b.time;
        }
        Ok(Self {
            domain_start: start,
            domain_end: end,
            interior: interior.to_vec(),
            order,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain_start, self.domain_end)
    }

    pub fn interior(&self) -> &[Breakpoint] {
        &self.interior
    }

    /// Flat knot sequence with boundary knots repeated `order` times.
    pub fn flatten(&self) -> Vec<f64> {
        let mut knots = vec![self.domain_start; self.order];
        for b in &self.interior {
            knots.extend(std::iter::repeat_n(b.time, b.multiplicity));
        }
        knots.extend(std::iter::repeat_n(self.domain_end, self.order));
        knots
    }

    /// Distinct breakpoints including both domain ends.
    pub fn distinct_breaks(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.interior.len() + 2);
        out.push(self.domain_start);
        out.extend(self.interior.iter().map(|b| b.time));
        out.push(self.domain_end);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: KnotVector,
    order: usize,
    flat: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(knots: KnotVector) -> Self {
        let flat = knots.flatten();
        let order = knots.order;
        Self { knots, order, flat }
    }

    /// Basis of the given order with `(time, multiplicity)` interior breaks.
    pub fn make(domain: (f64, f64), interior_breaks: &[(f64, usize)], order: usize) -> Result<Self> {
        let breaks: Vec<Breakpoint> = interior_breaks
            .iter()
            .map(|&(t, m)| Breakpoint::new(t, m))
            .collect();
        Ok(Self::new(KnotVector::new(domain, &breaks, order)?))
    }

    /// Single knots at the `n_data - 2` interior points of an equispaced grid,
    /// which gives `K = n_data + order - 2` functions.
    pub fn equispaced_for_data(domain: (f64, f64), n_data: usize, order: usize) -> Result<Self> {
        if n_data < 2 {
            return Err(Error::InvalidBasis("need at least two data points".into()));
        }
        let (a, b) = domain;
        let step = (b - a) / (n_data - 1) as f64;
        let breaks: Vec<(f64, usize)> = (1..n_data - 1).map(|i| (a + step * i as f64, 1)).collect();
        Self::make(domain, &breaks, order)
    }

    /// Knot layout for an impulse-driven response: no knots before the impulse,
    /// knots of multiplicity `order - 2` at both impulse edges (so the second
    /// derivative may jump there), and `n_after` equispaced single knots
    /// between the end of the impulse and the end of the domain.
    pub fn impulse_response(
        domain: (f64, f64),
        impact_time: f64,
        pulse_width: f64,
        n_after: usize,
        order: usize,
    ) -> Result<Self> {
        if order < 3 {
            return Err(Error::InvalidBasis(format!(
                "impulse-response layout needs order >= 3, got {order}"
            )));
        }
        let edge_mult = order - 2;
        let pulse_end = impact_time + pulse_width;
        let mut breaks = vec![(impact_time, edge_mult), (pulse_end, edge_mult)];
        let gap = (domain.1 - pulse_end) / (n_after + 1) as f64;
        breaks.extend((1..=n_after).map(|i| (pulse_end + gap * i as f64, 1)));
        Self::make(domain, &breaks, order)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_basis(&self) -> usize {
        self.flat.len() - self.order
    }

    pub fn domain(&self) -> (f64, f64) {
        self.knots.domain()
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn flat_knots(&self) -> &[f64] {
        &self.flat
    }

    fn check_in_domain(&self, t: f64) -> Result<()> {
        let (a, b) = self.domain();
        let slack = 1e-12 * (b - a);
        if !(t >= a - slack && t <= b + slack) {
            return Err(Error::OutsideDomain { t, start: a, end: b });
        }
        Ok(())
    }

    /// Index `mu` with `flat[mu] <= t < flat[mu + 1]`; the last non-empty span
    /// at the right end of the domain.
    pub fn find_span(&self, t: f64) -> usize {
        let deg = self.order - 1;
        let n = self.num_basis();
        if t >= self.flat[n] {
            return n - 1;
        }
        if t <= self.flat[deg] {
            return deg;
        }
        // first index with flat[idx] > t, minus one
        let idx = self.flat[deg..=n].partition_point(|&k| k <= t) + deg;
        idx - 1
    }

    /// Span containing the midpoint of `[lo, hi]`, used to select the
    /// polynomial piece active on an integration step.
    pub fn span_of_interval(&self, lo: f64, hi: f64) -> usize {
        self.find_span(0.5 * (lo + hi))
    }

    /// All derivatives `0..=max_deriv` of the `order` functions that are
    /// nonzero on `span`, evaluated at `t` using that span's polynomial piece.
    /// Row `d` holds `D^d phi_{span - order + 1 + j}` for `j in 0..order`.
    pub fn eval_derivs_on_span(&self, t: f64, span: usize, max_deriv: usize) -> Vec<Vec<f64>> {
        let p = self.order - 1;
        let u = &self.flat;
        let mut ders = vec![vec![0.0; p + 1]; max_deriv + 1];
        let n = max_deriv.min(p);

        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }

        // knot-difference recurrence for the derivatives
        let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    let rk = rk as usize;
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                    d = a[s2][0] * ndu[rk][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=n {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Derivatives `0..=max_deriv` of the nonzero functions at `t`, with the
    /// index of the first of them.
    pub fn eval_local(&self, t: f64, max_deriv: usize) -> (usize, Vec<Vec<f64>>) {
        let span = self.find_span(t);
        (span + 1 - self.order, self.eval_derivs_on_span(t, span, max_deriv))
    }

    /// `#times x K` matrix of `D^deriv phi_k(t_i)`.
    pub fn eval_matrix(&self, times: &[f64], deriv: usize) -> Result<DMatrix<f64>> {
        let k = self.num_basis();
        let mut out = DMatrix::zeros(times.len(), k);
        for (i, &t) in times.iter().enumerate() {
            self.check_in_domain(t)?;
            let (first, ders) = self.eval_local(t, deriv);
            for (j, v) in ders[deriv].iter().enumerate() {
                out[(i, first + j)] = *v;
            }
        }
        Ok(out)
    }

    /// Value of the spline with coefficients `coefs` at `t`.
    pub fn eval_spline(&self, coefs: &[f64], t: f64, deriv: usize) -> f64 {
        let span = self.find_span(t);
        self.eval_spline_on_span(coefs, t, span, deriv)
    }

    pub fn eval_spline_on_span(&self, coefs: &[f64], t: f64, span: usize, deriv: usize) -> f64 {
        let first = span + 1 - self.order;
        let ders = self.eval_derivs_on_span(t, span, deriv);
        ders[deriv]
            .iter()
            .zip(&coefs[first..first + self.order])
            .map(|(b, c)| b * c)
            .sum()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess, refined by Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre rule over a partition of the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `(lo, hi)` of each interval; nodes of interval `i` are
    /// `nodes[i * per_interval..(i + 1) * per_interval]`.
    pub intervals: Vec<(f64, f64)>,
    pub per_interval: usize,
}

impl QuadratureRule {
    /// Rule on the partition given by sorted `breaks` (domain ends included).
    pub fn on_partition(breaks: &[f64], nodes_per_interval: usize) -> Result<Self> {
        if nodes_per_interval < 1 {
            return Err(Error::InvalidBasis("nodes_per_interval must be >= 1".into()));
        }
        if breaks.len() < 2 {
            return Err(Error::InvalidBasis("partition needs at least two points".into()));
        }
        let (gx, gw) = gauss_legendre(nodes_per_interval);
        let mut nodes = Vec::with_capacity((breaks.len() - 1) * nodes_per_interval);
        let mut weights = Vec::with_capacity(nodes.capacity());
        let mut intervals = Vec::with_capacity(breaks.len() - 1);
        for w in breaks.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if !(hi > lo) {
                return Err(Error::InvalidBasis(format!(
                    "degenerate quadrature interval [{lo}, {hi}]"
                )));
            }
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (x, wt) in gx.iter().zip(&gw) {
                nodes.push(mid + half * x);
                weights.push(half * wt);
            }
            intervals.push((lo, hi));
        }
        Ok(Self {
            nodes,
            weights,
            intervals,
            per_interval: nodes_per_interval,
        })
    }

    /// Rule over the basis breakpoints merged with `extra_breaks` (for
    /// instance the discontinuities of a forcing function).
    pub fn for_basis(basis: &BSplineBasis, extra_breaks: &[f64], nodes_per_interval: usize) -> Result<Self> {
        let (a, b) = basis.domain();
        let mut breaks = basis.knots().distinct_breaks();
        for &t in extra_breaks {
            if t > a && t < b {
                breaks.push(t);
            }
        }
        breaks.sort_by(|x, y| x.total_cmp(y));
        breaks.dedup();
        Self::on_partition(&breaks, nodes_per_interval)
    }

    /// Interval index and midpoint-selected span lookups happen per node; this
    /// returns the interval each node belongs to.
    pub fn interval_of_node(&self, node: usize) -> (f64, f64) {
        self.intervals[node / self.per_interval]
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Knot placement for a fitted basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotLayout {
    /// See [`BSplineBasis::impulse_response`].
    ImpulseResponse,
    /// Equispaced single knots over the whole domain.
    Equispaced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisRecipe {
    pub order: usize,
    pub layout: KnotLayout,
    /// Single knots after the pulse, or over the domain for `equispaced`.
    pub interior_knots: usize,
}

impl Default for BasisRecipe {
    fn default() -> Self {
        Self {
            order: 5,
            layout: KnotLayout::ImpulseResponse,
            interior_knots: 11,
        }
    }
}

impl BasisRecipe {
    pub fn build(&self, domain: (f64, f64), impact_time: f64, pulse_width: f64) -> Result<BSplineBasis> {
        match self.layout {
            KnotLayout::ImpulseResponse => {
                BSplineBasis::impulse_response(domain, impact_time, pulse_width, self.interior_knots, self.order)
            }
            KnotLayout::Equispaced => {
                let (a, b) = domain;
                let n = self.interior_knots;
                let breaks: Vec<(f64, usize)> =
                    (1..=n).map(|i| (a + (b - a) * i as f64 / (n + 1) as f64, 1)).collect();
                BSplineBasis::make(domain, &breaks, self.order)
            }
        }
    }
}

/// Default node count per interval: `max(order, 5)`.
pub fn default_nodes_per_interval(basis: &BSplineBasis) -> usize {
    basis.order().max(5)
}

/// Quadrature on the basis breakpoints with the default node count.
pub fn make_quadrature(basis: &BSplineBasis, nodes_per_interval: usize) -> Result<QuadratureRule> {
    QuadratureRule::for_basis(basis, &[], nodes_per_interval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Plain Cox–de Boor recursion, independent of the span-based code.
    fn cox_de_boor(knots: &[f64], i: usize, k: usize, t: f64, right_end: f64) -> f64 {
        if k == 1 {
            let inside = knots[i] <= t && t < knots[i + 1];
            let at_end = t == right_end && knots[i + 1] == right_end && knots[i] < knots[i + 1];
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + k - 1] - knots[i];
        if d1 > 0.0 {
            v += (t - knots[i]) / d1 * cox_de_boor(knots, i, k - 1, t, right_end);
        }
        let d2 = knots[i + k] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + k] - t) / d2 * cox_de_boor(knots, i + 1, k - 1, t, right_end);
        }
        v
    }

    fn head_basis() -> BSplineBasis {
        BSplineBasis::impulse_response((0.0, 56.0), 14.0, 1.0, 11, 5).unwrap()
    }

    #[test]
    fn single_interval_cubic_has_four_functions() {
        let b = BSplineBasis::make((0.0, 1.0), &[], 4).unwrap();
        assert_eq!(b.num_basis(), 4);
    }

    #[test]
    fn head_impact_layout() {
        let b = head_basis();
        // 5 + 3 + 3 + 11 + 5 knots
        assert_eq!(b.flat_knots().len(), 27);
        assert_eq!(b.num_basis(), 22);
        let interior = b.knots().interior();
        assert_eq!(interior[0], Breakpoint::new(14.0, 3));
        assert_eq!(interior[1], Breakpoint::new(15.0, 3));
        assert_eq!(interior.len(), 13);
        let gap = 41.0 / 12.0;
        for (i, bp) in interior[2..].iter().enumerate() {
            assert_relative_eq!(bp.time, 15.0 + gap * (i + 1) as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn equispaced_rule_gives_n_plus_order_minus_two() {
        let b = BSplineBasis::equispaced_for_data((0.0, 60.0), 101, 5).unwrap();
        assert_eq!(b.num_basis(), 104);
    }

    #[test]
    fn construction_errors() {
        assert!(BSplineBasis::make((0.0, 1.0), &[], 0).is_err());
        assert!(BSplineBasis::make((0.0, 1.0), &[(0.6, 1), (0.3, 1)], 3).is_err());
        assert!(BSplineBasis::make((0.0, 1.0), &[(0.5, 4)], 3).is_err());
        assert!(BSplineBasis::make((0.0, 1.0), &[(1.5, 1)], 3).is_err());
    }

    #[test]
    fn matches_cox_de_boor() {
        let b = head_basis();
        let knots = b.flat_knots().to_vec();
        for &t in &[0.0, 3.3, 14.0, 14.2, 15.0, 20.7, 55.9, 56.0] {
            let row = b.eval_matrix(&[t], 0).unwrap();
            for k in 0..b.num_basis() {
                let expect = cox_de_boor(&knots, k, 5, t, 56.0);
                assert!((row[(0, k)] - expect).abs() < 1e-13, "t={t} k={k}");
            }
        }
    }

    #[test]
    fn derivative_of_order_vanishes() {
        let b = head_basis();
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 56.0 / 49.0).collect();
        let m = b.eval_matrix(&times, 5).unwrap();
        assert!(m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn first_derivative_matches_finite_difference() {
        let b = head_basis();
        let h = 1e-6;
        for &t in &[2.0, 14.5, 17.3, 40.1] {
            let d = b.eval_matrix(&[t], 1).unwrap();
            let p = b.eval_matrix(&[t + h], 0).unwrap();
            let m = b.eval_matrix(&[t - h], 0).unwrap();
            let scale = d.amax().max(1e-3);
            for k in 0..b.num_basis() {
                let fd = (p[(0, k)] - m[(0, k)]) / (2.0 * h);
                assert!((fd - d[(0, k)]).abs() < 1e-5 * scale, "t={t} k={k}");
            }
        }
    }

    #[test]
    fn rows_have_at_most_order_nonzeros() {
        let b = head_basis();
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 56.0 / 199.0).collect();
        let m = b.eval_matrix(&times, 0).unwrap();
        for i in 0..times.len() {
            assert!(m.row(i).iter().filter(|v| **v != 0.0).count() <= 5);
        }
    }

    #[test]
    fn outside_domain_is_rejected() {
        let b = head_basis();
        assert!(matches!(b.eval_matrix(&[56.5], 0), Err(Error::OutsideDomain { .. })));
        assert!(b.eval_matrix(&[-0.1], 0).is_err());
    }

    #[test]
    fn triple_knot_breaks_second_derivative_only() {
        let b = head_basis();
        let coefs: Vec<f64> = (0..b.num_basis()).map(|k| ((k * 7 + 3) % 5) as f64 - 2.0).collect();
        let eps = 1e-9;
        let d1_jump = b.eval_spline(&coefs, 14.0 + eps, 1) - b.eval_spline(&coefs, 14.0 - eps, 1);
        let d2_jump = b.eval_spline(&coefs, 14.0 + eps, 2) - b.eval_spline(&coefs, 14.0 - eps, 2);
        assert!(d1_jump.abs() < 1e-6);
        assert!(d2_jump.abs() > 1e-3);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            // exact for degree 2n - 1
            let deg = 2 * n - 2;
            let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert_relative_eq!(integral, 2.0 / (deg as f64 + 1.0), epsilon = 1e-13);
        }
    }

    #[test]
    fn quadrature_weights_sum_to_domain_length() {
        let b = head_basis();
        let q = make_quadrature(&b, default_nodes_per_interval(&b)).unwrap();
        assert_relative_eq!(q.integrate(|_| 1.0), 56.0, max_relative = 1e-12);
        for (i, &t) in q.nodes.iter().enumerate() {
            let (lo, hi) = q.interval_of_node(i);
            assert!(t > lo && t < hi);
        }
    }

    #[test]
    fn piecewise_linear_gram_entries() {
        // hat functions on [0, 1] with a break at 0.5: closed forms are
        // h/3 on the diagonal (h/3 + h/3 for the middle hat) and h/6 off it
        let b = BSplineBasis::make((0.0, 1.0), &[(0.5, 1)], 2).unwrap();
        let q = make_quadrature(&b, 2).unwrap();
        let phi = b.eval_matrix(&q.nodes, 0).unwrap();
        let gram = |i: usize, j: usize| -> f64 {
            (0..q.len()).map(|n| q.weights[n] * phi[(n, i)] * phi[(n, j)]).sum()
        };
        let h = 0.5;
        assert_relative_eq!(gram(0, 0), h / 3.0, epsilon = 1e-14);
        assert_relative_eq!(gram(1, 1), 2.0 * h / 3.0, epsilon = 1e-14);
        assert_relative_eq!(gram(0, 1), h / 6.0, epsilon = 1e-14);
        assert_relative_eq!(gram(0, 2), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gram_saturates_at_exactness() {
        let b = head_basis();
        let gram = |npi: usize| {
            let q = make_quadrature(&b, npi).unwrap();
            let phi = b.eval_matrix(&q.nodes, 0).unwrap();
            let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(q.weights.clone()));
            phi.transpose() * w * &phi
        };
        let diff = (gram(7) - gram(9)).amax();
        assert!(diff < 1e-12, "{diff}");
    }
}
