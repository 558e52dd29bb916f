//! Linear ODE models and their quadratic roughness penalty.
//!
//! A model of order `p` reads
//!
//! ```text
//! D^p x(t) = sum_r beta_r(t | theta) D^r x(t) + sum_q alpha_q(t | theta) u_q(t)
//! ```
//!
//! with every coefficient function linear in its slice of `theta`. For a basis
//! expansion `x = sum_k c_k phi_k` the squared L2 norm of the equation residual
//! is `c'Rc + 2c'S + f_norm`, where
//!
//! ```text
//! R_kj   = int L phi_k * L phi_j
//! S_k    = int L phi_k * (-f)
//! f_norm = int f^2
//! L phi  = D^p phi - sum_r beta_r D^r phi,   f = sum_q alpha_q u_q.
//! ```

use nalgebra::{DMatrix, DVector};

use crate::basis::{BSplineBasis, QuadratureRule};
use crate::error::{check_len, Error, Result};

/// Functions spanning one coefficient function.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionBasis {
    /// The single constant function 1.
    Constant,
    BSpline(BSplineBasis),
}

impl FunctionBasis {
    pub fn len(&self) -> usize {
        match self {
            FunctionBasis::Constant => 1,
            FunctionBasis::BSpline(b) => b.num_basis(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values of every spanning function at `t`, taking the polynomial piece
    /// that is active on `[lo, hi]`.
    fn eval_on(&self, t: f64, lo: f64, hi: f64) -> Vec<f64> {
        match self {
            FunctionBasis::Constant => vec![1.0],
            FunctionBasis::BSpline(b) => {
                let span = b.span_of_interval(lo, hi);
                let mut out = vec![0.0; b.num_basis()];
                let first = span + 1 - b.order();
                for (j, v) in b.eval_derivs_on_span(t, span, 0)[0].iter().enumerate() {
                    out[first + j] = *v;
                }
                out
            }
        }
    }

    fn breaks(&self) -> Vec<f64> {
        match self {
            FunctionBasis::Constant => Vec::new(),
            FunctionBasis::BSpline(b) => b.knots().distinct_breaks(),
        }
    }
}

/// A known input `u(t)` stored as a B-spline with fixed coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct InputFunction {
    basis: BSplineBasis,
    coefs: Vec<f64>,
}

impl InputFunction {
    pub fn new(basis: BSplineBasis, coefs: Vec<f64>) -> Result<Self> {
        check_len("input function coefficients", basis.num_basis(), coefs.len())?;
        Ok(Self { basis, coefs })
    }

    /// Unit pulse on `[start, start + width]` as three order-one B-splines
    /// with coefficients `[0, 1, 0]`.
    pub fn unit_pulse(domain: (f64, f64), start: f64, width: f64) -> Result<Self> {
        let end = start + width;
        if !(width > 0.0) || start <= domain.0 || end >= domain.1 {
            return Err(Error::InvalidModel(format!(
                "pulse [{start}, {end}] must lie strictly inside the domain [{}, {}]",
                domain.0, domain.1
            )));
        }
        let basis = BSplineBasis::make(domain, &[(start, 1), (end, 1)], 1)?;
        Self::new(basis, vec![0.0, 1.0, 0.0])
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn coefs(&self) -> &[f64] {
        &self.coefs
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.basis.eval_spline(&self.coefs, t, 0)
    }

    fn eval_on(&self, t: f64, lo: f64, hi: f64) -> f64 {
        let span = self.basis.span_of_interval(lo, hi);
        self.basis.eval_spline_on_span(&self.coefs, t, span, 0)
    }
}

/// `beta_r(t | theta) = sum_j w_j psi_j(t)` weighting `D^r x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTerm {
    pub deriv_index: usize,
    pub basis: FunctionBasis,
    /// Frozen coefficients; `None` means the coefficients are estimated.
    pub fixed: Option<Vec<f64>>,
}

impl CoefficientTerm {
    pub fn constant(deriv_index: usize) -> Self {
        Self {
            deriv_index,
            basis: FunctionBasis::Constant,
            fixed: None,
        }
    }

    pub fn fixed_constant(deriv_index: usize, value: f64) -> Self {
        Self {
            deriv_index,
            basis: FunctionBasis::Constant,
            fixed: Some(vec![value]),
        }
    }
}

/// `alpha_q(t | theta) * u_q(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingTerm {
    pub gain_basis: FunctionBasis,
    pub fixed: Option<Vec<f64>>,
    pub input: InputFunction,
}

impl ForcingTerm {
    pub fn constant_gain(input: InputFunction) -> Self {
        Self {
            gain_basis: FunctionBasis::Constant,
            fixed: None,
            input,
        }
    }
}

/// Where a free parameter lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Coefficient { term: usize, index: usize },
    Forcing { term: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOdeModel {
    order: usize,
    coefficient_terms: Vec<CoefficientTerm>,
    forcing_terms: Vec<ForcingTerm>,
    domain: (f64, f64),
    layout: Vec<ParamSlot>,
}

impl LinearOdeModel {
    pub fn new(
        order: usize,
        coefficient_terms: Vec<CoefficientTerm>,
        forcing_terms: Vec<ForcingTerm>,
        domain: (f64, f64),
    ) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidModel("order must be >= 1".into()));
        }
        if !(domain.0 < domain.1) {
            return Err(Error::InvalidModel(format!("invalid domain {domain:?}")));
        }
        let mut seen = vec![false; order];
        for term in &coefficient_terms {
            if term.deriv_index >= order {
                return Err(Error::InvalidModel(format!(
                    "coefficient term on D^{} in an order-{order} equation",
                    term.deriv_index
                )));
            }
            if std::mem::replace(&mut seen[term.deriv_index], true) {
                return Err(Error::InvalidModel(format!(
                    "duplicate coefficient term on D^{}",
                    term.deriv_index
                )));
            }
            if let Some(f) = &term.fixed {
                check_len("fixed coefficient values", term.basis.len(), f.len())?;
            }
            check_domain_match(&term.basis, domain)?;
        }
        for term in &forcing_terms {
            if let Some(f) = &term.fixed {
                check_len("fixed forcing gains", term.gain_basis.len(), f.len())?;
            }
            check_domain_match(&term.gain_basis, domain)?;
            if term.input.basis().domain() != domain {
                return Err(Error::InvalidModel("input function domain differs from model".into()));
            }
        }

        let mut layout = Vec::new();
        for (ti, term) in coefficient_terms.iter().enumerate() {
            if term.fixed.is_none() {
                layout.extend((0..term.basis.len()).map(|index| ParamSlot::Coefficient { term: ti, index }));
            }
        }
        for (ti, term) in forcing_terms.iter().enumerate() {
            if term.fixed.is_none() {
                layout.extend((0..term.gain_basis.len()).map(|index| ParamSlot::Forcing { term: ti, index }));
            }
        }
        Ok(Self {
            order,
            coefficient_terms,
            forcing_terms,
            domain,
            layout,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn theta_dim(&self) -> usize {
        self.layout.len()
    }

    pub fn layout(&self) -> &[ParamSlot] {
        &self.layout
    }

    pub fn coefficient_terms(&self) -> &[CoefficientTerm] {
        &self.coefficient_terms
    }

    pub fn forcing_terms(&self) -> &[ForcingTerm] {
        &self.forcing_terms
    }

    /// Display names: `beta{r}` / `alpha{q}` with a `[j]` suffix for
    /// multi-function expansions; a single forcing term is just `alpha`.
    pub fn parameter_names(&self) -> Vec<String> {
        let single_forcing = self.forcing_terms.len() == 1;
        self.layout
            .iter()
            .map(|slot| match *slot {
                ParamSlot::Coefficient { term, index } => {
                    let t = &self.coefficient_terms[term];
                    if t.basis.len() == 1 {
                        format!("beta{}", t.deriv_index)
                    } else {
                        format!("beta{}[{index}]", t.deriv_index)
                    }
                }
                ParamSlot::Forcing { term, index } => {
                    let base = if single_forcing {
                        "alpha".to_string()
                    } else {
                        format!("alpha{}", term + 1)
                    };
                    if self.forcing_terms[term].gain_basis.len() == 1 {
                        base
                    } else {
                        format!("{base}[{index}]")
                    }
                }
            })
            .collect()
    }

    /// Discontinuities of inputs and coefficient functions, to be aligned with
    /// quadrature intervals and integration steps.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.coefficient_terms {
            out.extend(t.basis.breaks());
        }
        for f in &self.forcing_terms {
            out.extend(f.gain_basis.breaks());
            out.extend(f.input.basis().knots().distinct_breaks());
        }
        let (a, b) = self.domain;
        out.retain(|&t| t > a && t < b);
        out.sort_by(|x, y| x.total_cmp(y));
        out.dedup();
        out
    }

    fn term_weights<'a>(&self, fixed: &'a Option<Vec<f64>>, slot_of: impl Fn(&ParamSlot) -> bool, theta: &'a [f64]) -> Vec<f64> {
        match fixed {
            Some(v) => v.clone(),
            None => self
                .layout
                .iter()
                .zip(theta)
                .filter(|(s, _)| slot_of(s))
                .map(|(_, v)| *v)
                .collect(),
        }
    }

    /// `(beta_0..beta_{p-1}, f)` at `t` for parameters `theta`, using the
    /// polynomial pieces active on `[lo, hi]`. Missing terms are zero.
    pub fn ode_terms_on(&self, theta: &[f64], t: f64, lo: f64, hi: f64) -> (Vec<f64>, f64) {
        let mut betas = vec![0.0; self.order];
        for (ti, term) in self.coefficient_terms.iter().enumerate() {
            let w = self.term_weights(
                &term.fixed,
                |s| matches!(s, ParamSlot::Coefficient { term, .. } if *term == ti),
                theta,
            );
            let psi = term.basis.eval_on(t, lo, hi);
            betas[term.deriv_index] = psi.iter().zip(&w).map(|(a, b)| a * b).sum();
        }
        let mut forcing = 0.0;
        for (ti, term) in self.forcing_terms.iter().enumerate() {
            let w = self.term_weights(
                &term.fixed,
                |s| matches!(s, ParamSlot::Forcing { term, .. } if *term == ti),
                theta,
            );
            let psi = term.gain_basis.eval_on(t, lo, hi);
            let gain: f64 = psi.iter().zip(&w).map(|(a, b)| a * b).sum();
            forcing += gain * term.input.eval_on(t, lo, hi);
        }
        (betas, forcing)
    }

    /// The forcing inputs `u_q`.
    pub fn inputs(&self) -> impl Iterator<Item = &InputFunction> {
        self.forcing_terms.iter().map(|f| &f.input)
    }
}

fn check_domain_match(basis: &FunctionBasis, domain: (f64, f64)) -> Result<()> {
    if let FunctionBasis::BSpline(b) = basis {
        if b.domain() != domain {
            return Err(Error::InvalidModel("coefficient basis domain differs from model".into()));
        }
    }
    Ok(())
}

/// Second-order model `D^2 x = beta0 x + beta1 Dx + alpha u` with a unit-pulse
/// input on `[impact_time, impact_time + pulse_width]`. Parameters are ordered
/// `(beta0, beta1, alpha)`.
pub fn head_impact_model(domain: (f64, f64), impact_time: f64, pulse_width: f64) -> Result<LinearOdeModel> {
    let pulse = InputFunction::unit_pulse(domain, impact_time, pulse_width)?;
    LinearOdeModel::new(
        2,
        vec![CoefficientTerm::constant(0), CoefficientTerm::constant(1)],
        vec![ForcingTerm::constant_gain(pulse)],
        domain,
    )
}

/// Penalty pieces for one `theta`.
#[derive(Debug, Clone)]
pub struct PenaltyMatrices {
    pub r: DMatrix<f64>,
    pub s: DVector<f64>,
    pub f_norm: f64,
    pub dr: Vec<DMatrix<f64>>,
    pub ds: Vec<DVector<f64>>,
    pub df_norm: Vec<f64>,
}

/// `c'Rc + 2c'S + f_norm`.
pub fn penalty_value(pm: &PenaltyMatrices, c: &DVector<f64>) -> Result<f64> {
    check_len("coefficient vector", pm.r.nrows(), c.len())?;
    Ok((c.transpose() * &pm.r * c)[(0, 0)] + 2.0 * c.dot(&pm.s) + pm.f_norm)
}

/// Precomputed, `theta`-independent pieces of the penalty.
///
/// The residual operator at the quadrature nodes is affine in `theta`:
/// `G(theta) = G_0 + sum_j theta_j G_j` and `f(theta) = f_0 + sum_j theta_j f_j`.
/// Every penalty quantity is then a quadratic form in `(1, theta)` over the
/// weighted cross products of these pieces, stored here once.
#[derive(Debug, Clone)]
pub struct PenaltyAssembler {
    k: usize,
    n_theta: usize,
    /// `gram[a][b] = G_a' W G_b + G_b' W G_a`, index 0 is the constant piece.
    gram: Vec<Vec<DMatrix<f64>>>,
    /// `cross[a][b] = G_a' W f_b + G_b' W f_a`.
    cross: Vec<Vec<DVector<f64>>>,
    /// `fprod[a][b] = 2 f_a' W f_b`.
    fprod: DMatrix<f64>,
}

fn add_scaled(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

impl PenaltyAssembler {
    pub fn new(model: &LinearOdeModel, basis: &BSplineBasis, quad: &QuadratureRule) -> Result<Self> {
        let p = model.order();
        if basis.order() <= p {
            return Err(Error::InvalidModel(format!(
                "basis order {} must exceed the equation order {p}",
                basis.order()
            )));
        }
        if basis.domain() != model.domain() {
            return Err(Error::InvalidModel(format!(
                "basis domain {:?} differs from model domain {:?}",
                basis.domain(),
                model.domain()
            )));
        }
        let k = basis.num_basis();
        let nq = quad.len();
        let n_theta = model.theta_dim();

        // D^d phi at every node, d = 0..=p
        let mut derivs: Vec<DMatrix<f64>> = (0..=p).map(|_| DMatrix::zeros(nq, k)).collect();
        for (n, &t) in quad.nodes.iter().enumerate() {
            let (first, vals) = basis.eval_local(t, p);
            for (d, row) in vals.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    derivs[d][(n, first + j)] = *v;
                }
            }
        }

        let mut g: Vec<DMatrix<f64>> = (0..=n_theta).map(|_| DMatrix::zeros(nq, k)).collect();
        let mut f: Vec<DVector<f64>> = (0..=n_theta).map(|_| DVector::zeros(nq)).collect();
        g[0].copy_from(&derivs[p]);

        for n in 0..nq {
            let t = quad.nodes[n];
            let (lo, hi) = quad.interval_of_node(n);
            for (ti, term) in model.coefficient_terms().iter().enumerate() {
                let psi = term.basis.eval_on(t, lo, hi);
                let dr = &derivs[term.deriv_index];
                match &term.fixed {
                    Some(w) => {
                        let beta: f64 = psi.iter().zip(w).map(|(a, b)| a * b).sum();
                        for col in 0..k {
                            g[0][(n, col)] -= beta * dr[(n, col)];
                        }
                    }
                    None => {
                        for (j, slot) in model.layout().iter().enumerate() {
                            if let ParamSlot::Coefficient { term, index } = *slot {
                                if term == ti {
                                    for col in 0..k {
                                        g[j + 1][(n, col)] = -psi[index] * dr[(n, col)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for (ti, term) in model.forcing_terms().iter().enumerate() {
                let psi = term.gain_basis.eval_on(t, lo, hi);
                let u = term.input.eval_on(t, lo, hi);
                match &term.fixed {
                    Some(w) => {
                        let gain: f64 = psi.iter().zip(w).map(|(a, b)| a * b).sum();
                        f[0][n] += gain * u;
                    }
                    None => {
                        for (j, slot) in model.layout().iter().enumerate() {
                            if let ParamSlot::Forcing { term, index } = *slot {
                                if term == ti {
                                    f[j + 1][n] = psi[index] * u;
                                }
                            }
                        }
                    }
                }
            }
        }

        let w = DVector::from_column_slice(&quad.weights);
        let wg: Vec<DMatrix<f64>> = g
            .iter()
            .map(|ga| {
                let mut m = ga.clone();
                for (mut row, wn) in m.row_iter_mut().zip(w.iter()) {
                    row *= *wn;
                }
                m
            })
            .collect();
        let wf: Vec<DVector<f64>> = f.iter().map(|fa| fa.component_mul(&w)).collect();

        let half: Vec<Vec<DMatrix<f64>>> = (0..=n_theta)
            .map(|a| (0..=n_theta).map(|b| g[a].transpose() * &wg[b]).collect())
            .collect();
        let gram = (0..=n_theta)
            .map(|a| {
                (0..=n_theta)
                    .map(|b| {
                        let m = &half[a][b] + &half[b][a];
                        0.5 * (&m + m.transpose())
                    })
                    .collect()
            })
            .collect();
        let cross = (0..=n_theta)
            .map(|a| {
                (0..=n_theta)
                    .map(|b| g[a].transpose() * &wf[b] + g[b].transpose() * &wf[a])
                    .collect()
            })
            .collect();
        let fprod = DMatrix::from_fn(n_theta + 1, n_theta + 1, |a, b| f[a].dot(&wf[b]) + f[b].dot(&wf[a]));

        Ok(Self {
            k,
            n_theta,
            gram,
            cross,
            fprod,
        })
    }

    pub fn num_basis(&self) -> usize {
        self.k
    }

    pub fn theta_dim(&self) -> usize {
        self.n_theta
    }

    fn extended(theta: &[f64]) -> Vec<f64> {
        std::iter::once(1.0).chain(theta.iter().copied()).collect()
    }

    pub fn assemble(&self, theta: &[f64]) -> Result<PenaltyMatrices> {
        let mut pm = self.assemble_value(theta)?;
        let z = Self::extended(theta);
        let m = self.n_theta + 1;
        for j in 1..m {
            let mut drj = DMatrix::zeros(self.k, self.k);
            let mut dsj = DVector::zeros(self.k);
            let mut dfj = 0.0;
            for b in 0..m {
                if z[b] != 0.0 {
                    add_scaled(drj.as_mut_slice(), self.gram[j][b].as_slice(), z[b]);
                    add_scaled(dsj.as_mut_slice(), self.cross[j][b].as_slice(), -z[b]);
                    dfj += z[b] * self.fprod[(j, b)];
                }
            }
            pm.dr.push(drj);
            pm.ds.push(dsj);
            pm.df_norm.push(dfj);
        }
        Ok(pm)
    }

    /// `R`, `S` and `f_norm` only; the derivative fields are left empty.
    pub fn assemble_value(&self, theta: &[f64]) -> Result<PenaltyMatrices> {
        check_len("theta", self.n_theta, theta.len())?;
        let z = Self::extended(theta);
        let m = self.n_theta + 1;
        let mut r = DMatrix::zeros(self.k, self.k);
        let mut s = DVector::zeros(self.k);
        let mut f_norm = 0.0;
        for a in 0..m {
            for b in a..m {
                // diagonal blocks are stored doubled
                let zz = if a == b { 0.5 * z[a] * z[a] } else { z[a] * z[b] };
                if zz != 0.0 {
                    add_scaled(r.as_mut_slice(), self.gram[a][b].as_slice(), zz);
                    add_scaled(s.as_mut_slice(), self.cross[a][b].as_slice(), -zz);
                    f_norm += zz * self.fprod[(a, b)];
                }
            }
        }
        Ok(PenaltyMatrices {
            r,
            s,
            f_norm,
            dr: Vec::with_capacity(self.n_theta),
            ds: Vec::with_capacity(self.n_theta),
            df_norm: Vec::with_capacity(self.n_theta),
        })
    }

    /// `d^2 R / d theta_j d theta_k`, constant in `theta`.
    pub fn d2r(&self, j: usize, k: usize) -> DMatrix<f64> {
        self.gram[j + 1][k + 1].clone()
    }

    /// `d^2 S / d theta_j d theta_k`, constant in `theta`.
    pub fn d2s(&self, j: usize, k: usize) -> DVector<f64> {
        -&self.cross[j + 1][k + 1]
    }
}

/// One-shot assembly of `R`, `S`, `f_norm` and their `theta` derivatives.
pub fn assemble_penalty(
    model: &LinearOdeModel,
    basis: &BSplineBasis,
    theta: &[f64],
    quad: &QuadratureRule,
) -> Result<PenaltyMatrices> {
    check_len("theta", model.theta_dim(), theta.len())?;
    PenaltyAssembler::new(model, basis, quad)?.assemble(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_quadrature;
    use approx::assert_relative_eq;

    fn head_setup() -> (LinearOdeModel, BSplineBasis, QuadratureRule) {
        let model = head_impact_model((0.0, 56.0), 14.0, 1.0).unwrap();
        let basis = BSplineBasis::impulse_response((0.0, 56.0), 14.0, 1.0, 11, 5).unwrap();
        let quad = QuadratureRule::for_basis(&basis, &model.breakpoints(), 5).unwrap();
        (model, basis, quad)
    }

    #[test]
    fn pulse_layout() {
        let model = head_impact_model((0.0, 56.0), 14.0, 1.0).unwrap();
        let u = &model.forcing_terms()[0].input;
        assert_eq!(u.basis().flat_knots(), &[0.0, 14.0, 15.0, 56.0]);
        assert_eq!(u.coefs(), &[0.0, 1.0, 0.0]);
        assert_eq!(u.eval(14.5), 1.0);
        assert_eq!(u.eval(10.0), 0.0);
        assert_eq!(u.eval(20.0), 0.0);
        assert_eq!(model.theta_dim(), 3);
        assert_eq!(model.parameter_names(), vec!["beta0", "beta1", "alpha"]);
        assert_eq!(model.breakpoints(), vec![14.0, 15.0]);
    }

    #[test]
    fn pulse_outside_domain_is_rejected() {
        assert!(head_impact_model((0.0, 56.0), 55.5, 1.0).is_err());
        assert!(head_impact_model((0.0, 56.0), -1.0, 1.0).is_err());
    }

    #[test]
    fn zero_theta_first_order_gives_derivative_gram() {
        let basis = BSplineBasis::make((0.0, 2.0), &[(0.5, 1), (1.2, 1)], 3).unwrap();
        let model = LinearOdeModel::new(1, vec![CoefficientTerm::constant(0)], vec![], (0.0, 2.0)).unwrap();
        let quad = make_quadrature(&basis, 5).unwrap();
        let pm = assemble_penalty(&model, &basis, &[0.0], &quad).unwrap();
        let d = basis.eval_matrix(&quad.nodes, 1).unwrap();
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&quad.weights));
        let gram = d.transpose() * w * &d;
        assert!((&pm.r - gram).amax() < 1e-12);
        assert_eq!(pm.s.amax(), 0.0);
        assert_eq!(pm.f_norm, 0.0);
    }

    #[test]
    fn penalty_value_trivial_cases() {
        let (model, basis, quad) = head_setup();
        let pm = assemble_penalty(&model, &basis, &[-0.05, -0.15, 0.39], &quad).unwrap();
        let zero = DVector::zeros(basis.num_basis());
        assert_relative_eq!(penalty_value(&pm, &zero).unwrap(), pm.f_norm);
        // int (0.39 * u)^2 over a unit pulse
        assert_relative_eq!(pm.f_norm, 0.39 * 0.39, max_relative = 1e-12);
        assert!(penalty_value(&pm, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn penalty_matches_direct_quadrature() {
        let (model, basis, quad) = head_setup();
        let theta = [-0.07, 0.2, 0.5];
        let pm = assemble_penalty(&model, &basis, &theta, &quad).unwrap();
        let c = DVector::from_fn(basis.num_basis(), |i, _| ((i * 37 % 11) as f64 - 5.0) * 0.3);
        let direct = quad.integrate(|t| {
            let x = basis.eval_spline(c.as_slice(), t, 0);
            let dx = basis.eval_spline(c.as_slice(), t, 1);
            let d2x = basis.eval_spline(c.as_slice(), t, 2);
            let u = model.forcing_terms()[0].input.eval(t);
            let res = d2x - theta[0] * x - theta[1] * dx - theta[2] * u;
            res * res
        });
        assert_relative_eq!(penalty_value(&pm, &c).unwrap(), direct, max_relative = 1e-10);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let (model, basis, quad) = head_setup();
        let asm = PenaltyAssembler::new(&model, &basis, &quad).unwrap();
        let theta = [-0.04, -0.2, 0.35];
        let pm = asm.assemble(&theta).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut tp = theta;
            let mut tm = theta;
            tp[j] += h;
            tm[j] -= h;
            let (pp, pmm) = (asm.assemble(&tp).unwrap(), asm.assemble(&tm).unwrap());
            let fd_r = (&pp.r - &pmm.r) / (2.0 * h);
            let fd_s = (&pp.s - &pmm.s) / (2.0 * h);
            let fd_f = (pp.f_norm - pmm.f_norm) / (2.0 * h);
            let scale_r = pm.dr[j].amax().max(1e-12);
            assert!((&fd_r - &pm.dr[j]).amax() / scale_r < 1e-6, "dR {j}");
            if pm.ds[j].amax() > 0.0 {
                assert!((&fd_s - &pm.ds[j]).amax() / pm.ds[j].amax() < 1e-6, "dS {j}");
            }
            assert!((fd_f - pm.df_norm[j]).abs() <= 1e-6 * pm.df_norm[j].abs().max(1e-12));
            assert!((&pm.dr[j] - pm.dr[j].transpose()).amax() == 0.0);
        }
    }

    #[test]
    fn fixed_terms_shift_parameters() {
        let pulse = InputFunction::unit_pulse((0.0, 56.0), 14.0, 1.0).unwrap();
        let model = LinearOdeModel::new(
            2,
            vec![CoefficientTerm::constant(0), CoefficientTerm::fixed_constant(1, -0.15)],
            vec![ForcingTerm::constant_gain(pulse)],
            (0.0, 56.0),
        )
        .unwrap();
        assert_eq!(model.theta_dim(), 2);
        let (full, basis, quad) = head_setup();
        let a = assemble_penalty(&model, &basis, &[-0.05, 0.39], &quad).unwrap();
        let b = assemble_penalty(&full, &basis, &[-0.05, -0.15, 0.39], &quad).unwrap();
        assert!((&a.r - &b.r).amax() < 1e-12 * b.r.amax());
        assert!((&a.s - &b.s).amax() < 1e-12 * b.s.amax());
        assert_eq!(a.dr.len(), 2);
    }

    #[test]
    fn rejects_low_order_basis() {
        let (model, _, _) = head_setup();
        let basis = BSplineBasis::make((0.0, 56.0), &[(20.0, 1)], 2).unwrap();
        let quad = make_quadrature(&basis, 3).unwrap();
        assert!(assemble_penalty(&model, &basis, &[0.0; 3], &quad).is_err());
        let (_, basis, quad) = head_setup();
        assert!(assemble_penalty(&model, &basis, &[0.0; 2], &quad).is_err());
    }
}
