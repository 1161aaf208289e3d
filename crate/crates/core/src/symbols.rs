//! Weighted symbol classes `S^m_ρ`.
//!
//! A [`SymbolField`] is a smooth complex field together with the class it is
//! *declared* to belong to: a weight `m` and a decay exponent `ρ`. Membership
//! is checked on grids through the seminorms
//! `C_α = sup |∂^α a| / (m λ^{-ρ|α|})`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr, VarSpace};
use crate::grid::GridSpec;
use crate::jet::{ComplexJet, Jet, JetSpace};
use crate::weights::{bracket, weight_product, LambdaConvention, WeightSpec};

/// Highest derivative order available without an expression (finite
/// differences).
pub const FD_MAX_ORDER: usize = 4;

/// Highest derivative order requested from expression-backed fields.
pub const EXACT_MAX_ORDER: usize = 12;

type BlackBox = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;
type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

#[derive(Clone, Default)]
pub enum Domain {
    #[default]
    Whole,
    Predicate(Predicate),
}

impl Domain {
    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Domain::Whole => true,
            Domain::Predicate(f) => f(p),
        }
    }
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Whole => f.write_str("Whole"),
            Domain::Predicate(_) => f.write_str("Predicate"),
        }
    }
}

#[derive(Clone)]
enum Field {
    Exact { re: Expr, im: Option<Expr> },
    Sampled(BlackBox),
}

/// A complex field with declared class `S^m_ρ`.
#[derive(Clone)]
pub struct SymbolField {
    vars: VarSpace,
    field: Field,
    weight: WeightSpec,
    rho: f64,
    domain: Domain,
}

impl fmt::Debug for SymbolField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymbolField")
            .field("expr", &self.describe())
            .field("weight", &self.weight.tag())
            .field("rho", &self.rho)
            .field("domain", &self.domain)
            .finish()
    }
}

/// Value of a derivative with an error estimate (zero when exact).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivativeValue {
    pub value: Complex64,
    pub error: f64,
    pub exact: bool,
}

impl SymbolField {
    /// Real symbol from an expression over `vars`.
    pub fn parse(src: &str, vars: VarSpace, weight: WeightSpec, rho: f64) -> Result<Self> {
        let re = Expr::parse(src, &vars)?;
        Self::from_expr(re, None, vars, weight, rho)
    }

    pub fn from_expr(
        re: Expr,
        im: Option<Expr>,
        vars: VarSpace,
        weight: WeightSpec,
        rho: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Validation(format!("rho = {rho} outside [0, 1]")));
        }
        if weight.dim() != vars.len() {
            return Err(Error::DimensionMismatch {
                expected: vars.len(),
                got: weight.dim(),
            });
        }
        Ok(SymbolField {
            vars,
            field: Field::Exact { re, im },
            weight,
            rho,
            domain: Domain::Whole,
        })
    }

    /// Adds an imaginary part parsed over the same variables.
    pub fn with_imag(mut self, src: &str) -> Result<Self> {
        let parsed = Expr::parse(src, &self.vars)?;
        match &mut self.field {
            Field::Exact { im, .. } => *im = Some(parsed),
            Field::Sampled(_) => {
                return Err(Error::Validation("black-box symbols take no imaginary expression".into()))
            }
        }
        Ok(self)
    }

    /// A field known only through evaluation; derivatives fall back to
    /// finite differences.
    pub fn black_box(
        vars: VarSpace,
        f: impl Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
        weight: WeightSpec,
        rho: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Validation(format!("rho = {rho} outside [0, 1]")));
        }
        Ok(SymbolField {
            vars,
            field: Field::Sampled(Arc::new(f)),
            weight,
            rho,
            domain: Domain::Whole,
        })
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn vars(&self) -> &VarSpace {
        &self.vars
    }

    pub fn weight(&self) -> &WeightSpec {
        &self.weight
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.field, Field::Exact { .. })
    }

    /// Highest derivative order `D` that [`eval_derivative`] accepts.
    ///
    /// [`eval_derivative`]: SymbolField::eval_derivative
    pub fn max_order(&self) -> usize {
        if self.is_exact() {
            EXACT_MAX_ORDER
        } else {
            FD_MAX_ORDER
        }
    }

    pub fn describe(&self) -> String {
        match &self.field {
            Field::Exact { re, im: None } => re.display(&self.vars).to_string(),
            Field::Exact { re, im: Some(im) } => format!(
                "{} + i*({})",
                re.display(&self.vars),
                im.display(&self.vars)
            ),
            Field::Sampled(_) => "<black box>".into(),
        }
    }

    pub fn real_expr(&self) -> Option<&Expr> {
        match &self.field {
            Field::Exact { re, .. } => Some(re),
            Field::Sampled(_) => None,
        }
    }

    pub fn imag_expr(&self) -> Option<&Expr> {
        match &self.field {
            Field::Exact { im, .. } => im.as_ref(),
            Field::Sampled(_) => None,
        }
    }

    pub fn eval(&self, p: &[f64]) -> Complex64 {
        match &self.field {
            Field::Exact { re, im } => {
                Complex64::new(re.eval(p), im.as_ref().map_or(0.0, |e| e.eval(p)))
            }
            Field::Sampled(f) => f(p),
        }
    }

    /// Taylor expansion of the field; `None` for black-box fields.
    pub fn eval_jet(&self, vars: &[Jet]) -> Option<ComplexJet> {
        match &self.field {
            Field::Exact { re, im } => {
                let re = re.eval_jet(vars);
                Some(match im {
                    Some(im) => ComplexJet {
                        re,
                        im: im.eval_jet(vars),
                    },
                    None => ComplexJet::real(re),
                })
            }
            Field::Sampled(_) => None,
        }
    }

    /// `∂^α a` at a point: exact for expression fields, otherwise central
    /// differences with one Richardson level.
    pub fn eval_derivative(&self, p: &[f64], alpha: &[usize]) -> Result<DerivativeValue> {
        if alpha.len() != self.dim() || p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: alpha.len().min(p.len()),
            });
        }
        if !self.domain.contains(p) {
            return Err(Error::OutsideDomain { point: p.to_vec() });
        }
        let order: usize = alpha.iter().sum();
        if order > self.max_order() {
            return Err(Error::OrderTooHigh {
                order,
                max: self.max_order(),
            });
        }
        match &self.field {
            Field::Exact { .. } => {
                let space = JetSpace::new(self.dim(), order);
                let jet = self.eval_jet(&Jet::variables(&space, p)).expect("exact field");
                let a8: Vec<u8> = alpha.iter().map(|&a| a as u8).collect();
                let value = Complex64::new(
                    jet.re.derivative(&a8).unwrap_or(0.0),
                    jet.im.derivative(&a8).unwrap_or(0.0),
                );
                Ok(DerivativeValue {
                    value,
                    error: 0.0,
                    exact: true,
                })
            }
            Field::Sampled(f) => Ok(richardson_derivative(|q| f(q), p, alpha)),
        }
    }

    /// Finite-difference derivative regardless of the backing, for gradient
    /// checks against the exact route.
    pub fn eval_derivative_fd(&self, p: &[f64], alpha: &[usize]) -> Result<DerivativeValue> {
        let order: usize = alpha.iter().sum();
        if order > FD_MAX_ORDER {
            return Err(Error::OrderTooHigh {
                order,
                max: FD_MAX_ORDER,
            });
        }
        Ok(richardson_derivative(|q| self.eval(q), p, alpha))
    }

    /// Weakens the declared decay exponent (inclusion `S^m_δ ⊂ S^m_ρ` for
    /// `ρ ≤ δ`).
    pub fn coerce_rho(&self, rho: f64) -> Result<SymbolField> {
        if rho > self.rho || rho < 0.0 {
            return Err(Error::Validation(format!(
                "cannot coerce rho {} to {rho}: only weakening is allowed",
                self.rho
            )));
        }
        Ok(SymbolField {
            rho,
            ..self.clone()
        })
    }
}

/// Per-axis step `eps^{1/(k+2)} · max(1, |x_i|)` for a `k`-th derivative.
fn fd_step(order: usize, coord: f64) -> f64 {
    f64::EPSILON.powf(1.0 / (order as f64 + 2.0)) * coord.abs().max(1.0)
}

fn central_difference(
    f: &impl Fn(&[f64]) -> Complex64,
    p: &[f64],
    alpha: &[usize],
    scale: f64,
) -> Complex64 {
    // Tensor product of 1-D central stencils:
    // Δ_h^k f(x) = Σ_j (-1)^j C(k, j) f(x + (k/2 - j) h) / h^k.
    let total: usize = alpha.iter().sum();
    let mut stencil: Vec<(Vec<f64>, f64)> = vec![(p.to_vec(), 1.0)];
    for (axis, &k) in alpha.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let h = fd_step(total, p[axis]) * scale;
        let mut next = Vec::with_capacity(stencil.len() * (k + 1));
        for (point, w) in &stencil {
            let mut binom = 1.0;
            for j in 0..=k {
                let mut q = point.clone();
                q[axis] += (k as f64 / 2.0 - j as f64) * h;
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                next.push((q, w * sign * binom / h.powi(k as i32)));
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
        }
        stencil = next;
    }
    stencil.iter().map(|(q, w)| f(q) * *w).sum()
}

fn richardson_derivative(
    f: impl Fn(&[f64]) -> Complex64,
    p: &[f64],
    alpha: &[usize],
) -> DerivativeValue {
    let coarse = central_difference(&f, p, alpha, 1.0);
    let fine = central_difference(&f, p, alpha, 0.5);
    let value = (fine * 4.0 - coarse) / 3.0;
    let order: usize = alpha.iter().sum();
    let h = fd_step(order, p.iter().fold(0.0f64, |m, x| m.max(x.abs()))) * 0.5;
    let roundoff = f64::EPSILON * f(p).norm().max(1.0) / h.powi(order as i32);
    DerivativeValue {
        value,
        error: (fine - coarse).norm() + roundoff,
        exact: false,
    }
}

/// Estimated seminorm constants `C_α` on a grid.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SeminormTable {
    pub entries: Vec<SeminormEntry>,
    pub grid: GridSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SeminormEntry {
    pub alpha: Vec<usize>,
    pub constant: f64,
    /// Grid point attaining the supremum.
    pub witness: Vec<f64>,
}

impl SeminormTable {
    pub fn new(grid: GridSpec) -> Self {
        SeminormTable {
            entries: Vec::new(),
            grid,
        }
    }

    pub fn get(&self, alpha: &[usize]) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.alpha == alpha)
            .map(|e| e.constant)
    }

    pub fn record(&mut self, entry: SeminormEntry) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.alpha == entry.alpha) {
            *e = entry;
        } else {
            self.entries.push(entry);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.constant.is_finite())
    }

    pub fn as_map(&self) -> BTreeMap<Vec<usize>, f64> {
        self.entries
            .iter()
            .map(|e| (e.alpha.clone(), e.constant))
            .collect()
    }
}

fn seminorm_entry(a: &SymbolField, alpha: &[usize], grid: &GridSpec) -> Result<SeminormEntry> {
    if grid.dim != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: grid.dim,
        });
    }
    let order: usize = alpha.iter().sum();
    let decay = a.rho * order as f64;
    let ratios: Vec<Result<(f64, Vec<f64>)>> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let p = grid.node(k);
            if !a.domain.contains(&p) {
                return Ok((f64::NEG_INFINITY, p));
            }
            let m = a.weight.eval(&p);
            if m == 0.0 {
                return Err(Error::DegenerateWeight { point: p });
            }
            let d = a.eval_derivative(&p, alpha)?;
            Ok((d.value.norm() / (m * bracket(&p).powf(-decay)), p))
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for r in ratios {
        let (v, p) = r?;
        if v > best.0 || v.is_nan() {
            best = (v, p);
        }
    }
    Ok(SeminormEntry {
        alpha: alpha.to_vec(),
        constant: best.0,
        witness: best.1,
    })
}

/// `sup_grid |∂^α a| / (m λ^{-ρ|α|})`.
pub fn seminorm_estimate(a: &SymbolField, alpha: &[usize], grid: &GridSpec) -> Result<f64> {
    seminorm_entry(a, alpha, grid).map(|e| e.constant)
}

/// Like [`seminorm_estimate`] but records the result into `table`.
pub fn seminorm_into(
    a: &SymbolField,
    alpha: &[usize],
    grid: &GridSpec,
    table: &mut SeminormTable,
) -> Result<f64> {
    let entry = seminorm_entry(a, alpha, grid)?;
    let c = entry.constant;
    table.record(entry);
    Ok(c)
}

/// Seminorms for every multi-index of total order `≤ max_order`.
pub fn verify_class(a: &SymbolField, max_order: usize, grid: &GridSpec) -> Result<SeminormTable> {
    let mut table = SeminormTable::new(grid.clone());
    for alpha in multi_indices(a.dim(), max_order) {
        seminorm_into(a, &alpha, grid, &mut table)?;
    }
    Ok(table)
}

/// All multi-indices in `dim` variables with total order `≤ max_order`,
/// graded.
pub fn multi_indices(dim: usize, max_order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=max_order {
        let mut cur = vec![0; dim];
        fill(&mut out, &mut cur, 0, total);
    }
    out
}

fn fill(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, pos: usize, rem: usize) {
    if pos + 1 == cur.len() {
        cur[pos] = rem;
        out.push(cur.clone());
        return;
    }
    for v in (0..=rem).rev() {
        cur[pos] = v;
        fill(out, cur, pos + 1, rem - v);
    }
}

/// `∂^α a`, declared in `S^{m λ^{-ρ|α|}}_ρ`.
pub fn derivative_symbol(a: &SymbolField, alpha: &[usize]) -> Result<SymbolField> {
    let order: usize = alpha.iter().sum();
    let Field::Exact { re, im } = &a.field else {
        return Err(Error::OrderTooHigh { order, max: 0 });
    };
    if alpha.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: alpha.len(),
        });
    }
    if order > EXACT_MAX_ORDER {
        return Err(Error::OrderTooHigh {
            order,
            max: EXACT_MAX_ORDER,
        });
    }
    let decay = WeightSpec::lambda(-a.rho * order as f64, a.dim(), LambdaConvention::SqrtSumSquares);
    let weight = if order == 0 {
        a.weight.clone()
    } else {
        weight_product(&a.weight, &decay)?
    };
    Ok(SymbolField {
        vars: a.vars.clone(),
        field: Field::Exact {
            re: re.diff_multi(alpha),
            im: im.as_ref().map(|e| e.diff_multi(alpha)),
        },
        weight,
        rho: a.rho,
        domain: a.domain.clone(),
    })
}

/// Pointwise product, declared in `S^{m l}_{min(ρ_a, ρ_b)}`.
pub fn product_symbol(a: &SymbolField, b: &SymbolField) -> Result<SymbolField> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let weight = weight_product(&a.weight, &b.weight)?;
    let rho = a.rho.min(b.rho);
    let field = match (&a.field, &b.field) {
        (Field::Exact { re: ar, im: ai }, Field::Exact { re: br, im: bi }) => {
            let (re, im) = match (ai, bi) {
                (None, None) => (expr::mul(ar.clone(), br.clone()), None),
                _ => {
                    let zero = Expr::Const(0.0);
                    let ai = ai.clone().unwrap_or(zero.clone());
                    let bi = bi.clone().unwrap_or(zero);
                    (
                        expr::sub(expr::mul(ar.clone(), br.clone()), expr::mul(ai.clone(), bi.clone())),
                        Some(expr::add(expr::mul(ar.clone(), bi), expr::mul(ai, br.clone()))),
                    )
                }
            };
            Field::Exact { re, im }
        }
        _ => {
            let (fa, fb) = (a.clone(), b.clone());
            Field::Sampled(Arc::new(move |p: &[f64]| fa.eval(p) * fb.eval(p)))
        }
    };
    let (da, db) = (a.domain.clone(), b.domain.clone());
    let domain = match (&da, &db) {
        (Domain::Whole, Domain::Whole) => Domain::Whole,
        _ => Domain::Predicate(Arc::new(move |p: &[f64]| da.contains(p) && db.contains(p))),
    };
    Ok(SymbolField {
        vars: a.vars.clone(),
        field,
        weight,
        rho,
        domain,
    })
}

/// `1/a`, declared in `S^{m λ^{-2μ}}_ρ`, after checking `|a| ≥ C0 λ^μ` on
/// the grid. A violation reports the first failing point.
pub fn reciprocal_symbol(a: &SymbolField, c0: f64, mu: f64, grid: &GridSpec) -> Result<SymbolField> {
    if grid.dim != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: grid.dim,
        });
    }
    for k in 0..grid.len() {
        let p = grid.node(k);
        if !a.domain.contains(&p) {
            continue;
        }
        let value = a.eval(&p).norm();
        let bound = c0 * bracket(&p).powf(mu);
        // Relative slack absorbs rounding when |a| equals the bound.
        if value < bound * (1.0 - 1e-12) {
            return Err(Error::LowerBoundViolation {
                witness: p,
                value,
                bound,
            });
        }
    }
    let decay = WeightSpec::lambda(-2.0 * mu, a.dim(), LambdaConvention::SqrtSumSquares);
    let weight = weight_product(&a.weight, &decay)?;
    let field = match &a.field {
        Field::Exact { re, im: None } => Field::Exact {
            re: expr::div(Expr::Const(1.0), re.clone()),
            im: None,
        },
        Field::Exact { re, im: Some(im) } => {
            let modulus = expr::add(expr::pow(re.clone(), 2.0), expr::pow(im.clone(), 2.0));
            Field::Exact {
                re: expr::div(re.clone(), modulus.clone()),
                im: Some(expr::neg(expr::div(im.clone(), modulus))),
            }
        }
        Field::Sampled(f) => {
            let f = f.clone();
            Field::Sampled(Arc::new(move |p: &[f64]| f(p).inv()))
        }
    };
    Ok(SymbolField {
        vars: a.vars.clone(),
        field,
        weight,
        rho: a.rho,
        domain: a.domain.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(src: &str, weight: WeightSpec, rho: f64) -> SymbolField {
        SymbolField::parse(src, VarSpace::weight(1), weight, rho).unwrap()
    }

    fn unit() -> WeightSpec {
        WeightSpec::constant(1.0, 1)
    }

    fn lam(p: f64) -> WeightSpec {
        WeightSpec::lambda(p, 1, LambdaConvention::SqrtSumSquares)
    }

    #[test]
    fn derivative_examples() {
        let a = one_d("exp(-v^2)", unit(), 0.0);
        assert_eq!(a.eval_derivative(&[0.0], &[0]).unwrap().value.re, 1.0);
        assert_eq!(a.eval_derivative(&[0.0], &[1]).unwrap().value.re, 0.0);
        let d = a.eval_derivative(&[1.0], &[1]).unwrap();
        assert!(d.exact);
        assert!((d.value.re + 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((d.value.re + 0.73576).abs() < 1e-5);
    }

    #[test]
    fn black_box_uses_finite_differences() {
        let a = SymbolField::black_box(
            VarSpace::weight(1),
            |p| Complex64::new((-p[0] * p[0]).exp(), 0.0),
            unit(),
            0.0,
        )
        .unwrap();
        let d = a.eval_derivative(&[1.0], &[1]).unwrap();
        assert!(!d.exact);
        assert!((d.value.re + 2.0 * (-1.0f64).exp()).abs() < 1e-8);
        assert!(matches!(
            a.eval_derivative(&[1.0], &[5]),
            Err(Error::OrderTooHigh { .. })
        ));
    }

    #[test]
    fn domain_is_enforced() {
        let a = one_d("v", unit(), 0.0).with_domain(Domain::Predicate(Arc::new(|p| p[0] > 0.0)));
        assert!(matches!(
            a.eval_derivative(&[-1.0], &[0]),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn seminorm_examples() {
        let g = GridSpec::new(1, 8.0, 1600);
        let one = one_d("1", unit(), 0.0);
        assert_eq!(seminorm_estimate(&one, &[0], &g).unwrap(), 1.0);

        // Oracle: 1-D maximization of 2|x|e^{-x^2}, attained at x = 1/√2.
        let oracle = {
            let (mut lo, mut hi) = (0.0f64, 2.0f64);
            let f = |x: f64| 2.0 * x * (-x * x).exp();
            for _ in 0..200 {
                let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
                if f(m1) < f(m2) {
                    lo = m1
                } else {
                    hi = m2
                }
            }
            f(0.5 * (lo + hi))
        };
        assert!((oracle - (2.0 / std::f64::consts::E).sqrt()).abs() < 1e-12);
        let g1 = one_d("exp(-v^2)", unit(), 0.0);
        let est = seminorm_estimate(&g1, &[1], &g).unwrap();
        assert!(est <= oracle + 1e-12 && oracle - est < 1e-4, "{est}");

        let l2 = one_d("1 + v^2", lam(2.0), 1.0);
        let est = seminorm_estimate(&l2, &[0], &g).unwrap();
        assert!((est - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_symbol_examples() {
        let g = GridSpec::new(1, 8.0, 400);
        let one = one_d("1", unit(), 0.0);
        let d = derivative_symbol(&one, &[1]).unwrap();
        assert_eq!(seminorm_estimate(&d, &[0], &g).unwrap(), 0.0);

        let gauss = one_d("exp(-v^2)", unit(), 0.0);
        let d = derivative_symbol(&gauss, &[1]).unwrap();
        assert_eq!(d.weight().eval(&[3.0]), 1.0);
        assert!(seminorm_estimate(&d, &[0], &g).unwrap().is_finite());

        // ∂(1+v²) = 2v in S^λ_1; sup 2|v|/λ(v) = 2R/√(1+R²) on [-R, R] → 2.
        let l2 = one_d("1 + v^2", lam(2.0), 1.0);
        let d = derivative_symbol(&l2, &[1]).unwrap();
        let mut prev = 0.0;
        for &r in &[10.0, 100.0, 1000.0] {
            let g = GridSpec::new(1, r, 200);
            let est = seminorm_estimate(&d, &[0], &g).unwrap();
            let closed = 2.0 * r / (1.0 + r * r).sqrt();
            assert!((est - closed).abs() < 1e-12);
            assert!(est > prev && est < 2.0);
            prev = est;
        }
        assert!(2.0 - prev < 1e-6);
    }

    #[test]
    fn derivative_then_seminorm_matches_direct() {
        let g = GridSpec::new(1, 6.0, 300);
        let a = one_d("exp(-v^2/3) * (1 + v^2)^0.5", lam(1.0), 1.0);
        for k in 0..4 {
            let direct = seminorm_estimate(&a, &[k], &g).unwrap();
            let via = seminorm_estimate(&derivative_symbol(&a, &[k]).unwrap(), &[0], &g).unwrap();
            assert!((direct - via).abs() <= 1e-12 * direct.max(1.0), "k={k}");
        }
    }

    #[test]
    fn product_examples() {
        let g = GridSpec::new(1, 8.0, 400);
        let one = one_d("1", unit(), 0.0);
        let b = one_d("exp(-v^2)", unit(), 0.5);
        let p = product_symbol(&one, &b).unwrap();
        assert_eq!(p.rho(), 0.0);
        for x in [-1.0, 0.3, 2.0] {
            assert_eq!(p.eval(&[x]), b.eval(&[x]));
        }
        let gg = product_symbol(&b, &b).unwrap();
        assert!((gg.eval(&[1.0]).re - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(seminorm_estimate(&gg, &[0], &g).unwrap(), 1.0);

        let l1 = one_d("(1 + v^2)^0.5", lam(1.0), 1.0);
        let ll = product_symbol(&l1, &l1).unwrap();
        assert!((seminorm_estimate(&ll, &[0], &g).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complex_product() {
        let vars = VarSpace::weight(1);
        let a = SymbolField::parse("v", vars.clone(), unit(), 0.0)
            .unwrap()
            .with_imag("1")
            .unwrap();
        let p = product_symbol(&a, &a).unwrap();
        let z = Complex64::new(2.0, 1.0);
        assert!((p.eval(&[2.0]) - z * z).norm() < 1e-14);
    }

    #[test]
    fn reciprocal_examples() {
        let g = GridSpec::new(1, 8.0, 400);
        let one = one_d("1", unit(), 0.0);
        let r = reciprocal_symbol(&one, 1.0, 0.0, &g).unwrap();
        assert_eq!(r.eval(&[3.0]).re, 1.0);

        let l2 = one_d("1 + v^2", lam(2.0), 1.0);
        let r = reciprocal_symbol(&l2, 1.0, 2.0, &g).unwrap();
        assert!((r.weight().eval(&[2.0]) - 1.0 / 5.0).abs() < 1e-14);
        assert!((seminorm_estimate(&r, &[0], &g).unwrap() - 1.0).abs() < 1e-12);

        let gauss = one_d("exp(-v^2)", unit(), 0.0);
        match reciprocal_symbol(&gauss, 1.0, 0.0, &GridSpec::new(1, 2.0, 4)) {
            Err(Error::LowerBoundViolation { witness, value, bound }) => {
                assert_eq!(witness, vec![-2.0]);
                assert!(value < bound);
            }
            other => panic!("expected violation, got {other:?}"),
        }
        match reciprocal_symbol(&gauss, 1.0, 0.0, &GridSpec::new(1, 1.0, 1)) {
            Err(Error::LowerBoundViolation { witness, value, .. }) => {
                assert_eq!(witness, vec![-1.0]);
                assert!((value - (-1.0f64).exp()).abs() < 1e-15);
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn coercion_only_weakens() {
        let g = GridSpec::new(1, 8.0, 200);
        let a = one_d("(1 + v^2)^0.5", lam(1.0), 1.0);
        let weak = a.coerce_rho(0.5).unwrap();
        assert!(verify_class(&weak, 3, &g).unwrap().all_finite());
        assert!(weak.coerce_rho(0.8).is_err());
    }

    #[test]
    fn refinement_does_not_shrink_seminorms() {
        let a = one_d("exp(-v^2) * v", unit(), 0.0);
        let coarse = GridSpec::new(1, 4.0, 64);
        let fine = coarse.refined();
        for k in 0..3 {
            let c = seminorm_estimate(&a, &[k], &coarse).unwrap();
            let f = seminorm_estimate(&a, &[k], &fine).unwrap();
            assert!(f >= c - 1e-12);
        }
    }

    #[test]
    fn table_serializes_alpha_as_arrays() {
        let g = GridSpec::new(2, 2.0, 8);
        let a = SymbolField::parse("exp(-x^2 - theta^2)", VarSpace::x_theta(1), WeightSpec::constant(1.0, 2), 0.0).unwrap();
        let table = verify_class(&a, 1, &g).unwrap();
        let json = serde_json::to_value(&table).unwrap();
        assert_eq!(json["entries"][1]["alpha"], serde_json::json!([1, 0]));
        assert_eq!(table.entries.len(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fd_matches_exact(x in -2.0f64..2.0, t in -2.0f64..2.0, ax in 0usize..3, at in 0usize..2) {
                let a = SymbolField::parse(
                    "exp(-x^2/2) * cos(theta) * (1 + x^2 + theta^2)^(-0.5)",
                    VarSpace::x_theta(1),
                    WeightSpec::constant(1.0, 2),
                    0.0,
                ).unwrap();
                let p = [x, t];
                let exact = a.eval_derivative(&p, &[ax, at]).unwrap().value;
                let fd = a.eval_derivative_fd(&p, &[ax, at]).unwrap();
                prop_assert!((exact - fd.value).norm() <= 10.0 * fd.error + 1e-6,
                    "exact {} fd {} err {}", exact, fd.value, fd.error);
            }

            #[test]
            fn reciprocal_inverts(x in -20.0f64..20.0) {
                let a = SymbolField::parse("2 + v^2", VarSpace::weight(1), lam(2.0), 1.0).unwrap();
                let r = reciprocal_symbol(&a, 1.0, 2.0, &GridSpec::new(1, 20.0, 50)).unwrap();
                prop_assert!((a.eval(&[x]) * r.eval(&[x]) - 1.0).norm() < 1e-14);
            }
        }
    }
}
