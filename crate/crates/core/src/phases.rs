//! Phase functions `φ(x, y, θ)` and sampled hypothesis checks.
//!
//! The special phases `φ = S(x, θ) − ⟨y, θ⟩` are built from a
//! [`GeneratingFunction`]. Every verifier samples tensor grids at several
//! radii and returns estimated constants in a [`HypothesisReport`]; a check
//! fails when a constant leaves its cap or floor, or when it drifts
//! steadily as the radius doubles.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr, VarSpace};
use crate::jet::{Jet, JetSpace};
use crate::symbols::multi_indices;
use crate::weights::{bracket, tensor_points};

pub const DEFAULT_CAP: f64 = 1e6;
pub const DEFAULT_FLOOR: f64 = 1e-8;
pub const DEFAULT_EPS0: f64 = 0.01;
pub const DEFAULT_RADII: [f64; 3] = [4.0, 8.0, 16.0];

/// Sampling parameters shared by the verifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub radii: Vec<f64>,
    /// Nodes per axis; `None` picks an odd count keeping grids near
    /// `budget` points.
    pub points: Option<usize>,
    pub budget: usize,
    pub cap: f64,
    pub floor: f64,
    /// A constant that changes by more than this factor on every radius
    /// doubling is reported as unbounded.
    pub growth: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            radii: DEFAULT_RADII.to_vec(),
            points: None,
            budget: 50_000,
            cap: DEFAULT_CAP,
            floor: DEFAULT_FLOOR,
            growth: 1.5,
        }
    }
}

impl CheckConfig {
    pub fn single(radius: f64, points: usize) -> Self {
        CheckConfig {
            radii: vec![radius],
            points: Some(points),
            ..Default::default()
        }
    }

    fn points_for(&self, dim: usize) -> usize {
        self.points.unwrap_or_else(|| {
            let p = (self.budget as f64).powf(1.0 / dim as f64).floor() as usize;
            let p = p.max(3);
            if p % 2 == 0 {
                p - 1
            } else {
                p
            }
        })
    }

    fn samples(&self, dim: usize, radius: f64) -> Vec<Vec<f64>> {
        tensor_points(dim, radius, self.points_for(dim))
    }
}

/// Outcome of a sampled hypothesis check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub name: String,
    /// Estimates on the largest sampled radius.
    pub constants: BTreeMap<String, f64>,
    /// Per-constant estimates in radius order, for growth diagnostics.
    pub trend: BTreeMap<String, Vec<f64>>,
    pub radii: Vec<f64>,
    pub pass: bool,
    pub witness: Option<Vec<f64>>,
    pub reason: Option<String>,
}

impl HypothesisReport {
    pub fn constant(&self, key: &str) -> Option<f64> {
        self.constants.get(key).copied()
    }
}

/// One quadratic monomial `c · x^α θ^β` with `|α| + |β| = 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTerm {
    pub x: Vec<usize>,
    pub theta: Vec<usize>,
    pub c: f64,
}

/// Smooth real `S(x, θ)` on `ℝ^n × ℝ^n`, variables ordered `x` then `θ`.
#[derive(Clone, Debug)]
pub struct GeneratingFunction {
    n: usize,
    vars: VarSpace,
    expr: Expr,
    coeffs: Option<Vec<QuadraticTerm>>,
}

impl GeneratingFunction {
    pub fn parse(src: &str, n: usize) -> Result<Self> {
        let vars = VarSpace::x_theta(n);
        let expr = Expr::parse(src, &vars)?;
        Ok(GeneratingFunction {
            n,
            vars,
            expr,
            coeffs: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn vars(&self) -> &VarSpace {
        &self.vars
    }

    pub fn coeffs(&self) -> Option<&[QuadraticTerm]> {
        self.coeffs.as_deref()
    }

    pub fn describe(&self) -> String {
        self.expr.display(&self.vars).to_string()
    }

    /// `S` at `p = (x, θ)`.
    pub fn eval(&self, p: &[f64]) -> f64 {
        self.expr.eval(p)
    }

    pub fn eval_jet(&self, vars: &[Jet]) -> Jet {
        self.expr.eval_jet(vars)
    }

    pub fn jet(&self, p: &[f64], order: usize) -> Jet {
        self.jet_in(&JetSpace::new(2 * self.n, order), p)
    }

    /// Expansion at `p` in a caller-provided space, avoiding its rebuild.
    pub fn jet_in(&self, space: &Arc<JetSpace>, p: &[f64]) -> Jet {
        self.expr.eval_jet(&Jet::variables(space, p))
    }

    pub fn grad_x(&self, p: &[f64]) -> Vec<f64> {
        self.jet(p, 1).gradient()[..self.n].to_vec()
    }

    pub fn grad_theta(&self, p: &[f64]) -> Vec<f64> {
        self.jet(p, 1).gradient()[self.n..].to_vec()
    }

    /// `∂²S/∂x_i∂θ_j` as an `n × n` matrix (rows `x`, columns `θ`).
    pub fn mixed_hess(&self, p: &[f64]) -> DMatrix<f64> {
        self.mixed_hess_in(&JetSpace::new(2 * self.n, 2), p)
    }

    fn mixed_hess_in(&self, space: &Arc<JetSpace>, p: &[f64]) -> DMatrix<f64> {
        let jet = self.jet_in(space, p);
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| {
            let mut alpha = vec![0u8; 2 * n];
            alpha[i] += 1;
            alpha[n + j] += 1;
            jet.derivative(&alpha).unwrap_or(0.0)
        })
    }
}

/// `S(x, θ) = Σ C_{αβ} x^α θ^β` over quadratic monomials.
pub fn quadratic_generating(terms: &[QuadraticTerm], n: usize) -> Result<GeneratingFunction> {
    let mut sum = Expr::Const(0.0);
    for t in terms {
        if t.x.len() != n || t.theta.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: t.x.len().min(t.theta.len()),
            });
        }
        let degree: usize = t.x.iter().chain(&t.theta).sum();
        if degree != 2 {
            return Err(Error::Validation(format!(
                "quadratic term has degree {degree}, expected 2"
            )));
        }
        let mut mono = Expr::Const(t.c);
        for (i, &k) in t.x.iter().chain(&t.theta).enumerate() {
            if k > 0 {
                mono = expr::mul(mono, expr::pow(Expr::Var(i), k as f64));
            }
        }
        sum = expr::add(sum, mono);
    }
    Ok(GeneratingFunction {
        n,
        vars: VarSpace::x_theta(n),
        expr: sum,
        coeffs: Some(terms.to_vec()),
    })
}

/// Parses `monomial = coefficient` pairs separated by commas, e.g.
/// `x*theta = 1, theta^2 = 0.5` or `x1*theta2 = 1`.
pub fn parse_quadratic_terms(src: &str, n: usize) -> Result<Vec<QuadraticTerm>> {
    let vars = VarSpace::x_theta(n);
    let mut out = Vec::new();
    let mut column = 1;
    for item in src.split(',') {
        let bad = |message: String| Error::Parse { column, message };
        let (mono, coeff) = item
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `monomial = value` in {item:?}")))?;
        let c: f64 = coeff
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad coefficient {:?}", coeff.trim())))?;
        let mut exps = vec![0usize; 2 * n];
        for factor in mono.split('*') {
            let factor = factor.trim();
            let (name, power) = match factor.split_once('^') {
                Some((name, p)) => (
                    name.trim(),
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| bad(format!("bad power in {factor:?}")))?,
                ),
                None => (factor, 1),
            };
            let idx = vars
                .names()
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| bad(format!("unknown variable {name:?}")))?;
            exps[idx] += power;
        }
        out.push(QuadraticTerm {
            x: exps[..n].to_vec(),
            theta: exps[n..].to_vec(),
            c,
        });
        column += item.len() + 1;
    }
    Ok(out)
}

/// Real phase `φ(x, y, θ)` with `x, y ∈ ℝ^n`, `θ ∈ ℝ^N`.
#[derive(Clone, Debug)]
pub struct PhaseField {
    n: usize,
    big_n: usize,
    vars: VarSpace,
    expr: Expr,
    generating: Option<Arc<GeneratingFunction>>,
}

impl PhaseField {
    pub fn parse(src: &str, n: usize, big_n: usize) -> Result<Self> {
        let vars = VarSpace::x_y_theta_dims(n, big_n);
        let expr = Expr::parse(src, &vars)?;
        Ok(PhaseField {
            n,
            big_n,
            vars,
            expr,
            generating: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn big_n(&self) -> usize {
        self.big_n
    }

    pub fn dim(&self) -> usize {
        2 * self.n + self.big_n
    }

    pub fn x_range(&self) -> Range<usize> {
        0..self.n
    }

    pub fn y_range(&self) -> Range<usize> {
        self.n..2 * self.n
    }

    pub fn theta_range(&self) -> Range<usize> {
        2 * self.n..self.dim()
    }

    pub fn vars(&self) -> &VarSpace {
        &self.vars
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn generating(&self) -> Option<&GeneratingFunction> {
        self.generating.as_deref()
    }

    pub fn describe(&self) -> String {
        self.expr.display(&self.vars).to_string()
    }

    /// `φ` at `p = (x, y, θ)`.
    pub fn eval(&self, p: &[f64]) -> f64 {
        self.expr.eval(p)
    }

    pub fn eval_jet(&self, vars: &[Jet]) -> Jet {
        self.expr.eval_jet(vars)
    }

    pub fn jet(&self, p: &[f64], order: usize) -> Jet {
        self.jet_in(&JetSpace::new(self.dim(), order), p)
    }

    pub fn jet_in(&self, space: &Arc<JetSpace>, p: &[f64]) -> Jet {
        self.expr.eval_jet(&Jet::variables(space, p))
    }

    pub fn grad(&self, p: &[f64]) -> Vec<f64> {
        self.jet(p, 1).gradient()
    }

    fn grad_in(&self, space: &Arc<JetSpace>, p: &[f64]) -> Vec<f64> {
        self.jet_in(space, p).gradient()
    }

    pub fn grad_x(&self, p: &[f64]) -> Vec<f64> {
        self.grad(p)[self.x_range()].to_vec()
    }

    pub fn grad_y(&self, p: &[f64]) -> Vec<f64> {
        self.grad(p)[self.y_range()].to_vec()
    }

    pub fn grad_theta(&self, p: &[f64]) -> Vec<f64> {
        self.grad(p)[self.theta_range()].to_vec()
    }

    pub fn hess(&self, p: &[f64]) -> DMatrix<f64> {
        let jet = self.jet(p, 2);
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| {
            let mut alpha = vec![0u8; d];
            alpha[i] += 1;
            alpha[j] += 1;
            jet.derivative(&alpha).unwrap_or(0.0)
        })
    }
}

/// `φ(x, y, θ) = S(x, θ) − ⟨y, θ⟩`.
pub fn special_phase(s: &GeneratingFunction) -> PhaseField {
    let n = s.n;
    // (x, θ) indices of S map to (x, ·, θ) in the phase variables.
    let map: Vec<usize> = (0..n).chain(2 * n..3 * n).collect();
    let mut e = s.expr.remap(&map);
    for j in 0..n {
        e = expr::sub(e, expr::mul(Expr::Var(n + j), Expr::Var(2 * n + j)));
    }
    PhaseField {
        n,
        big_n: n,
        vars: VarSpace::x_y_theta(n),
        expr: e,
        generating: Some(Arc::new(s.clone())),
    }
}

/// Generating functions shipped with the library, keyed by name.
pub fn bundled_generating() -> Vec<(&'static str, GeneratingFunction)> {
    let one = |src: &str| GeneratingFunction::parse(src, 1).expect("bundled phase");
    vec![
        ("identity", one("x*theta")),
        ("dilation", one("2*x*theta")),
        ("chirp", one("x*theta + theta^2/2")),
        ("quadratic", one("x*theta + x^2/2 + theta^2/2")),
        (
            "quadratic2d",
            GeneratingFunction::parse("x1*theta1 + x2*theta2 + x1*theta2 + theta1^2/2", 2)
                .expect("bundled phase"),
        ),
    ]
}

fn alpha_key(alpha: &[usize]) -> String {
    let parts: Vec<String> = alpha.iter().map(|a| a.to_string()).collect();
    format!("C[{}]", parts.join(","))
}

/// Tracks a sup (or inf) per key across radii.
struct Extremes {
    keys: Vec<String>,
    minimize: Vec<bool>,
    trend: Vec<Vec<f64>>,
    witness: Vec<Vec<f64>>,
}

impl Extremes {
    fn new(keys: Vec<String>, minimize: Vec<bool>) -> Self {
        let k = keys.len();
        Extremes {
            keys,
            minimize,
            trend: vec![Vec::new(); k],
            witness: vec![Vec::new(); k],
        }
    }

    /// Scans `points` with `f` returning one value per key.
    fn scan(&mut self, points: &[Vec<f64>], f: impl Fn(&[f64]) -> Vec<f64> + Sync) {
        let values: Vec<Vec<f64>> = points.par_iter().map(|p| f(p)).collect();
        for k in 0..self.keys.len() {
            let mut best = if self.minimize[k] {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            let mut at = 0;
            for (i, v) in values.iter().enumerate() {
                let x = v[k];
                let better = if self.minimize[k] { x < best } else { x > best };
                if better || (x.is_nan() && !best.is_nan()) {
                    best = x;
                    at = i;
                }
            }
            self.trend[k].push(best);
            if let Some(p) = points.get(at) {
                self.witness[k] = p.clone();
            }
        }
    }

    /// Index of the first key whose estimate drifts on every doubling.
    fn drifting(&self, growth: f64) -> Option<usize> {
        (0..self.keys.len()).find(|&k| {
            let t = &self.trend[k];
            t.len() >= 2
                && t.windows(2).all(|w| {
                    let (a, b) = (w[0].abs(), w[1].abs());
                    if self.minimize[k] {
                        b * growth < a
                    } else {
                        b > a * growth
                    }
                })
        })
    }

    fn report(self, name: &str, radii: &[f64], fail: Option<(usize, String)>) -> HypothesisReport {
        let mut constants = BTreeMap::new();
        let mut trend = BTreeMap::new();
        for (k, key) in self.keys.iter().enumerate() {
            constants.insert(key.clone(), *self.trend[k].last().unwrap_or(&f64::NAN));
            trend.insert(key.clone(), self.trend[k].clone());
        }
        let (pass, witness, reason) = match fail {
            Some((k, reason)) => (false, Some(self.witness[k].clone()), Some(reason)),
            None => (true, None, None),
        };
        HypothesisReport {
            name: name.into(),
            constants,
            trend,
            radii: radii.to_vec(),
            pass,
            witness,
            reason,
        }
    }
}

/// Sup-type check: every constant finite, under the cap, and not growing.
fn sup_verdict(ex: &Extremes, cfg: &CheckConfig) -> Option<(usize, String)> {
    for k in 0..ex.keys.len() {
        let c = *ex.trend[k].last().unwrap_or(&f64::NAN);
        if !c.is_finite() || c > cfg.cap {
            return Some((k, format!("{} = {c:.3e} exceeds cap {:.1e}", ex.keys[k], cfg.cap)));
        }
    }
    ex.drifting(cfg.growth).map(|k| {
        (
            k,
            format!("{} grows with the radius: {:?}", ex.keys[k], ex.trend[k]),
        )
    })
}

fn derivative_bound_check(
    name: &str,
    dim: usize,
    max_order: usize,
    cfg: &CheckConfig,
    jet_at: impl Fn(&Arc<JetSpace>, &[f64]) -> Jet + Sync,
) -> HypothesisReport {
    let space = JetSpace::new(dim, max_order);
    let alphas = multi_indices(dim, max_order);
    let keys = alphas.iter().map(|a| alpha_key(a)).collect();
    let mut ex = Extremes::new(keys, vec![false; alphas.len()]);
    let alphas8: Vec<Vec<u8>> = alphas
        .iter()
        .map(|a| a.iter().map(|&k| k as u8).collect())
        .collect();
    for &r in &cfg.radii {
        let pts = cfg.samples(dim, r);
        ex.scan(&pts, |p| {
            let jet = jet_at(&space, p);
            let lam = bracket(p);
            alphas
                .iter()
                .zip(&alphas8)
                .map(|(a, a8)| {
                    let k: usize = a.iter().sum();
                    jet.derivative(a8).unwrap_or(0.0).abs() / lam.powi(2 - k as i32)
                })
                .collect()
        });
    }
    let fail = sup_verdict(&ex, cfg);
    ex.report(name, &cfg.radii, fail)
}

fn finite_check(
    name: &str,
    dim: usize,
    cfg: &CheckConfig,
    jet_at: impl Fn(&Arc<JetSpace>, &[f64]) -> Jet + Sync,
) -> HypothesisReport {
    let space = JetSpace::new(dim, 2);
    let mut bad: Option<Vec<f64>> = None;
    for &r in &cfg.radii {
        let pts = cfg.samples(dim, r);
        let hit = pts
            .par_iter()
            .find_first(|p| jet_at(&space, p).coeffs().iter().any(|c| !c.is_finite()));
        if let Some(p) = hit {
            bad = Some(p.clone());
            break;
        }
    }
    HypothesisReport {
        name: name.into(),
        constants: BTreeMap::new(),
        trend: BTreeMap::new(),
        radii: cfg.radii.clone(),
        pass: bad.is_none(),
        reason: bad
            .as_ref()
            .map(|_| "value or derivative up to order 2 not finite".into()),
        witness: bad,
    }
}

/// Real values with finite derivatives through order 2 at every sample.
pub fn verify_h1(phi: &PhaseField, cfg: &CheckConfig) -> HypothesisReport {
    finite_check("H1", phi.dim(), cfg, |sp, p| phi.jet_in(sp, p))
}

/// [`verify_h1`] for a generating function on `(x, θ)`.
pub fn verify_g1(s: &GeneratingFunction, cfg: &CheckConfig) -> HypothesisReport {
    finite_check("G1", 2 * s.n, cfg, |sp, p| s.jet_in(sp, p))
}

/// Symbol-type bounds `|∂^{α,β,γ} φ| ≤ C λ(x, y, θ)^{2−|α|−|β|−|γ|}`.
pub fn verify_h2(phi: &PhaseField, max_order: usize, cfg: &CheckConfig) -> HypothesisReport {
    derivative_bound_check("H2", phi.dim(), max_order, cfg, |sp, p| phi.jet_in(sp, p))
}

/// Symbol-type bounds `|∂^{α,β} S| ≤ C λ(x, θ)^{2−|α|−|β|}`.
pub fn verify_g3(s: &GeneratingFunction, max_order: usize, cfg: &CheckConfig) -> HypothesisReport {
    derivative_bound_check("G3", 2 * s.n, max_order, cfg, |sp, p| s.jet_in(sp, p))
}

fn equivalence_check(
    name: &str,
    phi: &PhaseField,
    cfg: &CheckConfig,
    probe: impl Fn(&[f64], &[f64]) -> Vec<f64> + Sync,
) -> HypothesisReport {
    let space = JetSpace::new(phi.dim(), 1);
    let mut ex = Extremes::new(vec!["K1".into(), "K2".into()], vec![true, false]);
    for &r in &cfg.radii {
        let pts = cfg.samples(phi.dim(), r);
        ex.scan(&pts, |p| {
            let ratio = bracket(&probe(p, &phi.grad_in(&space, p))) / bracket(p);
            vec![ratio, ratio]
        });
    }
    let k1 = *ex.trend[0].last().unwrap_or(&f64::NAN);
    let k2 = *ex.trend[1].last().unwrap_or(&f64::NAN);
    let fail = if !(k1 > cfg.floor) {
        Some((0, format!("K1 = {k1:.3e} below floor {:.1e}", cfg.floor)))
    } else if !k2.is_finite() || k2 > cfg.cap {
        Some((1, format!("K2 = {k2:.3e} exceeds cap {:.1e}", cfg.cap)))
    } else {
        ex.drifting(cfg.growth).map(|k| {
            (
                k,
                format!("{} drifts with the radius: {:?}", ex.keys[k], ex.trend[k]),
            )
        })
    };
    ex.report(name, &cfg.radii, fail)
}

/// `K1 λ(x, y, θ) ≤ λ(∇_y φ, ∇_θ φ, y) ≤ K2 λ(x, y, θ)`.
pub fn verify_h3(phi: &PhaseField, cfg: &CheckConfig) -> HypothesisReport {
    equivalence_check("H3", phi, cfg, |p, g| {
        let mut v = g[phi.y_range()].to_vec();
        v.extend_from_slice(&g[phi.theta_range()]);
        v.extend_from_slice(&p[phi.y_range()]);
        v
    })
}

/// `K1* λ(x, y, θ) ≤ λ(x, ∇_θ φ, ∇_x φ) ≤ K2* λ(x, y, θ)`.
pub fn verify_h3star(phi: &PhaseField, cfg: &CheckConfig) -> HypothesisReport {
    let mut r = equivalence_check("H3*", phi, cfg, |p, g| {
        let mut v = p[phi.x_range()].to_vec();
        v.extend_from_slice(&g[phi.theta_range()]);
        v.extend_from_slice(&g[phi.x_range()]);
        v
    });
    for (from, to) in [("K1", "K1*"), ("K2", "K2*")] {
        if let Some(c) = r.constants.remove(from) {
            r.constants.insert(to.into(), c);
        }
        if let Some(t) = r.trend.remove(from) {
            r.trend.insert(to.into(), t);
        }
    }
    r
}

/// `δ0 = inf |det ∂²S/∂x∂θ|`.
pub fn verify_g2(s: &GeneratingFunction, cfg: &CheckConfig) -> HypothesisReport {
    let space = JetSpace::new(2 * s.n, 2);
    let mut ex = Extremes::new(vec!["delta0".into()], vec![true]);
    for &r in &cfg.radii {
        let pts = cfg.samples(2 * s.n, r);
        ex.scan(&pts, |p| vec![s.mixed_hess_in(&space, p).determinant().abs()]);
    }
    let d = ex.trend[0].iter().copied().fold(f64::INFINITY, f64::min);
    let fail = (!(d >= cfg.floor))
        .then(|| (0, format!("delta0 = {d:.3e} below floor {:.1e}", cfg.floor)));
    let mut report = ex.report("G2", &cfg.radii, fail);
    report.constants.insert("delta0".into(), d);
    report
}

/// `C = max |x − x′| / |∇_θ S(x, θ) − ∇_θ S(x′, θ)|` over `(x, x′, θ)`.
/// Pairs with `x = x′` are skipped.
pub fn verify_separation(
    s: &GeneratingFunction,
    pairs: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
    cap: f64,
) -> Result<HypothesisReport> {
    if pairs.is_empty() {
        return Err(Error::Validation("separation check needs at least one pair".into()));
    }
    let n = s.n;
    let ratios: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|(x, x1, th)| {
            let dx = dist(x, x1);
            if dx == 0.0 {
                return None;
            }
            let gx = s.grad_theta(&[x.as_slice(), th].concat());
            let gx1 = s.grad_theta(&[x1.as_slice(), th].concat());
            Some(dx / dist(&gx, &gx1))
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut witness = None;
    for (r, (x, x1, th)) in ratios.iter().zip(pairs) {
        if let Some(r) = *r {
            if r > best || (r.is_nan() && !best.is_nan()) {
                best = r;
                witness = Some([x.as_slice(), x1, th].concat());
            }
        }
    }
    debug_assert!(witness.as_ref().is_none_or(|w| w.len() == 3 * n));
    let pass = best.is_finite() && best <= cap;
    Ok(HypothesisReport {
        name: "separation".into(),
        constants: BTreeMap::from([("C".into(), best)]),
        trend: BTreeMap::from([("C".into(), vec![best])]),
        radii: Vec::new(),
        pass,
        reason: (!pass).then(|| format!("C = {best:.3e} exceeds cap {cap:.1e}")),
        witness,
    })
}

/// Triples `(x, x′, θ)` from a tensor grid on `[-radius, radius]^n`.
pub fn separation_pairs(
    n: usize,
    radius: f64,
    points: usize,
) -> Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let nodes = tensor_points(n, radius, points);
    let mut out = Vec::new();
    for x in &nodes {
        for x1 in &nodes {
            for th in &nodes {
                out.push((x.clone(), x1.clone(), th.clone()));
            }
        }
    }
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum()
}

/// `|∇_θ S(x, θ) − y|² < ε0 (|x|² + |y|² + |θ|²)` at `p = (x, y, θ)`.
pub fn omega_domain_membership(s: &GeneratingFunction, eps0: f64, p: &[f64]) -> Result<bool> {
    if eps0 <= 0.0 {
        return Err(Error::Validation(format!("eps0 = {eps0} must be positive")));
    }
    let n = s.n;
    if p.len() != 3 * n {
        return Err(Error::DimensionMismatch {
            expected: 3 * n,
            got: p.len(),
        });
    }
    let (x, y, th) = (&p[..n], &p[n..2 * n], &p[2 * n..]);
    let g = s.grad_theta(&[x, th].concat());
    let lhs: f64 = g.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(lhs < eps0 * sq(p))
}

/// Estimates `C` with `1/C ≤ λ(x, y, θ)/λ(x, θ) ≤ C` on sampled members of
/// the near-stationary region.
pub fn lambda_equivalence(
    s: &GeneratingFunction,
    eps0: f64,
    cfg: &CheckConfig,
) -> Result<HypothesisReport> {
    if eps0 <= 0.0 {
        return Err(Error::Validation(format!("eps0 = {eps0} must be positive")));
    }
    let n = s.n;
    let offsets = [0.0, 0.5, 0.9];
    let mut ex = Extremes::new(vec!["C".into()], vec![false]);
    for &r in &cfg.radii {
        let base = cfg.samples(2 * n, r);
        let mut members = Vec::new();
        for xt in &base {
            let (x, th) = (&xt[..n], &xt[n..]);
            let g = s.grad_theta(xt);
            let reach = (eps0 * sq(xt)).sqrt();
            for &t in &offsets {
                for dir in 0..n {
                    for sign in [1.0, -1.0] {
                        let mut y = g.clone();
                        y[dir] += sign * t * reach;
                        let p = [x, y.as_slice(), th].concat();
                        if omega_domain_membership(s, eps0, &p)? {
                            members.push(p);
                        }
                        if t == 0.0 {
                            break;
                        }
                    }
                }
            }
        }
        ex.scan(&members, |p| {
            let xt = [&p[..n], &p[2 * n..]].concat();
            let ratio = bracket(p) / bracket(&xt);
            vec![ratio.max(1.0 / ratio)]
        });
    }
    let fail = sup_verdict(&ex, cfg);
    let mut report = ex.report("lambda-equivalence", &cfg.radii, fail);
    report.constants.insert("eps0".into(), eps0);
    Ok(report)
}

/// Largest discrepancy between exact gradients and central differences,
/// relative to `max(1, |∇φ|)`.
pub fn gradient_check(phi: &PhaseField, points: &[Vec<f64>]) -> f64 {
    points
        .par_iter()
        .map(|p| {
            let exact = phi.grad(p);
            let scale = exact.iter().fold(1.0f64, |m, g| m.max(g.abs()));
            (0..phi.dim())
                .map(|j| {
                    let h = f64::EPSILON.cbrt() * p[j].abs().max(1.0);
                    let mut a = p.clone();
                    let mut b = p.clone();
                    a[j] += h;
                    b[j] -= h;
                    let fd = (phi.eval(&a) - phi.eval(&b)) / (2.0 * h);
                    (fd - exact[j]).abs() / scale
                })
                .fold(0.0, f64::max)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(src: &str) -> GeneratingFunction {
        GeneratingFunction::parse(src, 1).unwrap()
    }

    #[test]
    fn special_phase_gradients() {
        let phi = special_phase(&s("x*theta"));
        let p = [1.5, -0.5, 2.0];
        assert_eq!(phi.eval(&p), (1.5 + 0.5) * 2.0);
        assert_eq!(phi.grad_theta(&p), vec![2.0]);
        let chirp = special_phase(&s("x*theta + theta^2/2"));
        assert_eq!(chirp.grad_theta(&p), vec![1.5 + 2.0 + 0.5]);
        for q in tensor_points(3, 3.0, 5) {
            assert_eq!(chirp.grad_y(&q), vec![-q[2]]);
        }
    }

    #[test]
    fn h2_bilinear() {
        let phi = special_phase(&s("x*theta"));
        let cfg = CheckConfig {
            radii: vec![8.0],
            points: Some(17),
            ..Default::default()
        };
        let r = verify_h2(&phi, 3, &cfg);
        assert!(r.pass, "{r:?}");
        let c = r.constant("C[0,0,1]").unwrap();
        assert!(c <= 2f64.sqrt() && c > 1.3);
        for alpha in multi_indices(3, 3).iter().filter(|a| a.iter().sum::<usize>() == 3) {
            assert_eq!(r.constant(&alpha_key(alpha)).unwrap(), 0.0);
        }
    }

    #[test]
    fn h2_detects_growth() {
        let phi = special_phase(&s("x^4*theta"));
        let cfg = CheckConfig {
            points: Some(17),
            ..Default::default()
        };
        let r = verify_h2(&phi, 1, &cfg);
        assert!(!r.pass);
        assert!(r.witness.is_some());
        let t = &r.trend["C[1,0,0]"];
        assert!(t[2] / t[1] > 4.0);
    }

    #[test]
    fn h3_examples() {
        let cfg = CheckConfig {
            radii: vec![8.0],
            points: Some(33),
            ..Default::default()
        };
        let r = verify_h3(&special_phase(&s("x*theta")), &cfg);
        assert!(r.pass);
        let (k1, k2) = (r.constant("K1").unwrap(), r.constant("K2").unwrap());
        assert!(k1 >= 0.29 && k2 <= 1.8, "{k1} {k2}");

        let r = verify_h3(&special_phase(&s("theta^2/2")), &CheckConfig::default());
        assert!(!r.pass);
        let w = r.witness.unwrap();
        assert_eq!(&w[1..], &[0.0, 0.0]);
        assert!(w[0].abs() == 16.0);

        let single = CheckConfig::single(1.0, 1);
        let r = verify_h3(&special_phase(&s("x*theta")), &single);
        assert_eq!(r.constant("K1"), r.constant("K2"));
    }

    #[test]
    fn g2_examples() {
        let cfg = CheckConfig::default();
        assert_eq!(verify_g2(&s("x*theta"), &cfg).constant("delta0"), Some(1.0));
        assert_eq!(
            verify_g2(&s("x*theta + x^2/2 + theta^2/2"), &cfg).constant("delta0"),
            Some(1.0)
        );
        let r = verify_g2(&s("x^2 + theta^2"), &cfg);
        assert!(!r.pass);
        assert_eq!(r.constant("delta0"), Some(0.0));
        assert!(r.witness.is_some());
    }

    #[test]
    fn g3_examples() {
        let cfg = CheckConfig {
            points: Some(9),
            ..Default::default()
        };
        let r = verify_g3(&s("x*theta"), 3, &cfg);
        assert!(r.pass);
        assert_eq!(r.constant("C[2,1]"), Some(0.0));

        let terms = parse_quadratic_terms("x1*theta1 = 1, x2*theta2 = 1, x1*theta2 = 0.5", 2).unwrap();
        let q = quadratic_generating(&terms, 2).unwrap();
        let r = verify_g3(&q, 2, &cfg);
        assert!(r.pass, "{r:?}");
        assert!(r.constants.values().all(|&c| c <= 2.0));

        let r = verify_g3(&s("exp(x)*theta"), 2, &cfg);
        assert!(!r.pass);
        let w = r.witness.unwrap();
        assert_eq!(w[0], 16.0);
    }

    #[test]
    fn separation_examples() {
        let pairs = separation_pairs(1, 4.0, 9);
        let c = |src: &str| verify_separation(&s(src), &pairs, DEFAULT_CAP).unwrap();
        assert_eq!(c("x*theta").constant("C"), Some(1.0));
        assert_eq!(c("x*theta + theta^2/2").constant("C"), Some(1.0));
        assert_eq!(c("2*x*theta").constant("C"), Some(0.5));
        assert!(!c("theta^2").pass);
        assert!(verify_separation(&s("x*theta"), &[], 1.0).is_err());
    }

    #[test]
    fn omega_membership_examples() {
        let id = s("x*theta");
        assert!(omega_domain_membership(&id, 1e-6, &[1.0, 1.0, 0.0]).unwrap());
        assert!(!omega_domain_membership(&id, 0.5, &[0.0, 1.0, 0.0]).unwrap());
        let chirp = s("x*theta + theta^2/2");
        assert!(omega_domain_membership(&chirp, 0.01, &[1.0, 1.05, 0.1]).unwrap());
        assert!(omega_domain_membership(&id, 0.0, &[0.0; 3]).is_err());
    }

    #[test]
    fn quadratic_tables() {
        let q = quadratic_generating(&parse_quadratic_terms("x*theta = 1", 1).unwrap(), 1).unwrap();
        assert_eq!(verify_g2(&q, &CheckConfig::default()).constant("delta0"), Some(1.0));
        let q = quadratic_generating(&parse_quadratic_terms("x^2 = 1, theta^2 = 1", 1).unwrap(), 1).unwrap();
        assert!(!verify_g2(&q, &CheckConfig::default()).pass);
        let terms = parse_quadratic_terms("x1*theta1=1, x1*theta2=1, x2*theta2=1", 2).unwrap();
        let q = quadratic_generating(&terms, 2).unwrap();
        let h = q.mixed_hess(&[0.3, -1.0, 2.0, 0.1]);
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        assert_eq!(verify_g2(&q, &CheckConfig::default()).constant("delta0"), Some(1.0));
        assert!(parse_quadratic_terms("x*y = 1", 1).is_err());
        assert!(quadratic_generating(
            &[QuadraticTerm { x: vec![1], theta: vec![0], c: 1.0 }],
            1
        )
        .is_err());
    }

    #[test]
    fn report_serializes_with_witness() {
        let r = verify_g2(&s("x^2 + theta^2"), &CheckConfig::single(2.0, 3));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["pass"], false);
        assert!(json["witness"].is_array());
    }

    #[test]
    fn smoothness_checks() {
        let cfg = CheckConfig::single(2.0, 5);
        assert!(verify_g1(&s("x*theta"), &cfg).pass);
        let r = verify_g1(&s("ln(x)*theta"), &cfg);
        assert!(!r.pass && r.witness.unwrap()[0] <= 0.0);
    }

    #[test]
    fn generating_hypotheses_imply_phase_hypotheses() {
        let cfg = CheckConfig {
            budget: 10_000,
            ..Default::default()
        };
        for (name, g) in bundled_generating() {
            if verify_g2(&g, &cfg).pass && verify_g3(&g, 2, &cfg).pass {
                let phi = special_phase(&g);
                assert!(verify_g1(&g, &cfg).pass && verify_h1(&phi, &cfg).pass, "{name}");
                assert!(verify_h2(&phi, 2, &cfg).pass, "{name}");
                assert!(verify_h3(&phi, &cfg).pass, "{name}");
            }
        }
    }

    #[test]
    fn lambda_equivalence_holds_near_stationary_set() {
        let cfg = CheckConfig {
            points: Some(21),
            ..Default::default()
        };
        for (name, g) in bundled_generating().into_iter().filter(|(_, g)| g.n() == 1) {
            let r = lambda_equivalence(&g, DEFAULT_EPS0, &cfg).unwrap();
            assert!(r.pass, "{name}: {r:?}");
            assert!(r.constant("C").unwrap() < 10.0);
        }
    }

    #[test]
    fn exact_gradients_match_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for (_, g) in bundled_generating() {
            let phi = special_phase(&g);
            let pts: Vec<Vec<f64>> = (0..100)
                .map(|_| (0..phi.dim()).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            assert!(gradient_check(&phi, &pts) < 1e-8);
        }
    }
}
