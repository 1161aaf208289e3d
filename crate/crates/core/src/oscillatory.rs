//! Oscillatory integrals `I(a, φ) f(x) = ∬ e^{iφ(x,y,θ)} a(x,y,θ) f(y) dy d̂θ`
//! with `d̂θ = (2π)^{-N} dθ`.
//!
//! Two evaluation routes are provided. [`regularized_fio_apply`] damps the
//! amplitude with `g((x, y, θ)/σ)` and extrapolates `σ → ∞`.
//! [`fio_apply_ibp`] splits the integrand with the cutoff `ω_ε` and moves
//! `k` derivatives onto the non-stationary part through the transpose of
//! `L = (iD)^{-1} Σ ∂_jφ ∂_j`, `D = |∇_y φ|² + |∇_θ φ|²`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::VarSpace;
use crate::grid::{edge_taper, GradedAxis};
use crate::jet::{bump, ComplexJet, Jet, JetSpace};
use crate::phases::PhaseField;
use crate::symbols::SymbolField;
use crate::weights::{bracket, tensor_points};

/// Default `σ` schedule for the regularized route.
pub const DEFAULT_SCHEDULE: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];

/// Integrand points whose test-function jet is below this are skipped.
pub const PRUNE_TOL: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    /// `g(v) = e^{-|v|²/2}`.
    Gaussian,
    /// `g(v) = χ(|v|²)`: equal to one on the unit ball, zero outside radius `√2`.
    SmoothBump,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub kind: CutoffKind,
}

impl CutoffSpec {
    pub fn gaussian() -> Self {
        CutoffSpec {
            kind: CutoffKind::Gaussian,
        }
    }

    pub fn bump() -> Self {
        CutoffSpec {
            kind: CutoffKind::SmoothBump,
        }
    }

    pub fn other(self) -> Self {
        match self.kind {
            CutoffKind::Gaussian => Self::bump(),
            CutoffKind::SmoothBump => Self::gaussian(),
        }
    }

    pub fn g(&self, v: &[f64]) -> f64 {
        let sq: f64 = v.iter().map(|c| c * c).sum();
        match self.kind {
            CutoffKind::Gaussian => (-0.5 * sq).exp(),
            CutoffKind::SmoothBump => bump(sq),
        }
    }

    /// Radius beyond which `g` is below roundoff.
    pub fn reach(&self) -> f64 {
        match self.kind {
            CutoffKind::Gaussian => 8.6,
            CutoffKind::SmoothBump => 2f64.sqrt(),
        }
    }
}

/// Variables of a test function on `ℝ^n`: `y` or `y1..yn`.
pub fn test_function_vars(n: usize) -> VarSpace {
    if n == 1 {
        VarSpace::new(&["y"])
    } else {
        let names: Vec<String> = (1..=n).map(|i| format!("y{i}")).collect();
        VarSpace::new(&names)
    }
}

fn check_point(phi: &PhaseField, p: &[f64]) -> Result<()> {
    if p.len() != phi.dim() {
        return Err(Error::DimensionMismatch {
            expected: phi.dim(),
            got: p.len(),
        });
    }
    Ok(())
}

fn grad_sq(phi: &PhaseField, g: &[f64]) -> f64 {
    g[phi.n()..].iter().map(|c| c * c).sum()
}

/// `ω_ε(x, y, θ) = χ(D / (ε λ²))`.
pub fn omega_partition(phi: &PhaseField, eps: f64, p: &[f64]) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::Validation(format!("eps = {eps} must be positive")));
    }
    check_point(phi, p)?;
    let d = grad_sq(phi, &phi.grad(p));
    Ok(bump(d / (eps * bracket(p).powi(2))))
}

/// Coefficients of `ᵗL u = Σ F_j ∂_{y_j} u + Σ G_j ∂_{θ_j} u + H u`.
#[derive(Clone, Debug, PartialEq)]
pub struct IbpCoefficients {
    pub f: Vec<Complex64>,
    pub g: Vec<Complex64>,
    pub h: Complex64,
}

/// Norm-type bounds of the transpose coefficients on sampled points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    /// `sup |F_j| λ`.
    pub f_lambda: f64,
    /// `sup |G_j| λ`.
    pub g_lambda: f64,
    /// `sup |H| λ²`.
    pub h_lambda2: f64,
    pub samples: usize,
}

/// The operator `L` of a phase, restricted to `Ω₀ = {D ≥ ε₀ λ²}`.
#[derive(Clone, Debug)]
pub struct IbpOperator {
    phi: Arc<PhaseField>,
    eps0: f64,
}

pub fn ibp_operator(phi: &PhaseField, eps0: f64) -> Result<IbpOperator> {
    if eps0 <= 0.0 {
        return Err(Error::Validation(format!("eps0 = {eps0} must be positive")));
    }
    Ok(IbpOperator {
        phi: Arc::new(phi.clone()),
        eps0,
    })
}

impl IbpOperator {
    pub fn phase(&self) -> &PhaseField {
        &self.phi
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    /// `D / λ²` at a point.
    pub fn quotient(&self, p: &[f64]) -> f64 {
        grad_sq(&self.phi, &self.phi.grad(p)) / bracket(p).powi(2)
    }

    fn guard(&self, p: &[f64]) -> Result<()> {
        check_point(&self.phi, p)?;
        let q = self.quotient(p);
        if q < self.eps0 {
            return Err(Error::OutsideNonStationary {
                point: p.to_vec(),
                quotient: q,
            });
        }
        Ok(())
    }

    /// `F_j = −∂_{y_j}φ/(iD)`, `G_j = −∂_{θ_j}φ/(iD)` and
    /// `H = −Σ ∂_j(∂_jφ/(iD))` over the `(y, θ)` variables.
    pub fn coefficients(&self, p: &[f64]) -> Result<IbpCoefficients> {
        self.guard(p)?;
        let phi = &self.phi;
        let n = phi.n();
        let jet = phi.jet(p, 2);
        let grad = jet.gradient();
        let d = grad_sq(phi, &grad);
        let inv_i = Complex64::new(0.0, -1.0);
        let coeff = |j: usize| -grad[j] / d * inv_i;
        let f = phi.y_range().map(coeff).collect();
        let g = phi.theta_range().map(coeff).collect();
        // ∂_j(∂_jφ / D) = ∂_j²φ / D − ∂_jφ ∂_jD / D², ∂_jD = 2 Σ_k ∂_kφ ∂_j∂_kφ.
        let second = |j: usize, k: usize| {
            let mut alpha = vec![0u8; phi.dim()];
            alpha[j] += 1;
            alpha[k] += 1;
            jet.derivative(&alpha).unwrap_or(0.0)
        };
        let mut div = 0.0;
        for j in n..phi.dim() {
            let dd: f64 = (n..phi.dim()).map(|k| 2.0 * grad[k] * second(j, k)).sum();
            div += second(j, j) / d - grad[j] * dd / (d * d);
        }
        Ok(IbpCoefficients {
            f,
            g,
            h: -div * inv_i,
        })
    }

    /// `−(iD)^{-1} (Δ_y φ + Δ_θ φ)`: the zeroth-order coefficient without
    /// the derivative of `1/D`. It differs from [`IbpCoefficients::h`]
    /// unless `D` is locally constant along `∇φ`.
    pub fn h_second_order_part(&self, p: &[f64]) -> Result<Complex64> {
        self.guard(p)?;
        let phi = &self.phi;
        let n = phi.n();
        let jet = phi.jet(p, 2);
        let d = grad_sq(phi, &jet.gradient());
        let lap: f64 = (n..phi.dim())
            .map(|j| {
                let mut alpha = vec![0u8; phi.dim()];
                alpha[j] = 2;
                jet.derivative(&alpha).unwrap_or(0.0)
            })
            .sum();
        Ok(-lap / d * Complex64::new(0.0, -1.0))
    }

    /// `|L e^{iφ} − e^{iφ}| / |e^{iφ}|`, with `∂_j e^{iφ}` taken from the
    /// jets of `cos φ` and `sin φ`.
    pub fn l_identity_error(&self, p: &[f64]) -> Result<f64> {
        self.guard(p)?;
        let phi = &self.phi;
        let n = phi.n();
        let jet = phi.jet(p, 1);
        let (c, s) = (jet.cos(), jet.sin());
        let grad = jet.gradient();
        let d = grad_sq(phi, &grad);
        let (gc, gs) = (c.gradient(), s.gradient());
        let mut acc = Complex64::new(0.0, 0.0);
        for j in n..phi.dim() {
            acc += grad[j] * Complex64::new(gc[j], gs[j]);
        }
        let l = acc / Complex64::new(0.0, d);
        let e = Complex64::new(c.value(), s.value());
        Ok((l - e).norm() / e.norm())
    }

    /// Sup of `|F_j| λ`, `|G_j| λ`, `|H| λ²` over the points lying in `Ω₀`.
    pub fn coefficient_bounds(&self, points: &[Vec<f64>]) -> CoefficientBounds {
        let rows: Vec<Option<[f64; 3]>> = points
            .par_iter()
            .map(|p| {
                let c = self.coefficients(p).ok()?;
                let lam = bracket(p);
                let fmax = c.f.iter().map(|z| z.norm()).fold(0.0, f64::max);
                let gmax = c.g.iter().map(|z| z.norm()).fold(0.0, f64::max);
                Some([fmax * lam, gmax * lam, c.h.norm() * lam * lam])
            })
            .collect();
        let mut out = [0.0f64; 3];
        let mut samples = 0;
        for r in rows.into_iter().flatten() {
            samples += 1;
            for i in 0..3 {
                out[i] = out[i].max(r[i]);
            }
        }
        CoefficientBounds {
            f_lambda: out[0],
            g_lambda: out[1],
            h_lambda2: out[2],
            samples,
        }
    }

    /// `(ᵗL)^k u` from jets over the integration variables `(y, θ)`.
    /// `phase` must be valid through order `k + 1` and `u` through `k`.
    pub fn transpose_power(&self, phase: &Jet, u: ComplexJet, k: usize) -> ComplexJet {
        transpose_power(phase, u, k)
    }
}

/// `ᵗL u = i Σ_j ∂_j((∂_jφ / D) u)` iterated `k` times, over all jet
/// variables.
fn transpose_power(phase: &Jet, mut u: ComplexJet, k: usize) -> ComplexJet {
    if k == 0 {
        return u;
    }
    let nv = phase.space().nvars();
    let grads: Vec<Jet> = (0..nv).map(|j| phase.d(j)).collect();
    let mut d = &grads[0] * &grads[0];
    for g in &grads[1..] {
        d += &(g * g);
    }
    let inv = d.recip();
    let r: Vec<Jet> = grads.iter().map(|g| g * &inv).collect();
    for _ in 0..k {
        let mut acc: Option<ComplexJet> = None;
        for (j, rj) in r.iter().enumerate() {
            let term = u.mul_real(rj).d(j);
            acc = Some(match acc {
                Some(a) => a.add(&term),
                None => term,
            });
        }
        u = acc.expect("at least one variable").times_i();
    }
    u
}

/// `sup λ²/|y|²` over sampled points of `supp ω_ε` with `|y| ≥ y_min`.
pub fn majoration_constant(
    phi: &PhaseField,
    eps: f64,
    points: &[Vec<f64>],
    y_min: f64,
) -> Result<(f64, Option<Vec<f64>>)> {
    let vals: Vec<Option<f64>> = points
        .par_iter()
        .map(|p| {
            let y2: f64 = p[phi.y_range()].iter().map(|c| c * c).sum();
            if y2 < y_min * y_min {
                return Ok(None);
            }
            let w = omega_partition(phi, eps, p)?;
            Ok((w > 0.0).then(|| bracket(p).powi(2) / y2))
        })
        .collect::<Result<_>>()?;
    let mut best = 0.0;
    let mut witness = None;
    for (v, p) in vals.iter().zip(points) {
        if let Some(v) = *v {
            if v > best {
                best = v;
                witness = Some(p.clone());
            }
        }
    }
    Ok((best, witness))
}

/// Candidate `ε₀` values, largest first.
pub const EPS0_CANDIDATES: [f64; 8] = [0.4, 0.3, 0.25, 0.2, 0.1, 0.05, 0.02, 0.01];

/// Largest candidate `ε` whose majoration constant on the sampled grid
/// `[-radius, radius]^{dim}` stays below `limit` (points with `|y| < 0.5`
/// excluded).
pub fn choose_eps0(phi: &PhaseField, radius: f64, points: usize, limit: f64) -> Result<f64> {
    let grid = tensor_points(phi.dim(), radius, points);
    for &eps in &EPS0_CANDIDATES {
        let (c, _) = majoration_constant(phi, eps, &grid, 0.5)?;
        if c < limit {
            return Ok(eps);
        }
    }
    Err(Error::Validation(format!(
        "no candidate eps0 keeps the majoration constant below {limit:.1e}"
    )))
}

/// Result of an oscillatory-integral evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscIntegralResult {
    pub value: Complex64,
    /// `(σ, value_σ)` in schedule order.
    pub sigma_values: Vec<(f64, Complex64)>,
    /// `(σ, |value_σ − value|)`.
    pub sigma_residuals: Vec<(f64, f64)>,
    /// `|value − value_σmax(other cutoff)|`.
    pub cutoff_gap: Option<f64>,
    pub other_residuals: Vec<(f64, f64)>,
    pub ibp_order: Option<usize>,
    pub truncation_radius: Option<f64>,
    /// `(R, T(R))`: integral of `|integrand|` over `box(2R) \ box(R)`.
    pub tails: Vec<(f64, f64)>,
    pub eps0: Option<f64>,
}

impl OscIntegralResult {
    pub fn final_residual(&self) -> Option<f64> {
        self.sigma_residuals.last().map(|r| r.1)
    }

    /// `log2(T(R1) / T(R2))` for `R2 = 2 R1`.
    pub fn tail_slope(&self, r1: f64, r2: f64) -> Option<f64> {
        let t = |r: f64| self.tails.iter().find(|t| t.0 == r).map(|t| t.1);
        Some((t(r1)? / t(r2)?).log2() / (r2 / r1).log2())
    }
}

/// Grid parameters for the integration variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    /// Half-width of the `y` box; `None` derives it from the decay of `f`.
    pub y_radius: Option<f64>,
    /// Bandwidth allowance added to the local frequency when choosing
    /// spacings.
    pub band_margin: f64,
    /// Fraction of the Nyquist-limited spacing actually used.
    pub safety: f64,
    /// Explicit spacings `(Δy, Δθ)`, overriding the automatic choice.
    pub spacing: Option<(f64, f64)>,
    /// Cosine roll-off over this fraction of the `θ` box.
    pub taper: f64,
    /// Spacing inside the transition zone `1 < t < 2` of the partition.
    pub fine_spacing: f64,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            y_radius: None,
            band_margin: 10.0,
            safety: 0.9,
            spacing: None,
            taper: 0.1,
            fine_spacing: 0.004,
        }
    }
}

/// Radius outside which `|f|` stays below `1e-17 · max |f|` along the
/// coordinate axes.
pub fn decay_radius(f: &SymbolField) -> f64 {
    let n = f.dim();
    let step = 0.125;
    let samples: Vec<(f64, f64)> = (0..=1600)
        .map(|i| {
            let r = i as f64 * step;
            let mut worst: f64 = 0.0;
            for axis in 0..n {
                for sign in [1.0, -1.0] {
                    let mut p = vec![0.0; n];
                    p[axis] = sign * r;
                    worst = worst.max(f.eval(&p).norm());
                }
            }
            (r, worst)
        })
        .collect();
    let peak = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    samples
        .iter()
        .rev()
        .find(|s| s.1 > 1e-17 * peak)
        .map_or(step, |s| s.0 + step)
}

struct Setup<'a> {
    a: &'a SymbolField,
    phi: &'a PhaseField,
    f: &'a SymbolField,
    x: &'a [f64],
}

impl Setup<'_> {
    fn check(&self) -> Result<()> {
        let (n, dim) = (self.phi.n(), self.phi.dim());
        if self.a.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.a.dim(),
            });
        }
        if self.f.dim() != n || self.x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.f.dim().min(self.x.len()),
            });
        }
        Ok(())
    }

    fn full(&self, q: &[f64]) -> Vec<f64> {
        [self.x, q].concat()
    }

    /// Largest `|∂φ|` over the `(y, θ)` box along the given block.
    fn max_frequency(&self, ry: f64, rt: f64, block: std::ops::Range<usize>) -> f64 {
        let n = self.phi.n();
        let nv = self.phi.dim() - n;
        let pts = tensor_points(nv, 1.0, 17);
        pts.iter()
            .map(|u| {
                let q: Vec<f64> = u
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| if i < n { c * ry } else { c * rt })
                    .collect();
                let g = self.phi.grad(&self.full(&q));
                g[block.clone()].iter().map(|c| c * c).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }
}

fn tensor_nodes(axes: &[GradedAxis]) -> Vec<(Vec<f64>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for ax in axes {
        out = out
            .into_iter()
            .flat_map(|(p, w)| {
                ax.nodes.iter().zip(&ax.weights).map(move |(&c, &wc)| {
                    let mut q = p.clone();
                    q.push(c);
                    (q, w * wc)
                })
            })
            .collect();
    }
    out
}

fn regularized_value(
    s: &Setup<'_>,
    sigma: f64,
    cutoff: CutoffSpec,
    quad: &QuadSpec,
    ry: f64,
) -> Complex64 {
    let (n, big_n) = (s.phi.n(), s.phi.big_n());
    let reach = cutoff.reach() * sigma;
    let ry = ry.min(reach);
    let rt = reach;
    let (hy, ht) = quad.spacing.unwrap_or_else(|| {
        let fy = s.max_frequency(ry, rt, s.phi.y_range());
        let ft = s.max_frequency(ry, rt, s.phi.theta_range());
        (
            quad.safety * 2.0 * PI / (fy + quad.band_margin),
            quad.safety * 2.0 * PI / (ft + quad.band_margin),
        )
    });
    let axes: Vec<GradedAxis> = (0..n + big_n)
        .map(|i| if i < n { GradedAxis::uniform(ry, hy) } else { GradedAxis::uniform(rt, ht) })
        .collect();
    let nodes = tensor_nodes(&axes);
    let weight = (2.0 * PI).powi(-(big_n as i32));
    let parts: Vec<Complex64> = nodes
        .par_chunks(4096)
        .map(|chunk| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (q, wq) in chunk {
                let p = s.full(q);
                let scaled: Vec<f64> = p.iter().map(|c| c / sigma).collect();
                let g = cutoff.g(&scaled);
                if g == 0.0 {
                    continue;
                }
                let fy = s.f.eval(&q[..n]);
                if fy == Complex64::new(0.0, 0.0) {
                    continue;
                }
                acc += Complex64::from_polar(1.0, s.phi.eval(&p)) * s.a.eval(&p) * fy * (g * wq);
            }
            acc
        })
        .collect();
    parts.into_iter().sum::<Complex64>() * weight
}

/// Aitken limit from the last three values (last value when the
/// differences do not contract).
fn extrapolate(values: &[Complex64]) -> Complex64 {
    let m = values.len();
    let last = values[m - 1];
    if m < 3 {
        return last;
    }
    let d1 = values[m - 2] - values[m - 3];
    let d2 = last - values[m - 2];
    let denom = d2 - d1;
    if denom.norm() <= 1e-300 || d2.norm() >= d1.norm() {
        return last;
    }
    last - d2 * d2 / denom
}

/// Residuals at or below this fraction of the value count as converged.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

fn sigma_table(
    schedule: &[f64],
    values: &[Complex64],
) -> Result<(Complex64, Vec<(f64, f64)>)> {
    let limit = extrapolate(values);
    let residuals: Vec<(f64, f64)> = schedule
        .iter()
        .zip(values)
        .map(|(&s, v)| (s, (v - limit).norm()))
        .collect();
    let tail: Vec<f64> = residuals.iter().rev().take(3).map(|r| r.1).collect();
    let floor = RESIDUAL_FLOOR * limit.norm().max(1.0);
    let decreasing = tail.windows(2).all(|w| w[0] < w[1]);
    // The last residual of a geometric sequence is small but not zero after
    // Aitken, so the last three are compared directly.
    if tail.len() == 3 && !decreasing && tail[0] > floor {
        return Err(Error::NonConvergence {
            what: "sigma regularization".into(),
            residuals: residuals.iter().map(|r| r.1).collect(),
        });
    }
    Ok((limit, residuals))
}

/// `lim_{σ→∞} I(g(·/σ) a, φ) f(x)` by direct quadrature per `σ`, reported
/// together with the gap to the other cutoff kind.
pub fn regularized_fio_apply(
    a: &SymbolField,
    phi: &PhaseField,
    f: &SymbolField,
    x: &[f64],
    schedule: &[f64],
    cutoff: CutoffSpec,
    quad: &QuadSpec,
) -> Result<OscIntegralResult> {
    let s = Setup { a, phi, f, x };
    s.check()?;
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("sigma schedule must be increasing".into()));
    }
    let ry = quad.y_radius.unwrap_or_else(|| decay_radius(f));
    let run = |c: CutoffSpec| -> Vec<Complex64> {
        schedule
            .iter()
            .map(|&sigma| regularized_value(&s, sigma, c, quad, ry))
            .collect()
    };
    let values = run(cutoff);
    let (value, residuals) = sigma_table(schedule, &values)?;
    let other = run(cutoff.other());
    let other_limit = extrapolate(&other);
    let other_residuals = schedule
        .iter()
        .zip(&other)
        .map(|(&s, v)| (s, (v - other_limit).norm()))
        .collect();
    let gap = (value - other[other.len() - 1]).norm();
    Ok(OscIntegralResult {
        value,
        sigma_values: schedule.iter().copied().zip(values).collect(),
        sigma_residuals: residuals,
        cutoff_gap: Some(gap),
        other_residuals,
        ibp_order: None,
        truncation_radius: None,
        tails: Vec::new(),
        eps0: None,
    })
}

/// Parameters of the integration-by-parts route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbpSpec {
    pub k: usize,
    /// Half-width of the `(y, θ)` box for the value.
    pub radius: f64,
    /// Radii `R` at which the tail `T(R)` is measured (scanned to `2R`).
    pub tail_radii: Vec<f64>,
    /// Partition parameter; `None` runs [`choose_eps0`].
    pub eps0: Option<f64>,
    pub quad: QuadSpec,
}

impl IbpSpec {
    pub fn new(k: usize, radius: f64) -> Self {
        IbpSpec {
            k,
            radius,
            tail_radii: Vec::new(),
            eps0: None,
            quad: QuadSpec::default(),
        }
    }
}

/// Per-axis bounding intervals of `{0.8 ≤ t ≤ 2.2}` on the coarse nodes
/// where `f` is not negligible, widened by one coarse spacing.
fn transition_zone(
    s: &Setup<'_>,
    eps0: f64,
    nodes: &[(Vec<f64>, f64)],
    (hy, ht): (f64, f64),
) -> Option<Vec<(f64, f64)>> {
    let n = s.phi.n();
    let fmax = nodes
        .iter()
        .map(|(q, _)| s.f.eval(&q[..n]).norm())
        .fold(0.0, f64::max);
    let dim = nodes.first()?.0.len();
    let hits: Vec<&Vec<f64>> = nodes
        .par_iter()
        .filter(|(q, _)| {
            if s.f.eval(&q[..n]).norm() <= 1e-16 * fmax {
                return false;
            }
            let p = s.full(q);
            let g = s.phi.grad(&p);
            let d: f64 = g[n..].iter().map(|c| c * c).sum();
            let t = d / (bracket(&p).powi(2) * eps0);
            (0.8..=2.2).contains(&t)
        })
        .map(|(q, _)| q)
        .collect();
    if hits.is_empty() {
        return None;
    }
    Some(
        (0..dim)
            .map(|i| {
                let h = if i < n { hy } else { ht };
                let lo = hits.iter().map(|q| q[i]).fold(f64::INFINITY, f64::min);
                let hi = hits.iter().map(|q| q[i]).fold(f64::NEG_INFINITY, f64::max);
                (lo - h, hi + h)
            })
            .collect(),
    )
}

struct Sample {
    q: Vec<f64>,
    value: Complex64,
}

fn ibp_sample(
    s: &Setup<'_>,
    space: &Arc<JetSpace>,
    eps0: f64,
    k: usize,
    q: &[f64],
) -> Option<Complex64> {
    let n = s.phi.n();
    let nv = q.len();
    let vars = Jet::variables(space, q);
    let consts: Vec<Jet> = s.x.iter().map(|&c| Jet::constant(space, c)).collect();
    let full: Vec<Jet> = consts.iter().chain(&vars).cloned().collect();
    let fj = s.f.eval_jet(&vars[..n])?;
    if fj.is_negligible(PRUNE_TOL) {
        return None;
    }
    let phase = s.phi.eval_jet(&full);
    let grads: Vec<Jet> = (0..nv).map(|j| phase.d(j)).collect();
    let d = grads
        .iter()
        .skip(1)
        .fold(&grads[0] * &grads[0], |acc, g| acc + g * g);
    let lam2 = full
        .iter()
        .fold(Jet::constant(space, 1.0), |acc, v| acc + v * v);
    let t = &d * &lam2.recip().scale(1.0 / eps0);
    let omega = t.bump();
    let w0 = omega.value();
    let p = s.full(q);
    let e = Complex64::from_polar(1.0, phase.value());
    let mut out = Complex64::new(0.0, 0.0);
    if w0 > 0.0 {
        out += e * w0 * s.a.eval(&p) * fj.value();
    }
    if t.value() > 1.0 {
        let aj = s.a.eval_jet(&full)?;
        let one_minus = omega.scale(-1.0).add_const(1.0);
        let u = aj.mul(&fj).mul_real(&one_minus).truncate(k);
        out += e * transpose_power(&phase, u, k).value();
    }
    Some(out)
}

/// `I(a, φ) f(x)` as `∬ e^{iφ} ω a f + ∬ e^{iφ} (ᵗL)^k[(1 − ω) a f]` over
/// `[-R, R]^{n+N}` with no regularization.
pub fn fio_apply_ibp(
    a: &SymbolField,
    phi: &PhaseField,
    f: &SymbolField,
    x: &[f64],
    spec: &IbpSpec,
) -> Result<OscIntegralResult> {
    let s = Setup { a, phi, f, x };
    s.check()?;
    let k = spec.k;
    if k > 0 && (!a.is_exact() || !f.is_exact()) {
        return Err(Error::OrderTooHigh { order: k, max: 0 });
    }
    let eps0 = match spec.eps0 {
        Some(e) if e > 0.0 => e,
        Some(e) => return Err(Error::Validation(format!("eps0 = {e} must be positive"))),
        None => choose_eps0(phi, 8.0, 33, 1e4)?,
    };
    let (n, big_n) = (phi.n(), phi.big_n());
    let outer = spec
        .tail_radii
        .iter()
        .map(|r| 2.0 * r)
        .fold(spec.radius, f64::max);
    let ry = spec.quad.y_radius.unwrap_or_else(|| decay_radius(f)).min(outer);
    let (hy, ht) = spec.quad.spacing.unwrap_or_else(|| {
        let fy = s.max_frequency(ry, outer, phi.y_range());
        let ft = s.max_frequency(ry, outer, phi.theta_range());
        (
            spec.quad.safety * 2.0 * PI / (fy + spec.quad.band_margin),
            spec.quad.safety * 2.0 * PI / (ft + spec.quad.band_margin),
        )
    });
    let coarse_y: Vec<GradedAxis> = (0..n).map(|_| GradedAxis::uniform(ry, hy)).collect();
    let coarse_t: Vec<GradedAxis> = (0..big_n).map(|_| GradedAxis::uniform(outer, ht)).collect();
    let scan = tensor_nodes(&[coarse_y.clone(), coarse_t.clone()].concat());
    let zones = transition_zone(&s, eps0, &scan, (hy, ht));
    let fine = spec.quad.fine_spacing;
    let graded = |r: f64, h: f64, i: usize| {
        GradedAxis::new(r, h, zones.as_ref().map(|z| z[i]), fine)
    };
    let fine_y: Vec<GradedAxis> = (0..n).map(|i| graded(ry, hy, i)).collect();
    let axes_t: Vec<GradedAxis> = (0..big_n).map(|i| graded(outer, ht, n + i)).collect();
    // y is refined only for θ inside the zone; elsewhere ω is constant in y.
    let nodes: Vec<(Vec<f64>, f64)> = tensor_nodes(&axes_t)
        .into_iter()
        .flat_map(|(t, wt)| {
            let inside = zones.as_ref().is_some_and(|z| {
                t.iter().zip(&z[n..]).all(|(c, (lo, hi))| (lo..=hi).contains(&c))
            });
            let ys = if inside { &fine_y } else { &coarse_y };
            tensor_nodes(ys).into_iter().map(move |(y, wy)| {
                ([y, t.clone()].concat(), wy * wt)
            })
        })
        .collect();
    let space = JetSpace::new(n + big_n, k + 1);
    let samples: Vec<Sample> = nodes
        .into_par_iter()
        .filter_map(|(q, w)| {
            let v = ibp_sample(&s, &space, eps0, k, &q)?;
            Some(Sample { q, value: v * w })
        })
        .collect();
    let weight = (2.0 * PI).powi(-(big_n as i32));
    let inf_norm = |q: &[f64]| q.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let r = spec.radius;
    let mut value = Complex64::new(0.0, 0.0);
    for smp in &samples {
        if inf_norm(&smp.q) <= r {
            let taper: f64 = smp.q[n..]
                .iter()
                .map(|&t| edge_taper(t, r, spec.quad.taper))
                .product();
            value += smp.value * taper;
        }
    }
    let tails = spec
        .tail_radii
        .iter()
        .map(|&tr| {
            let t: f64 = samples
                .iter()
                .filter(|smp| {
                    let m = inf_norm(&smp.q);
                    m > tr && m <= 2.0 * tr
                })
                .map(|smp| smp.value.norm())
                .sum();
            (tr, t * weight)
        })
        .collect();
    Ok(OscIntegralResult {
        value: value * weight,
        sigma_values: Vec::new(),
        sigma_residuals: Vec::new(),
        cutoff_gap: None,
        other_residuals: Vec::new(),
        ibp_order: Some(k),
        truncation_radius: Some(r),
        tails,
        eps0: Some(eps0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phases::{special_phase, GeneratingFunction};
    use crate::weights::WeightSpec;

    fn phase(src: &str) -> PhaseField {
        special_phase(&GeneratingFunction::parse(src, 1).unwrap())
    }

    fn amp(src: &str) -> SymbolField {
        SymbolField::parse(src, VarSpace::x_y_theta(1), WeightSpec::constant(1.0, 3), 0.0).unwrap()
    }

    fn test_fn(src: &str) -> SymbolField {
        SymbolField::parse(src, test_function_vars(1), WeightSpec::constant(1.0, 1), 0.0).unwrap()
    }

    #[test]
    fn omega_examples() {
        let phi = phase("x*theta");
        assert_eq!(omega_partition(&phi, 0.01, &[1.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(omega_partition(&phi, 0.01, &[0.0, 0.0, 5.0]).unwrap(), 0.0);
        // Quotient 1.5 ε: D = 1 at (x, y, θ) = (1, 0, 0), λ² = 2.
        let eps = 1.0 / 3.0;
        let w = omega_partition(&phi, eps, &[1.0, 0.0, 0.0]).unwrap();
        assert!(w > 0.0 && w < 1.0);
        assert!(omega_partition(&phi, 0.0, &[0.0; 3]).is_err());
    }

    #[test]
    fn transpose_coefficients() {
        let op = ibp_operator(&phase("x*theta"), 0.01).unwrap();
        let c = op.coefficients(&[0.0, 1.0, 1.0]).unwrap();
        let expected = Complex64::new(1.0, 0.0) / Complex64::new(0.0, 2.0);
        assert!((c.f[0] - expected).norm() < 1e-15);
        assert_eq!(op.h_second_order_part(&[0.0, 1.0, 1.0]).unwrap(), Complex64::new(0.0, 0.0));
        // With the derivative of 1/D: H = 4θ(x − y)/(i D²).
        let p = [0.5, -1.0, 2.0];
        let d: f64 = 4.0 + 1.5 * 1.5;
        let h = Complex64::new(4.0 * 2.0 * 1.5 / (d * d), 0.0) / Complex64::new(0.0, 1.0);
        assert!((op.coefficients(&p).unwrap().h - h).norm() < 1e-14);
        assert!(matches!(
            op.coefficients(&[1.0, 1.0, 0.0]),
            Err(Error::OutsideNonStationary { .. })
        ));
    }

    #[test]
    fn h_matches_transpose_of_l() {
        // ∫ (L v) u = ∫ v (ᵗL u) pointwise as the identity
        // ᵗL u = F·∇u + H u with H = −Σ ∂_j(∂_jφ/(iD)).
        let phi = phase("x*theta + theta^2/2");
        let op = ibp_operator(&phi, 1e-3).unwrap();
        let p = [0.3, -0.7, 1.9];
        let sp = JetSpace::new(2, 2);
        let vars = Jet::variables(&sp, &p[1..]);
        let full = [vec![Jet::constant(&sp, p[0])], vars.clone()].concat();
        let ph = phi.eval_jet(&full);
        // u = 1: ᵗL 1 = H.
        let one = ComplexJet::real(Jet::constant(&sp, 1.0).truncate(1));
        let h = transpose_power(&ph, one, 1).value();
        assert!((h - op.coefficients(&p).unwrap().h).norm() < 1e-13);
    }

    #[test]
    fn l_identity() {
        let op = ibp_operator(&phase("x*theta + theta^2/2"), 0.01).unwrap();
        for p in tensor_points(3, 3.0, 7) {
            if let Ok(err) = op.l_identity_error(&p) {
                assert!(err < 1e-12);
            }
        }
    }

    #[test]
    fn coefficient_decay_is_stable() {
        let op = ibp_operator(&phase("x*theta"), 0.1).unwrap();
        let b8 = op.coefficient_bounds(&tensor_points(3, 8.0, 17));
        let b16 = op.coefficient_bounds(&tensor_points(3, 16.0, 33));
        assert!(b8.samples > 0);
        for (u, v) in [
            (b8.f_lambda, b16.f_lambda),
            (b8.g_lambda, b16.g_lambda),
            (b8.h_lambda2, b16.h_lambda2),
        ] {
            assert!(v.is_finite() && v < 1.5 * u.max(1.0), "{u} {v}");
        }
    }

    #[test]
    fn sigma_closed_form() {
        let (a, phi, f) = (amp("1"), phase("x*theta"), test_fn("exp(-y^2/2)"));
        let r = regularized_fio_apply(
            &a,
            &phi,
            &f,
            &[0.0],
            &[2.0, 4.0, 8.0],
            CutoffSpec::gaussian(),
            &QuadSpec::default(),
        )
        .unwrap();
        for &(sigma, v) in &r.sigma_values {
            let s2 = sigma * sigma;
            let exact = 1.0 / (1.0 + 1.0 / s2 + 1.0 / (s2 * s2)).sqrt();
            assert!((v.re - exact).abs() < 1e-10, "{sigma}: {} vs {exact}", v.re);
            assert!(v.im.abs() < 1e-10);
        }
        assert!((r.value.re - 1.0).abs() < 1e-3);
    }

    #[test]
    fn absolutely_integrable_case() {
        let (a, phi, f) = (amp("exp(-theta^2)"), phase("x*theta"), test_fn("exp(-y^2/2)"));
        let r = regularized_fio_apply(
            &a,
            &phi,
            &f,
            &[0.0],
            &[4.0, 8.0, 16.0],
            CutoffSpec::gaussian(),
            &QuadSpec::default(),
        )
        .unwrap();
        // ∫ e^{-θ²} √(2π) e^{-θ²/2} dθ / 2π = 1/√3.
        assert!((r.value.re - 1.0 / 3f64.sqrt()).abs() < 1e-4);
        assert!(r.cutoff_gap.unwrap() < 1e-3);
    }

    #[test]
    fn ibp_small_box() {
        let (a, phi, f) = (amp("1"), phase("x*theta"), test_fn("exp(-y^2/2)"));
        let mut spec = IbpSpec::new(0, 10.0);
        spec.eps0 = Some(0.25);
        spec.quad.y_radius = Some(12.0);
        spec.quad.fine_spacing = 0.008;
        let v0 = fio_apply_ibp(&a, &phi, &f, &[0.5], &spec).unwrap().value;
        spec.k = 2;
        let v2 = fio_apply_ibp(&a, &phi, &f, &[0.5], &spec).unwrap().value;
        let exact = (-0.125f64).exp();
        assert!((v0.re - exact).abs() < 1e-8, "{v0}");
        assert!((v2.re - exact).abs() < 1e-6, "{v2}");
    }

    #[test]
    fn eps0_recipe() {
        let eps = choose_eps0(&phase("x*theta"), 8.0, 17, 1e4).unwrap();
        assert!(EPS0_CANDIDATES.contains(&eps));
        let (c, w) = majoration_constant(&phase("x*theta"), eps, &tensor_points(3, 8.0, 17), 0.5).unwrap();
        assert!(c < 1e4 && w.is_some());
    }

    #[test]
    fn aitken_on_geometric_sequence() {
        let v: Vec<Complex64> = (0..4).map(|j| Complex64::new(1.0 + 0.25f64.powi(j), 0.0)).collect();
        assert!((extrapolate(&v).re - 1.0).abs() < 1e-14);
    }
}
