//! Symbol-level checks on discretized `FF*` and `F*F`: extraction of the
//! Kohn–Nirenberg symbol, comparison with `|a|² |det ∂²S/∂x∂θ|^{-1}`,
//! Calderón–Vaillancourt seminorms and a singular-value compactness probe.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::operators::{DiscreteOperator, Provenance, Route};
use crate::phases::GeneratingFunction;
use crate::symbols::{multi_indices, SymbolField};
use crate::weights::bracket;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Which {
    FfStar,
    FStarF,
}

/// `(base point, |a|² |det ∂²S/∂x∂θ|^{-1})` at `(x, θ)`. The base point is
/// `(x, ∇_x S)` for `FF*` and `(∇_θ S, θ)` for `F*F`.
pub fn predicted_symbol(
    s: &GeneratingFunction,
    a: &SymbolField,
    x: &[f64],
    theta: &[f64],
    which: Which,
    delta0: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = s.n();
    if x.len() != n || theta.len() != n || a.dim() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len().min(theta.len()),
        });
    }
    let p = [x, theta].concat();
    let det = s.mixed_hess(&p).determinant();
    if det.abs() < delta0 {
        return Err(Error::DegenerateJacobian { det, floor: delta0 });
    }
    let value = a.eval(&p).norm_sqr() / det.abs();
    let base = match which {
        Which::FfStar => [x.to_vec(), s.grad_x(&p)].concat(),
        Which::FStarF => [s.grad_theta(&p), theta.to_vec()].concat(),
    };
    Ok((base, value))
}

/// Newton iterations allowed in [`theta_inverse`].
pub const NEWTON_CAP: usize = 50;

/// Solves `∇_x S(x, θ) = ξ` for `θ`; returns `θ` and the iteration count.
pub fn theta_inverse(
    s: &GeneratingFunction,
    x: &[f64],
    xi: &[f64],
    guess: &[f64],
    delta0: f64,
) -> Result<(Vec<f64>, usize)> {
    let n = s.n();
    let mut theta = DVector::from_column_slice(guess);
    let tol = 1e-12 * xi.iter().fold(1.0f64, |m, c| m.max(c.abs()));
    let mut residuals = Vec::new();
    for it in 0..=NEWTON_CAP {
        let p = [x, theta.as_slice()].concat();
        let g = s.grad_x(&p);
        let r = DVector::from_fn(n, |i, _| xi[i] - g[i]);
        let norm = r.norm();
        residuals.push(norm);
        if norm < tol {
            return Ok((theta.as_slice().to_vec(), it));
        }
        if it == NEWTON_CAP {
            break;
        }
        let j = s.mixed_hess(&p);
        let det = j.determinant();
        if det.abs() < 0.5 * delta0 {
            return Err(Error::DegenerateJacobian {
                det,
                floor: 0.5 * delta0,
            });
        }
        let step = j.lu().solve(&r).ok_or(Error::DegenerateJacobian {
            det,
            floor: 0.5 * delta0,
        })?;
        theta += step;
    }
    Err(Error::NonConvergence {
        what: "Newton inversion of the x-gradient".into(),
        residuals,
    })
}

/// Cosine spatial window `½(1 + cos(π r / L))`, `L` = `half_width` row
/// spacings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub half_width: usize,
}

impl Default for Window {
    fn default() -> Self {
        Window { half_width: 32 }
    }
}

impl Window {
    fn weight(&self, d: f64, h: f64) -> f64 {
        let l = self.half_width as f64 * h;
        if d.abs() >= l {
            0.0
        } else {
            0.5 * (1.0 + (PI * d / l).cos())
        }
    }
}

fn nearest_node(g: &GridSpec, x: &[f64]) -> Result<usize> {
    if x.len() != g.dim {
        return Err(Error::DimensionMismatch {
            expected: g.dim,
            got: x.len(),
        });
    }
    let h = g.spacing();
    let mut idx = 0;
    for &c in x {
        let j = ((c + g.radius) / h).round();
        if j < 0.0 || j >= g.points as f64 {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        idx = idx * g.points + j as usize;
    }
    Ok(idx)
}

/// `σ(x, ξ) = Σ_y w_y K(x, y) e^{-i(x−y)·ξ} W(x − y)` at the row node
/// nearest to `x`.
pub fn extract_symbol(
    op: &DiscreteOperator,
    x: &[f64],
    xi: &[f64],
    window: Window,
) -> Result<Complex64> {
    if window.half_width < 8 {
        return Err(Error::Validation(format!(
            "window half-width {} below 8 spacings",
            window.half_width
        )));
    }
    let nyquist = op.row_grid.nyquist();
    if xi.len() != op.row_grid.dim || xi.iter().any(|c| c.abs() > nyquist) {
        return Err(Error::OutOfBand {
            xi: xi.to_vec(),
            nyquist,
        });
    }
    let i = nearest_node(&op.row_grid, x)?;
    let xn = op.row_grid.node(i);
    let h = op.col_grid.spacing();
    let mut sum = Complex64::new(0.0, 0.0);
    for j in 0..op.ncols() {
        let y = op.col_grid.node(j);
        let w: f64 = xn
            .iter()
            .zip(&y)
            .map(|(a, b)| window.weight(a - b, h))
            .product();
        if w == 0.0 {
            continue;
        }
        let phase: f64 = xn.iter().zip(&y).zip(xi).map(|((a, b), k)| (a - b) * k).sum();
        sum += op.kernel(i, j) * op.col_weights[j] * w * Complex64::from_polar(1.0, -phase);
    }
    Ok(sum)
}

/// `U B U*` with `U` the unitary sampled Fourier transform, so position
/// becomes `θ` and frequency becomes `−y`. Requires DFT-aligned grids.
pub fn fourier_conjugate(op: &DiscreteOperator, theta_grid: &GridSpec) -> Result<DiscreteOperator> {
    if op.row_grid != op.col_grid {
        return Err(Error::GridMismatch("conjugation needs a square operator".into()));
    }
    let g = &op.row_grid;
    if !g.is_dual_of(theta_grid) {
        return Err(Error::NotDftAligned);
    }
    let (ys, ts) = (g.nodes(), theta_grid.nodes());
    let scale = (g.cell_volume() * theta_grid.cell_volume()).sqrt() / (2.0 * PI).powf(g.dim as f64 / 2.0);
    let u = DMatrix::from_fn(ts.len(), ys.len(), |k, j| {
        let d: f64 = ts[k].iter().zip(&ys[j]).map(|(a, b)| a * b).sum();
        Complex64::from_polar(scale, -d)
    });
    let w = vec![theta_grid.cell_volume(); theta_grid.len()];
    Ok(DiscreteOperator {
        matrix: &u * &op.matrix * u.adjoint(),
        row_grid: theta_grid.clone(),
        col_grid: theta_grid.clone(),
        row_weights: w.clone(),
        col_weights: w,
        provenance: Provenance {
            route: Route::Compose,
            config_hash: op.provenance.config_hash.clone(),
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolSample {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    /// Point at which the symbol is read off.
    pub base: Vec<f64>,
    pub lambda: f64,
    pub extracted: Complex64,
    pub predicted: f64,
    /// `|extracted − predicted| / predicted`, when `predicted` exceeds the
    /// floor.
    pub rel_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdoSymbolEstimate {
    pub which: Which,
    pub window: Window,
    pub points: usize,
    pub samples: Vec<SymbolSample>,
}

/// Predicted values below this are reported without a relative error.
pub const PREDICTED_FLOOR: f64 = 1e-12;

/// Extracted against predicted symbol at every `(x, θ)` sample. For
/// `F*F`, `op` is the Fourier conjugate of `F*F` (see [`fourier_conjugate`]).
pub fn compare_symbols(
    s: &GeneratingFunction,
    a: &SymbolField,
    op: &DiscreteOperator,
    samples: &[(Vec<f64>, Vec<f64>)],
    which: Which,
    window: Window,
    delta0: f64,
) -> Result<PdoSymbolEstimate> {
    let n = s.n();
    let out: Result<Vec<SymbolSample>> = samples
        .par_iter()
        .map(|(x, theta)| {
            let (base, predicted) = predicted_symbol(s, a, x, theta, which, delta0)?;
            let (pos, freq): (Vec<f64>, Vec<f64>) = match which {
                Which::FfStar => (base[..n].to_vec(), base[n..].to_vec()),
                Which::FStarF => (base[n..].to_vec(), base[..n].iter().map(|c| -c).collect()),
            };
            let extracted = extract_symbol(op, &pos, &freq, window)?;
            let rel_error = (predicted > PREDICTED_FLOOR)
                .then(|| (extracted - predicted).norm() / predicted);
            Ok(SymbolSample {
                x: x.clone(),
                theta: theta.clone(),
                lambda: bracket(&[x.as_slice(), theta.as_slice()].concat()),
                base,
                extracted,
                predicted,
                rel_error,
            })
        })
        .collect();
    Ok(PdoSymbolEstimate {
        which,
        window,
        points: op.row_grid.points,
        samples: out?,
    })
}

impl PdoSymbolEstimate {
    /// Largest relative error among samples with `λ ≥ lambda_min`.
    pub fn max_rel_error(&self, lambda_min: f64) -> Option<f64> {
        self.samples
            .iter()
            .filter(|s| s.lambda >= lambda_min)
            .filter_map(|s| s.rel_error)
            .fold(None, |m, e| Some(m.map_or(e, |m: f64| m.max(e))))
    }
}

/// Errors at or below this count as converged in the ratio test.
pub const RATIO_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioTest {
    /// `(λ, coarse error, fine error, ratio)` per sample with `λ ≥ λ_min`.
    pub rows: Vec<(f64, f64, f64, f64)>,
    pub max_ratio: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Two-resolution test of a `λ^{-2}` residual: the error at each sample
/// with `λ ≥ lambda_min` must shrink by `threshold` when the grid doubles.
pub fn ratio_test(
    coarse: &PdoSymbolEstimate,
    fine: &PdoSymbolEstimate,
    lambda_min: f64,
    threshold: f64,
) -> RatioTest {
    let rows: Vec<(f64, f64, f64, f64)> = coarse
        .samples
        .iter()
        .zip(&fine.samples)
        .filter(|(c, _)| c.lambda >= lambda_min)
        .filter_map(|(c, f)| {
            let (ec, ef) = (c.rel_error?, f.rel_error?);
            let ratio = if ef <= RATIO_FLOOR { 0.0 } else { ef / ec };
            Some((c.lambda, ec, ef, ratio))
        })
        .collect();
    let max_ratio = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    RatioTest {
        pass: !rows.is_empty() && max_ratio <= threshold,
        rows,
        max_ratio,
        threshold,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeminormReport {
    pub k: usize,
    pub q_k: f64,
    /// `(α, sup |∂^α σ|)` for every `|α| ≤ k`.
    pub terms: Vec<(Vec<usize>, f64)>,
}

/// `Q_k(σ) = Σ_{|α| ≤ k} sup_grid |∂^α σ|` over `(x, ξ)` nodes.
pub fn cv_seminorm(sigma: &SymbolField, k: usize, grid: &GridSpec) -> Result<SeminormReport> {
    if k > sigma.max_order() {
        return Err(Error::OrderTooHigh {
            order: k,
            max: sigma.max_order(),
        });
    }
    if grid.dim != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma.dim(),
            got: grid.dim,
        });
    }
    let nodes = grid.nodes();
    let terms: Result<Vec<(Vec<usize>, f64)>> = multi_indices(sigma.dim(), k)
        .into_iter()
        .map(|alpha| {
            let sup = nodes
                .par_iter()
                .map(|p| sigma.eval_derivative(p, &alpha).map(|d| d.value.norm()))
                .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
            Ok((alpha, sup))
        })
        .collect();
    let terms = terms?;
    Ok(SeminormReport {
        k,
        q_k: terms.iter().map(|t| t.1).sum(),
        terms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvBoundReport {
    pub norm: f64,
    pub gamma: f64,
    pub q_k: f64,
    /// `(γ Q_k)^{1/2}`.
    pub bound: f64,
    /// `‖F‖ / bound`; values near 1 mean the bound is sharp.
    pub ratio: f64,
    pub pass: bool,
}

/// Checks `‖F‖ ≤ (γ Q_k)^{1/2}` with the measured norm.
pub fn cv_bound_check(
    op: &DiscreteOperator,
    q: &SeminormReport,
    gamma: f64,
    tol: f64,
) -> Result<CvBoundReport> {
    let norm = op.operator_norm(tol)?;
    let bound = (gamma * q.q_k).sqrt();
    let ratio = if bound > 0.0 { norm / bound } else { f64::INFINITY };
    Ok(CvBoundReport {
        norm,
        gamma,
        q_k: q.q_k,
        bound,
        ratio,
        pass: norm <= bound * (1.0 + 10.0 * tol) || norm == 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "COMPACT-CONSISTENT")]
    CompactConsistent,
    #[serde(rename = "NONCOMPACT-CONSISTENT")]
    NoncompactConsistent,
    #[serde(rename = "INCONCLUSIVE")]
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactnessConfig {
    /// Index beyond which the tail is measured.
    pub index: usize,
    pub tail_max: f64,
    /// Allowed relative change of the tail under refinement.
    pub stability: f64,
    pub plateau: f64,
}

impl Default for CompactnessConfig {
    fn default() -> Self {
        CompactnessConfig {
            index: 64,
            tail_max: 0.01,
            stability: 0.1,
            plateau: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactnessReport {
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    /// Largest singular value with index `≥ cfg.index`, per resolution.
    pub tail: (f64, f64),
    /// Number of singular values at or above the plateau height.
    pub plateau_count: (usize, usize),
    pub verdict: Verdict,
}

/// Classifies the singular-value tails of the same operator at two
/// resolutions.
pub fn compactness_probe(
    coarse: &DiscreteOperator,
    fine: &DiscreteOperator,
    cfg: &CompactnessConfig,
) -> Result<CompactnessReport> {
    let sc = coarse.singular_values()?;
    let sf = fine.singular_values()?;
    let tail = |s: &[f64]| s.get(cfg.index).copied().unwrap_or(0.0);
    let count = |s: &[f64]| s.iter().filter(|&&v| v >= cfg.plateau).count();
    let (tc, tf) = (tail(&sc), tail(&sf));
    let (pc, pf) = (count(&sc), count(&sf));
    let stable = (tf - tc).abs() <= cfg.stability * tc.max(tf) || tc.max(tf) <= 1e-14;
    let verdict = if tc < cfg.tail_max && tf < cfg.tail_max && stable {
        Verdict::CompactConsistent
    } else if pc > 0 && pf > pc {
        Verdict::NoncompactConsistent
    } else {
        Verdict::Inconclusive
    };
    Ok(CompactnessReport {
        coarse: sc,
        fine: sf,
        tail: (tc, tf),
        plateau_count: (pc, pf),
        verdict,
    })
}
