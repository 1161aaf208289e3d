//! Tempered weights `m: ℝ^d → [0, ∞)` and sampled temperedness checks.
//!
//! A weight is tempered when `m(x) ≤ C0 · m(x1) · (1 + |x1 - x|)^l` for all
//! pairs. The check here only ever sees finitely many pairs, so it reports
//! an estimated `C0` and whether it stayed below a cap.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, VarSpace};

/// Default cap on the estimated temperedness constant.
pub const DEFAULT_C0_CAP: f64 = 1e6;

/// How the Japanese bracket `λ(v)` is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaConvention {
    /// `(1 + |v|²)^{1/2}`, smooth everywhere.
    #[default]
    SqrtSumSquares,
    /// `1 + |v|`.
    OnePlusNorm,
}

impl LambdaConvention {
    pub fn eval(self, v: &[f64]) -> f64 {
        let sq: f64 = v.iter().map(|c| c * c).sum();
        match self {
            LambdaConvention::SqrtSumSquares => (1.0 + sq).sqrt(),
            LambdaConvention::OnePlusNorm => 1.0 + sq.sqrt(),
        }
    }
}

/// Smooth-convention bracket `λ(v) = (1 + |v|²)^{1/2}`.
pub fn bracket(v: &[f64]) -> f64 {
    LambdaConvention::SqrtSumSquares.eval(v)
}

#[derive(Clone, Debug)]
enum Kind {
    Lambda { p: f64, conv: LambdaConvention },
    Const(f64),
    Formula(Arc<Expr>),
    Product(Box<WeightSpec>, Box<WeightSpec>),
}

/// A closed-form positive weight with optional temperedness metadata.
#[derive(Clone, Debug)]
pub struct WeightSpec {
    dim: usize,
    kind: Kind,
    c0: Option<f64>,
    l: Option<f64>,
    tag: String,
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag)
    }
}

impl WeightSpec {
    /// `λ^p` on `ℝ^dim`, tempered with `C0 = 1`, `l = |p|`.
    pub fn lambda(p: f64, dim: usize, conv: LambdaConvention) -> Self {
        assert!(dim >= 1, "weight dimension must be positive");
        let tag = match conv {
            LambdaConvention::SqrtSumSquares => format!("lambda:p={p}"),
            LambdaConvention::OnePlusNorm => format!("lambda:p={p},conv=one_plus_norm"),
        };
        WeightSpec {
            dim,
            kind: Kind::Lambda { p, conv },
            c0: Some(1.0),
            l: Some(p.abs()),
            tag,
        }
    }

    pub fn constant(c: f64, dim: usize) -> Self {
        WeightSpec {
            dim,
            kind: Kind::Const(c),
            c0: Some(1.0),
            l: Some(0.0),
            tag: format!("const:{c}"),
        }
    }

    /// A weight given by a formula over `v` (or `v1..vd`); temperedness is
    /// unknown until verified.
    pub fn formula(src: &str, dim: usize) -> Result<Self> {
        let expr = Expr::parse(src, &VarSpace::weight(dim))?;
        Ok(WeightSpec {
            dim,
            kind: Kind::Formula(Arc::new(expr)),
            c0: None,
            l: None,
            tag: format!("expr:{src}"),
        })
    }

    /// Parses a config tag: `lambda:p=2[,conv=one_plus_norm]`, `const:1`
    /// or `expr:<formula>`.
    pub fn from_tag(tag: &str, dim: usize) -> Result<Self> {
        let bad = |msg: &str| Error::Validation(format!("weight tag {tag:?}: {msg}"));
        let (kind, rest) = tag.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        match kind.trim() {
            "lambda" => {
                let mut p = None;
                let mut conv = LambdaConvention::default();
                for item in rest.split(',') {
                    let (k, v) = item.split_once('=').ok_or_else(|| bad("expected key=value"))?;
                    match k.trim() {
                        "p" => p = Some(v.trim().parse::<f64>().map_err(|_| bad("bad exponent"))?),
                        "conv" => {
                            conv = match v.trim() {
                                "sqrt_sum_squares" => LambdaConvention::SqrtSumSquares,
                                "one_plus_norm" => LambdaConvention::OnePlusNorm,
                                _ => return Err(bad("unknown convention")),
                            }
                        }
                        _ => return Err(bad("unknown key")),
                    }
                }
                Ok(WeightSpec::lambda(p.ok_or_else(|| bad("missing p"))?, dim, conv))
            }
            "const" => {
                let c = rest.trim().parse::<f64>().map_err(|_| bad("bad constant"))?;
                if c < 0.0 {
                    return Err(bad("negative constant"));
                }
                Ok(WeightSpec::constant(c, dim))
            }
            "expr" => WeightSpec::formula(rest.trim(), dim),
            _ => Err(bad("unknown weight kind")),
        }
    }

    /// Attaches temperedness constants, e.g. after a successful check.
    pub fn with_constants(mut self, c0: f64, l: f64) -> Self {
        self.c0 = Some(c0);
        self.l = Some(l);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn c0(&self) -> Option<f64> {
        self.c0
    }

    pub fn l(&self) -> Option<f64> {
        self.l
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        match &self.kind {
            Kind::Lambda { p, conv } => conv.eval(v).powf(*p),
            Kind::Const(c) => *c,
            Kind::Formula(e) => e.eval(v),
            Kind::Product(a, b) => a.eval(v) * b.eval(v),
        }
    }

    /// True when the weight tends to zero at infinity along every sampled
    /// direction (used to classify compactness scenarios).
    pub fn vanishes_at_infinity(&self) -> bool {
        let far = 1e6;
        (0..self.dim).all(|i| {
            let mut v = vec![0.0; self.dim];
            v[i] = far;
            let plus = self.eval(&v);
            v[i] = -far;
            plus < 1e-3 && self.eval(&v) < 1e-3
        })
    }
}

/// Pointwise product; constants multiply and exponents add when both known.
pub fn weight_product(w1: &WeightSpec, w2: &WeightSpec) -> Result<WeightSpec> {
    if w1.dim != w2.dim {
        return Err(Error::DimensionMismatch {
            expected: w1.dim,
            got: w2.dim,
        });
    }
    let (c0, l) = match (w1.c0, w1.l, w2.c0, w2.l) {
        (Some(c1), Some(l1), Some(c2), Some(l2)) => (Some(c1 * c2), Some(l1 + l2)),
        _ => (None, None),
    };
    Ok(WeightSpec {
        dim: w1.dim,
        kind: Kind::Product(Box::new(w1.clone()), Box::new(w2.clone())),
        c0,
        l,
        tag: format!("({})*({})", w1.tag, w2.tag),
    })
}

pub fn lambda_weight(p: f64, dim: usize, conv: LambdaConvention) -> WeightSpec {
    WeightSpec::lambda(p, dim, conv)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TemperedReport {
    pub c0_estimate: f64,
    pub l_candidate: f64,
    pub pass: bool,
    /// Pair `(x, x1)` attaining the estimate.
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
}

/// Estimates `C0 = max m(x) / (m(x1) (1 + |x1 - x|)^l)` over the pairs.
pub fn verify_tempered(
    w: &WeightSpec,
    pairs: &[(Vec<f64>, Vec<f64>)],
    l_candidate: f64,
) -> Result<TemperedReport> {
    verify_tempered_capped(w, pairs, l_candidate, DEFAULT_C0_CAP)
}

pub fn verify_tempered_capped(
    w: &WeightSpec,
    pairs: &[(Vec<f64>, Vec<f64>)],
    l_candidate: f64,
    cap: f64,
) -> Result<TemperedReport> {
    if pairs.is_empty() {
        return Err(Error::Validation("temperedness check needs at least one pair".into()));
    }
    let mut best = f64::NEG_INFINITY;
    let mut witness = None;
    for (x, x1) in pairs {
        if x.len() != w.dim || x1.len() != w.dim {
            return Err(Error::DimensionMismatch {
                expected: w.dim,
                got: x.len().min(x1.len()),
            });
        }
        let m1 = w.eval(x1);
        if m1 == 0.0 {
            return Err(Error::DegenerateWeight { point: x1.clone() });
        }
        let dist: f64 = x.iter().zip(x1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let ratio = w.eval(x) / (m1 * (1.0 + dist).powf(l_candidate));
        if ratio > best || ratio.is_nan() {
            best = ratio;
            witness = Some((x.clone(), x1.clone()));
        }
    }
    Ok(TemperedReport {
        c0_estimate: best,
        l_candidate,
        pass: best.is_finite() && best <= cap,
        witness,
    })
}

/// All ordered pairs of points of a tensor grid on `[-radius, radius]^dim`
/// with `points` nodes per axis.
pub fn grid_pairs(dim: usize, radius: f64, points: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let nodes = tensor_points(dim, radius, points);
    let mut out = Vec::with_capacity(nodes.len() * nodes.len());
    for a in &nodes {
        for b in &nodes {
            out.push((a.clone(), b.clone()));
        }
    }
    out
}

/// Nodes of a tensor grid on `[-radius, radius]^dim`, endpoints included.
pub fn tensor_points(dim: usize, radius: f64, points: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if points == 1 {
        vec![0.0]
    } else {
        (0..points)
            .map(|i| -radius + 2.0 * radius * i as f64 / (points - 1) as f64)
            .collect()
    };
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_examples() {
        let w0 = lambda_weight(0.0, 1, LambdaConvention::SqrtSumSquares);
        assert_eq!(w0.eval(&[5.0]), 1.0);
        assert_eq!((w0.c0(), w0.l()), (Some(1.0), Some(0.0)));
        let w2 = lambda_weight(2.0, 1, LambdaConvention::SqrtSumSquares);
        assert_eq!(w2.eval(&[0.0]), 1.0);
        let w1 = lambda_weight(1.0, 1, LambdaConvention::OnePlusNorm);
        assert_eq!(w1.eval(&[3.0]), 4.0);
    }

    #[test]
    fn lambda_one_is_tempered_with_unit_constant() {
        let w = lambda_weight(1.0, 1, LambdaConvention::OnePlusNorm);
        let r = verify_tempered(&w, &grid_pairs(1, 10.0, 81), 1.0).unwrap();
        assert!(r.pass);
        assert!(r.c0_estimate <= 1.0 + 1e-12);
    }

    #[test]
    fn inverse_lambda_is_tempered() {
        // Brute-force maximum of (1+|x1|)/((1+|x|)(1+|x1-x|)) over the grid is
        // 1, attained on the diagonal.
        let w = lambda_weight(-1.0, 1, LambdaConvention::OnePlusNorm);
        let pairs = grid_pairs(1, 10.0, 101);
        let oracle = pairs
            .iter()
            .map(|(x, x1)| (1.0 + x1[0].abs()) / ((1.0 + x[0].abs()) * (1.0 + (x1[0] - x[0]).abs())))
            .fold(0.0f64, f64::max);
        let r = verify_tempered(&w, &pairs, 1.0).unwrap();
        assert!(r.pass);
        assert!(r.c0_estimate <= 1.0 + 1e-12);
        assert!((r.c0_estimate - oracle).abs() < 1e-15);
    }

    #[test]
    fn exponential_weight_is_not_tempered() {
        let w = WeightSpec::formula("exp(v)", 1).unwrap();
        // At unit distance the ratio is e / 2^l exactly.
        let unit: Vec<_> = (0..20).map(|i| (vec![i as f64 + 1.0], vec![i as f64])).collect();
        let r = verify_tempered(&w, &unit, 3.0).unwrap();
        assert!((r.c0_estimate - std::f64::consts::E / 8.0).abs() < 1e-12);
        // Against a fixed anchor the ratio e^t / (1+t)^l is unbounded.
        let mut last = 0.0;
        for &t in &[10.0, 20.0, 40.0] {
            let pairs = vec![(vec![t], vec![0.0])];
            let r = verify_tempered(&w, &pairs, 3.0).unwrap();
            assert!(r.c0_estimate > last);
            last = r.c0_estimate;
        }
        let far: Vec<_> = (0..60).map(|i| (vec![i as f64], vec![0.0])).collect();
        let r = verify_tempered(&w, &far, 3.0).unwrap();
        assert!(!r.pass);
        assert_eq!(r.witness.unwrap().0, vec![59.0]);
    }

    #[test]
    fn degenerate_weight_is_an_error() {
        let w = WeightSpec::formula("v^2", 1).unwrap();
        let pairs = vec![(vec![1.0], vec![0.0])];
        assert!(matches!(
            verify_tempered(&w, &pairs, 1.0),
            Err(Error::DegenerateWeight { .. })
        ));
        assert!(verify_tempered(&w, &[], 1.0).is_err());
    }

    #[test]
    fn products() {
        let conv = LambdaConvention::OnePlusNorm;
        let l1 = lambda_weight(1.0, 1, conv);
        let l2 = lambda_weight(2.0, 1, conv);
        let l3 = lambda_weight(3.0, 1, conv);
        let lm1 = lambda_weight(-1.0, 1, conv);
        let p = weight_product(&l1, &l2).unwrap();
        assert_eq!(p.eval(&[0.0]), 1.0);
        assert_eq!((p.c0(), p.l()), (Some(1.0), Some(3.0)));
        for i in -20..=20 {
            let v = [i as f64 * 0.5];
            assert!((p.eval(&v) - l3.eval(&v)).abs() <= 1e-12 * l3.eval(&v));
            let q = weight_product(&l1, &lm1).unwrap();
            assert!((q.eval(&v) - 1.0).abs() < 1e-14);
        }
        let other = lambda_weight(1.0, 2, conv);
        assert!(weight_product(&l1, &other).is_err());
    }

    #[test]
    fn tags_parse() {
        let w = WeightSpec::from_tag("lambda:p=2", 2).unwrap();
        assert!((w.eval(&[1.0, 1.0]) - 3.0).abs() < 1e-14);
        let w = WeightSpec::from_tag("const:1", 1).unwrap();
        assert_eq!(w.eval(&[7.0]), 1.0);
        let w = WeightSpec::from_tag("expr:(1+|v|)^-1", 2).unwrap();
        assert!((w.eval(&[3.0, 4.0]) - 1.0 / 6.0).abs() < 1e-15);
        assert!(WeightSpec::from_tag("lambda:q=1", 1).is_err());
        assert!(WeightSpec::from_tag("bogus", 1).is_err());
    }

    #[test]
    fn vanishing_at_infinity() {
        assert!(WeightSpec::lambda(-1.0, 2, LambdaConvention::default()).vanishes_at_infinity());
        assert!(!WeightSpec::constant(1.0, 2).vanishes_at_infinity());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lambda_power_tempered(p in -4.0f64..4.0, x in -50.0f64..50.0, x1 in -50.0f64..50.0) {
                let w = lambda_weight(p, 1, LambdaConvention::OnePlusNorm);
                let r = verify_tempered(&w, &[(vec![x], vec![x1])], p.abs()).unwrap();
                prop_assert!(r.c0_estimate <= 1.0 + 1e-12);
            }

            #[test]
            fn conventions_within_sqrt2_power(p in -4.0f64..4.0, a in -30.0f64..30.0, b in -30.0f64..30.0) {
                let v = [a, b];
                let s = lambda_weight(p, 2, LambdaConvention::SqrtSumSquares).eval(&v);
                let o = lambda_weight(p, 2, LambdaConvention::OnePlusNorm).eval(&v);
                let ratio = o / s;
                let bound = 2f64.powf(p.abs() / 2.0);
                prop_assert!(ratio <= bound * (1.0 + 1e-12) && ratio >= (1.0 - 1e-12) / bound);
            }

            #[test]
            fn product_commutes_and_associates(p in -3.0f64..3.0, q in -3.0f64..3.0, r in -3.0f64..3.0, v in -20.0f64..20.0) {
                let conv = LambdaConvention::SqrtSumSquares;
                let (a, b, c) = (lambda_weight(p, 1, conv), lambda_weight(q, 1, conv), lambda_weight(r, 1, conv));
                let ab = weight_product(&a, &b).unwrap().eval(&[v]);
                let ba = weight_product(&b, &a).unwrap().eval(&[v]);
                prop_assert!((ab - ba).abs() <= 1e-14 * ab.abs());
                let l = weight_product(&weight_product(&a, &b).unwrap(), &c).unwrap().eval(&[v]);
                let rr = weight_product(&a, &weight_product(&b, &c).unwrap()).unwrap().eval(&[v]);
                prop_assert!((l - rr).abs() <= 1e-13 * l.abs());
            }
        }
    }
}
