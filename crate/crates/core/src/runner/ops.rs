use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::plot::{Plot, PlotKind};
use super::{Check, OpResult, Scenario, Status, SymbolDef, VarsKind};
use crate::config::Section;
use crate::error::{Error, Result};
use crate::expr::{Expr, VarSpace};
use crate::grid::GridSpec;
use crate::operators::{discretize_fio, relative_l2, sample, BuildConfig, DiscreteOperator, Route};
use crate::oscillatory::{
    fio_apply_ibp, ibp_operator, regularized_fio_apply, CutoffSpec, IbpSpec, OscIntegralResult, QuadSpec,
};
use crate::pdo_check::{
    compactness_probe, compare_symbols, cv_bound_check, cv_seminorm, fourier_conjugate, ratio_test,
    CompactnessConfig, Verdict, Which, Window,
};
use crate::phases::{
    gradient_check, lambda_equivalence, separation_pairs, special_phase, verify_g1, verify_g2, verify_g3,
    verify_h1, verify_h2, verify_h3, verify_h3star, verify_separation, CheckConfig, GeneratingFunction,
    HypothesisReport,
};
use crate::symbols::{derivative_symbol, product_symbol, reciprocal_symbol, verify_class, SeminormTable, SymbolField};

fn positive(s: &Section, key: &str, default: f64) -> Result<f64> {
    let v: f64 = s.parse_or(key, default)?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(s.invalid(key, "must be positive"));
    }
    Ok(v)
}

fn flag(s: &Section, key: &str) -> Result<bool> {
    s.parse_or(key, false)
}

/// Phase, amplitude and grids of a discretized operator.
#[derive(Clone, Debug)]
pub struct OperatorSpec {
    pub phase: GeneratingFunction,
    pub amplitude: SymbolField,
    pub grid: GridSpec,
    /// `θ` grid radius relative to the dual grid radius.
    pub theta_scale: f64,
    /// `θ` point count relative to the spatial point count.
    pub theta_points: f64,
    pub build: BuildConfig,
}

const OPERATOR_KEYS: [&str; 7] = ["kind", "phase", "symbol", "grid", "theta_scale", "theta_points", "route"];

impl OperatorSpec {
    fn parse(s: &Section, sc: &Scenario) -> Result<Self> {
        let phase = sc.phase(s, "phase")?.clone();
        let n = phase.n();
        let amplitude = sc.symbol(s, "symbol", VarsKind::XTheta, n)?.field.clone();
        let grid = sc.grid(s, "grid", n)?.clone();
        let theta_scale = positive(s, "theta_scale", 1.0)?;
        let theta_points = positive(s, "theta_points", 1.0)?;
        let build = match s.get("route").unwrap_or("spectral") {
            "spectral" => BuildConfig::spectral(),
            "kernel" => BuildConfig::kernel(s.parse_or("taper", 0.0)?),
            other => return Err(s.invalid("route", format!("unknown route {other:?}"))),
        };
        if build.route == Route::Spectral && (theta_scale != 1.0 || theta_points != 1.0) {
            return Err(s.invalid("route", "spectral route needs the dual theta grid"));
        }
        let spec = OperatorSpec {
            phase,
            amplitude,
            grid,
            theta_scale,
            theta_points,
            build,
        };
        if spec.theta_count(&spec.grid) < 2 {
            return Err(s.invalid("theta_points", "theta grid needs at least 2 points"));
        }
        Ok(spec)
    }

    fn theta_count(&self, g: &GridSpec) -> usize {
        (self.theta_points * g.points as f64).round() as usize
    }

    pub fn theta_grid(&self, g: &GridSpec) -> GridSpec {
        let d = g.dual();
        if self.theta_scale == 1.0 && self.theta_points == 1.0 {
            d
        } else {
            GridSpec::new(g.dim, d.radius * self.theta_scale, self.theta_count(g))
        }
    }

    pub fn build_on(&self, g: &GridSpec) -> Result<DiscreteOperator> {
        discretize_fio(&self.phase, &self.amplitude, g, g, &self.theta_grid(g), &self.build)
    }

    pub fn build(&self) -> Result<DiscreteOperator> {
        self.build_on(&self.grid)
    }
}

#[derive(Clone, Debug)]
pub struct VerifySymbol {
    symbol: SymbolDef,
    grid: GridSpec,
    max_order: usize,
    growth: f64,
    derivative: Option<Vec<usize>>,
    product: Option<SymbolField>,
    reciprocal: Option<(f64, f64, bool)>,
}

#[derive(Clone, Debug)]
pub struct VerifyPhase {
    phases: Vec<(String, GeneratingFunction)>,
    checks: Vec<String>,
    expect_fail: Vec<String>,
    cfg: CheckConfig,
    max_order: usize,
    eps0: f64,
    l_points: usize,
    l_radius: f64,
    seed: u64,
    separation: (f64, usize),
}

#[derive(Clone, Debug)]
pub enum OscRoute {
    Regularized {
        schedule: Vec<f64>,
        cutoff: CutoffSpec,
        gap_factor: f64,
    },
    Ibp {
        orders: Vec<usize>,
        radius: f64,
        tail_radii: (f64, f64),
        eps0: f64,
        agree_tol: f64,
        slope_tol: f64,
    },
}

#[derive(Clone, Debug)]
pub struct Oscint {
    phase: GeneratingFunction,
    amplitude: SymbolField,
    function: SymbolField,
    x: Vec<f64>,
    quad: QuadSpec,
    route: OscRoute,
    expected: Option<(Expr, f64)>,
}

#[derive(Clone, Debug)]
pub struct BuildOperator {
    op: OperatorSpec,
    identity: Option<(Vec<f64>, Vec<f64>, f64)>,
    compare: Option<(BuildConfig, f64)>,
    adjoint_tol: Option<f64>,
    expected_norm: Option<f64>,
    norm_tol: f64,
    power_tol: f64,
    ffstar_norm: bool,
    refine_tol: Option<f64>,
    save: bool,
}

#[derive(Clone, Debug)]
pub struct CheckFfstar {
    op: OperatorSpec,
    which: Which,
    samples: Vec<(Vec<f64>, Vec<f64>)>,
    lambda_min: f64,
    rel_tol: f64,
    ratio_max: f64,
    window: Window,
    delta0: f64,
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    op: OperatorSpec,
    expected_norm: Option<f64>,
    norm_tol: f64,
}

#[derive(Clone, Debug)]
pub struct CvCheck {
    op: OperatorSpec,
    sigma: SymbolField,
    k: usize,
    gamma: f64,
    seminorm_grid: GridSpec,
    tol: f64,
}

#[derive(Clone, Debug)]
pub struct Compactness {
    op: OperatorSpec,
    cfg: CompactnessConfig,
    expect: Verdict,
}

/// A validated operation.
#[derive(Clone, Debug)]
pub enum Op {
    VerifySymbol(Box<VerifySymbol>),
    VerifyPhase(Box<VerifyPhase>),
    Oscint(Box<Oscint>),
    BuildOperator(Box<BuildOperator>),
    CheckFfstar(Box<CheckFfstar>),
    Spectrum(Box<Spectrum>),
    CvCheck(Box<CvCheck>),
    Compactness(Box<Compactness>),
}

const PHASE_CHECKS: [&str; 11] = [
    "g1", "g2", "g3", "h1", "h2", "h3", "h3star", "separation", "l_identity", "lambda_equivalence", "gradient",
];

fn with_keys(s: &Section, extra: &[&str]) -> Result<()> {
    let mut keys: Vec<&str> = OPERATOR_KEYS.to_vec();
    keys.extend_from_slice(extra);
    if s.get("route") == Some("kernel") {
        keys.push("taper");
    }
    s.check_keys(&keys)
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::VerifySymbol(_) => "verify-symbol",
            Op::VerifyPhase(_) => "verify-phase",
            Op::Oscint(_) => "oscint",
            Op::BuildOperator(_) => "build-operator",
            Op::CheckFfstar(_) => "check-ffstar",
            Op::Spectrum(_) => "spectrum",
            Op::CvCheck(_) => "cv-check",
            Op::Compactness(_) => "compactness",
        }
    }

    pub(crate) fn parse(s: &Section, sc: &Scenario) -> Result<Op> {
        match s.require("kind")? {
            "verify-symbol" => {
                s.check_keys(&[
                    "kind", "symbol", "grid", "max_order", "growth", "derivative", "product",
                    "reciprocal_c0", "reciprocal_mu", "reciprocal_expect",
                ])?;
                let name = s.require("symbol")?;
                let symbol = sc
                    .symbols
                    .get(name)
                    .ok_or_else(|| s.invalid("symbol", format!("undefined symbol {name:?}")))?
                    .clone();
                let grid = sc.grid(s, "grid", symbol.field.dim())?.clone();
                let derivative = match s.get("derivative") {
                    None => None,
                    Some(_) => {
                        let a: Vec<usize> = s.list("derivative")?;
                        if a.len() != symbol.field.dim() {
                            return Err(s.invalid("derivative", "one order per variable"));
                        }
                        Some(a)
                    }
                };
                let product = match s.get("product") {
                    None => None,
                    Some(p) => {
                        let other = sc
                            .symbols
                            .get(p)
                            .ok_or_else(|| s.invalid("product", format!("undefined symbol {p:?}")))?;
                        if other.vars != symbol.vars || other.n != symbol.n {
                            return Err(s.invalid("product", "symbols use different variables"));
                        }
                        Some(other.field.clone())
                    }
                };
                let reciprocal = match s.get("reciprocal_c0") {
                    None => None,
                    Some(_) => {
                        let expect = match s.get("reciprocal_expect").unwrap_or("pass") {
                            "pass" => false,
                            "violation" => true,
                            other => {
                                return Err(s.invalid("reciprocal_expect", format!("expected pass or violation, got {other:?}")))
                            }
                        };
                        Some((positive(s, "reciprocal_c0", 1.0)?, s.parse_or("reciprocal_mu", 0.0)?, expect))
                    }
                };
                Ok(Op::VerifySymbol(Box::new(VerifySymbol {
                    max_order: s.parse_or("max_order", 2)?,
                    growth: positive(s, "growth", 1.5)?,
                    symbol,
                    grid,
                    derivative,
                    product,
                    reciprocal,
                })))
            }
            "verify-phase" => {
                s.check_keys(&[
                    "kind", "phase", "checks", "expect_fail", "radii", "points", "budget", "max_order", "cap",
                    "floor", "growth", "eps0", "l_points", "l_radius", "seed", "separation_radius",
                    "separation_points",
                ])?;
                let names: Vec<String> = s.list("phase")?;
                if names.is_empty() {
                    return Err(s.invalid("phase", "name at least one phase"));
                }
                let mut phases = Vec::new();
                for n in names {
                    let p = sc
                        .phases
                        .get(&n)
                        .ok_or_else(|| s.invalid("phase", format!("undefined phase {n:?}")))?;
                    phases.push((n, p.clone()));
                }
                let checks: Vec<String> = s.list("checks")?;
                let expect_fail: Vec<String> = s.list("expect_fail")?;
                for c in checks.iter().chain(&expect_fail) {
                    if !PHASE_CHECKS.contains(&c.as_str()) {
                        return Err(s.invalid("checks", format!("unknown check {c:?}")));
                    }
                }
                if checks.is_empty() {
                    return Err(s.invalid("checks", "list at least one check"));
                }
                if let Some(c) = expect_fail.iter().find(|c| !checks.contains(c)) {
                    return Err(s.invalid("expect_fail", format!("{c:?} is not among the checks")));
                }
                let d = CheckConfig::default();
                let radii: Vec<f64> = s.list_or("radii", d.radii.clone())?;
                if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) {
                    return Err(s.invalid("radii", "radii must be positive"));
                }
                let points = match s.get("points") {
                    None => None,
                    Some(_) => Some(s.parse_req::<usize>("points")?),
                };
                let cfg = CheckConfig {
                    radii,
                    points,
                    budget: s.parse_or("budget", d.budget)?,
                    cap: positive(s, "cap", d.cap)?,
                    floor: positive(s, "floor", d.floor)?,
                    growth: positive(s, "growth", d.growth)?,
                };
                Ok(Op::VerifyPhase(Box::new(VerifyPhase {
                    phases,
                    checks,
                    expect_fail,
                    cfg,
                    max_order: s.parse_or("max_order", 2)?,
                    eps0: positive(s, "eps0", 0.25)?,
                    l_points: s.parse_or("l_points", 100)?,
                    l_radius: positive(s, "l_radius", 8.0)?,
                    seed: s.parse_or("seed", 7)?,
                    separation: (positive(s, "separation_radius", 4.0)?, s.parse_or("separation_points", 9)?),
                })))
            }
            "oscint" => Ok(Op::Oscint(Box::new(Oscint::parse(s, sc)?))),
            "build-operator" => {
                with_keys(
                    s,
                    &[
                        "identity_widths", "identity_centers", "identity_tol", "compare_route", "compare_taper",
                        "route_tol", "adjoint_tol", "expected_norm", "norm_tol", "power_tol", "ffstar_norm",
                        "refine_tol", "save",
                    ],
                )?;
                let op = OperatorSpec::parse(s, sc)?;
                let identity = match s.get("identity_widths") {
                    None => None,
                    Some(_) => Some((
                        s.list("identity_widths")?,
                        s.list_or("identity_centers", vec![0.0])?,
                        positive(s, "identity_tol", 1e-6)?,
                    )),
                };
                let compare = match s.get("compare_route") {
                    None => None,
                    Some("kernel") => Some((BuildConfig::kernel(s.parse_or("compare_taper", 0.0)?), positive(s, "route_tol", 1e-10)?)),
                    Some("spectral") => {
                        if op.theta_scale != 1.0 || op.theta_points != 1.0 {
                            return Err(s.invalid("compare_route", "spectral route needs the dual theta grid"));
                        }
                        Some((BuildConfig::spectral(), positive(s, "route_tol", 1e-10)?))
                    }
                    Some(other) => return Err(s.invalid("compare_route", format!("unknown route {other:?}"))),
                };
                let adjoint_tol = match s.get("adjoint_tol") {
                    None => None,
                    Some(_) => Some(positive(s, "adjoint_tol", 1e-12)?),
                };
                let expected_norm = match s.get("expected_norm") {
                    None => None,
                    Some(_) => Some(s.parse_req::<f64>("expected_norm")?),
                };
                let refine_tol = match s.get("refine_tol") {
                    None => None,
                    Some(_) => Some(positive(s, "refine_tol", 0.01)?),
                };
                Ok(Op::BuildOperator(Box::new(BuildOperator {
                    op,
                    identity,
                    compare,
                    adjoint_tol,
                    expected_norm,
                    norm_tol: positive(s, "norm_tol", 1e-3)?,
                    power_tol: positive(s, "power_tol", 1e-8)?,
                    ffstar_norm: flag(s, "ffstar_norm")?,
                    refine_tol,
                    save: flag(s, "save")?,
                })))
            }
            "check-ffstar" => {
                with_keys(
                    s,
                    &["which", "x", "theta", "lambda_min", "rel_tol", "ratio_max", "window", "delta0"],
                )?;
                let op = OperatorSpec::parse(s, sc)?;
                if op.phase.n() != 1 {
                    return Err(s.invalid("phase", "symbol checks sample n = 1 phases"));
                }
                let which = match s.get("which").unwrap_or("ffstar") {
                    "ffstar" => Which::FfStar,
                    "fstarf" => Which::FStarF,
                    other => return Err(s.invalid("which", format!("expected ffstar or fstarf, got {other:?}"))),
                };
                let xs: Vec<f64> = s.list("x")?;
                let ts: Vec<f64> = s.list("theta")?;
                if xs.is_empty() || ts.is_empty() {
                    return Err(s.invalid("x", "x and theta need at least one value each"));
                }
                let samples = xs
                    .iter()
                    .flat_map(|&x| ts.iter().map(move |&t| (vec![x], vec![t])))
                    .collect();
                let half_width: usize = s.parse_or("window", 32)?;
                if half_width < 8 {
                    return Err(s.invalid("window", "at least 8 spacings"));
                }
                Ok(Op::CheckFfstar(Box::new(CheckFfstar {
                    op,
                    which,
                    samples,
                    lambda_min: s.parse_or("lambda_min", 3.0)?,
                    rel_tol: positive(s, "rel_tol", 0.05)?,
                    ratio_max: positive(s, "ratio_max", 0.6)?,
                    window: Window { half_width },
                    delta0: positive(s, "delta0", 0.1)?,
                })))
            }
            "spectrum" => {
                with_keys(s, &["expected_norm", "norm_tol"])?;
                Ok(Op::Spectrum(Box::new(Spectrum {
                    op: OperatorSpec::parse(s, sc)?,
                    expected_norm: match s.get("expected_norm") {
                        None => None,
                        Some(_) => Some(s.parse_req::<f64>("expected_norm")?),
                    },
                    norm_tol: positive(s, "norm_tol", 1e-3)?,
                })))
            }
            "cv-check" => {
                with_keys(s, &["sigma", "k", "gamma", "seminorm_grid", "tol"])?;
                let op = OperatorSpec::parse(s, sc)?;
                let n = op.phase.n();
                let sigma = sc.symbol(s, "sigma", VarsKind::XTheta, n)?.field.clone();
                let k: usize = s.parse_or("k", 2 * n + 1)?;
                if k > sigma.max_order() {
                    return Err(s.invalid("k", format!("exceeds available order {}", sigma.max_order())));
                }
                Ok(Op::CvCheck(Box::new(CvCheck {
                    seminorm_grid: sc.grid(s, "seminorm_grid", 2 * n)?.clone(),
                    op,
                    sigma,
                    k,
                    gamma: positive(s, "gamma", 1.0)?,
                    tol: positive(s, "tol", 1e-8)?,
                })))
            }
            "compactness" => {
                with_keys(s, &["index", "tail_max", "stability", "plateau", "expect"])?;
                let d = CompactnessConfig::default();
                let expect = match s.require("expect")? {
                    "COMPACT-CONSISTENT" => Verdict::CompactConsistent,
                    "NONCOMPACT-CONSISTENT" => Verdict::NoncompactConsistent,
                    "INCONCLUSIVE" => Verdict::Inconclusive,
                    other => return Err(s.invalid("expect", format!("unknown verdict {other:?}"))),
                };
                Ok(Op::Compactness(Box::new(Compactness {
                    op: OperatorSpec::parse(s, sc)?,
                    cfg: CompactnessConfig {
                        index: s.parse_or("index", d.index)?,
                        tail_max: positive(s, "tail_max", d.tail_max)?,
                        stability: positive(s, "stability", d.stability)?,
                        plateau: positive(s, "plateau", d.plateau)?,
                    },
                    expect,
                })))
            }
            other => Err(s.invalid("kind", format!("unknown operation kind {other:?}"))),
        }
    }

    pub(crate) fn execute(&self, name: &str, dir: &Path) -> Result<OpResult> {
        let mut out = OpResult {
            name: name.to_string(),
            kind: self.kind().to_string(),
            status: Status::Pass,
            message: None,
            checks: Vec::new(),
            data: serde_json::Value::Null,
            plots: Vec::new(),
        };
        match self {
            Op::VerifySymbol(o) => o.run(&mut out)?,
            Op::VerifyPhase(o) => o.run(&mut out)?,
            Op::Oscint(o) => o.run(&mut out)?,
            Op::BuildOperator(o) => o.run(&mut out, &dir.join(format!("{name}.bin")))?,
            Op::CheckFfstar(o) => o.run(&mut out)?,
            Op::Spectrum(o) => o.run(&mut out)?,
            Op::CvCheck(o) => o.run(&mut out)?,
            Op::Compactness(o) => o.run(&mut out)?,
        }
        Ok(out)
    }
}

fn table_json(t: &SeminormTable) -> serde_json::Value {
    t.entries
        .iter()
        .map(|e| json!({"alpha": e.alpha, "constant": e.constant, "witness": e.witness}))
        .collect()
}

impl VerifySymbol {
    fn class_checks(&self, label: &str, a: &SymbolField, out: &mut OpResult) -> Result<serde_json::Value> {
        let order = self.max_order.min(a.max_order());
        let g = &self.grid;
        let base = verify_class(a, order, g)?;
        let fine = verify_class(a, order, &g.refined())?;
        let wide_grid = GridSpec::new(g.dim, 2.0 * g.radius, 2 * g.points);
        let wide = verify_class(a, order, &wide_grid)?;
        out.checks.push(Check::new(format!("{label}.finite"), base.all_finite() && fine.all_finite()));
        let monotone = base
            .entries
            .iter()
            .all(|e| fine.get(&e.alpha).is_some_and(|f| f >= e.constant * (1.0 - 1e-12)));
        out.checks.push(Check::new(format!("{label}.refinement_monotone"), monotone));
        let growth = base
            .entries
            .iter()
            .map(|e| wide.get(&e.alpha).unwrap_or(f64::NAN) / e.constant.max(1e-300))
            .fold(0.0, f64::max);
        out.checks.push(Check::at_most(format!("{label}.radius_growth"), growth, self.growth));
        if label == "base" {
            out.plots.push(Plot::new(
                PlotKind::Seminorms,
                &["multi_index", "constant", "constant_refined"],
                base.entries
                    .iter()
                    .enumerate()
                    .map(|(i, e)| vec![i as f64, e.constant, fine.get(&e.alpha).unwrap_or(f64::NAN)])
                    .collect(),
            ));
        }
        Ok(json!({
            "symbol": a.describe(),
            "weight": a.weight().tag(),
            "rho": a.rho(),
            "grid": g,
            "seminorms": table_json(&base),
            "refined": table_json(&fine),
            "wide": table_json(&wide),
        }))
    }

    fn run(&self, out: &mut OpResult) -> Result<()> {
        let a = &self.symbol.field;
        let mut data = serde_json::Map::new();
        data.insert("base".into(), self.class_checks("base", a, out)?);
        if let Some(alpha) = &self.derivative {
            let d = derivative_symbol(a, alpha)?;
            data.insert("derivative".into(), self.class_checks("derivative", &d, out)?);
        }
        if let Some(b) = &self.product {
            let p = product_symbol(a, b)?;
            data.insert("product".into(), self.class_checks("product", &p, out)?);
        }
        if let Some((c0, mu, expect_violation)) = self.reciprocal {
            match reciprocal_symbol(a, c0, mu, &self.grid) {
                Ok(r) => {
                    out.checks.push(
                        Check::new("reciprocal.lower_bound", !expect_violation)
                            .detail("lower bound holds on the grid"),
                    );
                    data.insert("reciprocal".into(), self.class_checks("reciprocal", &r, out)?);
                }
                Err(Error::LowerBoundViolation { witness, value, bound }) => {
                    out.checks.push(
                        Check::new("reciprocal.lower_bound", expect_violation)
                            .detail(format!("violated, witness {witness:?}: |a| = {value:e} < bound {bound:e}")),
                    );
                    data.insert(
                        "reciprocal".into(),
                        json!({"violation": {"witness": witness, "value": value, "bound": bound}}),
                    );
                }
                Err(e) => return Err(e),
            }
        }
        out.data = serde_json::Value::Object(data);
        Ok(())
    }
}

impl VerifyPhase {
    fn run(&self, out: &mut OpResult) -> Result<()> {
        let mut data = serde_json::Map::new();
        for (pname, s) in &self.phases {
            let phi = special_phase(s);
            let mut reports: Vec<HypothesisReport> = Vec::new();
            let mut extra = serde_json::Map::new();
            for check in &self.checks {
                let expect_fail = self.expect_fail.contains(check);
                let label = format!("{pname}.{check}");
                let report = match check.as_str() {
                    "g1" => verify_g1(s, &self.cfg),
                    "g2" => verify_g2(s, &self.cfg),
                    "g3" => verify_g3(s, self.max_order, &self.cfg),
                    "h1" => verify_h1(&phi, &self.cfg),
                    "h2" => verify_h2(&phi, self.max_order, &self.cfg),
                    "h3" => verify_h3(&phi, &self.cfg),
                    "h3star" => verify_h3star(&phi, &self.cfg),
                    "separation" => {
                        let (r, p) = self.separation;
                        verify_separation(s, &separation_pairs(s.n(), r, p), self.cfg.cap)?
                    }
                    "lambda_equivalence" => lambda_equivalence(s, self.eps0, &self.cfg)?,
                    "l_identity" => {
                        let (worst, count) = self.l_identity(&phi)?;
                        let ok = count >= self.l_points && worst < 1e-10;
                        let pass = ok != expect_fail;
                        out.checks.push(
                            Check {
                                value: Some(worst),
                                threshold: Some(1e-10),
                                ..Check::new(label, pass)
                            }
                            .detail(format!("{count} points in the non-stationary region")),
                        );
                        extra.insert("l_identity".into(), json!({"max_error": worst, "points": count}));
                        continue;
                    }
                    "gradient" => {
                        let pts = crate::weights::tensor_points(phi.dim(), 4.0, 9);
                        let err = gradient_check(&phi, &pts);
                        out.checks.push(Check::at_most(label, err, 1e-5));
                        extra.insert("gradient".into(), json!({"max_error": err}));
                        continue;
                    }
                    _ => unreachable!("validated check name"),
                };
                let pass = if expect_fail {
                    !report.pass && report.witness.is_some()
                } else {
                    report.pass
                };
                let detail = match (&report.witness, &report.reason) {
                    (Some(w), Some(r)) => format!("{r}; witness {w:?}"),
                    (None, Some(r)) => r.clone(),
                    _ => if expect_fail { "expected failure" } else { "holds" }.to_string(),
                };
                out.checks.push(Check::new(label, pass).detail(detail));
                reports.push(report);
            }
            extra.insert("generating".into(), json!(s.describe()));
            extra.insert("reports".into(), serde_json::to_value(&reports)?);
            data.insert(pname.clone(), serde_json::Value::Object(extra));
        }
        out.data = serde_json::Value::Object(data);
        Ok(())
    }

    /// Largest `L e^{iφ}` error over random points of the non-stationary
    /// region, with the number of points found.
    fn l_identity(&self, phi: &crate::phases::PhaseField) -> Result<(f64, usize)> {
        let op = ibp_operator(phi, self.eps0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let r = self.l_radius;
        let (mut worst, mut count) = (0.0f64, 0);
        for _ in 0..1000 * self.l_points.max(1) {
            if count == self.l_points {
                break;
            }
            let p: Vec<f64> = (0..phi.dim()).map(|_| rng.gen_range(-r..r)).collect();
            match op.l_identity_error(&p) {
                Ok(e) => {
                    worst = if e.is_nan() { f64::NAN } else { worst.max(e) };
                    count += 1;
                }
                Err(Error::OutsideNonStationary { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok((worst, count))
    }
}

impl Oscint {
    fn parse(s: &Section, sc: &Scenario) -> Result<Self> {
        s.check_keys(&[
            "kind", "route", "phase", "symbol", "function", "x", "schedule", "cutoff", "gap_factor", "orders",
            "radius", "tail_radii", "eps0", "agree_tol", "slope_tol", "y_radius", "fine_spacing", "taper",
            "expected", "expected_tol",
        ])?;
        let phase = sc.phase(s, "phase")?.clone();
        let n = phase.n();
        let amplitude = sc.symbol(s, "symbol", VarsKind::XYTheta, n)?.field.clone();
        let function = sc.symbol(s, "function", VarsKind::Y, n)?.field.clone();
        let x: Vec<f64> = s.list("x")?;
        if x.len() != n {
            return Err(s.invalid("x", format!("expected {n} coordinates")));
        }
        let mut quad = QuadSpec::default();
        if s.get("y_radius").is_some() {
            quad.y_radius = Some(positive(s, "y_radius", 1.0)?);
        }
        quad.fine_spacing = positive(s, "fine_spacing", quad.fine_spacing)?;
        quad.taper = s.parse_or("taper", quad.taper)?;
        let route = match s.require("route")? {
            "regularized" => {
                let schedule: Vec<f64> = s.list_or("schedule", vec![16.0, 32.0, 64.0])?;
                if schedule.is_empty() || schedule.windows(2).any(|w| w[1] <= w[0]) || schedule[0] <= 0.0 {
                    return Err(s.invalid("schedule", "must be positive and increasing"));
                }
                let cutoff = match s.get("cutoff").unwrap_or("gaussian") {
                    "gaussian" => CutoffSpec::gaussian(),
                    "bump" => CutoffSpec::bump(),
                    other => return Err(s.invalid("cutoff", format!("unknown cutoff {other:?}"))),
                };
                OscRoute::Regularized {
                    schedule,
                    cutoff,
                    gap_factor: positive(s, "gap_factor", 10.0)?,
                }
            }
            "ibp" => {
                let orders: Vec<usize> = s.list_or("orders", vec![0, 2, 4])?;
                if orders.is_empty() {
                    return Err(s.invalid("orders", "list at least one order"));
                }
                let tails: Vec<f64> = s.list_or("tail_radii", vec![12.0, 24.0])?;
                if tails.len() != 2 || !(tails[0] > 0.0 && tails[1] > tails[0]) {
                    return Err(s.invalid("tail_radii", "two increasing radii"));
                }
                OscRoute::Ibp {
                    orders,
                    radius: positive(s, "radius", 12.0)?,
                    tail_radii: (tails[0], tails[1]),
                    eps0: positive(s, "eps0", 0.25)?,
                    agree_tol: positive(s, "agree_tol", 1e-6)?,
                    slope_tol: positive(s, "slope_tol", 0.2)?,
                }
            }
            other => return Err(s.invalid("route", format!("unknown route {other:?}"))),
        };
        let expected = match s.get("expected") {
            None => None,
            Some(src) => {
                let vars = if n == 1 {
                    VarSpace::new(&["x"])
                } else {
                    VarSpace::new(&(1..=n).map(|i| format!("x{i}")).collect::<Vec<_>>())
                };
                let e = Expr::parse(src, &vars).map_err(|e| s.invalid("expected", e))?;
                Some((e, positive(s, "expected_tol", 1e-3)?))
            }
        };
        Ok(Oscint {
            phase,
            amplitude,
            function,
            x,
            quad,
            route,
            expected,
        })
    }

    fn check_expected(&self, label: &str, v: Complex64, out: &mut OpResult) {
        if let Some((e, tol)) = &self.expected {
            let exact = e.eval(&self.x);
            let err = (v - exact).norm() / exact.abs().max(1e-300);
            out.checks.push(Check::at_most(label, err, *tol).detail(format!("reference {exact}")));
        }
    }

    fn run(&self, out: &mut OpResult) -> Result<()> {
        let phi = special_phase(&self.phase);
        match &self.route {
            OscRoute::Regularized {
                schedule,
                cutoff,
                gap_factor,
            } => {
                let r = regularized_fio_apply(&self.amplitude, &phi, &self.function, &self.x, schedule, *cutoff, &self.quad)?;
                let res: Vec<f64> = r.sigma_residuals.iter().map(|t| t.1).collect();
                let monotone = res.windows(2).all(|w| w[1] < w[0]);
                out.checks.push(
                    Check::new("residuals_decreasing", monotone).detail(format!("{res:?}")),
                );
                let last = r.final_residual().unwrap_or(f64::NAN);
                let gap = r.cutoff_gap.unwrap_or(f64::NAN);
                out.checks.push(Check::at_most("cutoff_gap", gap, gap_factor * last));
                self.check_expected("value", r.value, out);
                out.plots.push(Plot::new(
                    PlotKind::SigmaResiduals,
                    &["sigma", "residual"],
                    r.sigma_residuals.iter().map(|t| vec![t.0, t.1]).collect(),
                ));
                out.data = serde_json::to_value(&r)?;
            }
            OscRoute::Ibp {
                orders,
                radius,
                tail_radii,
                eps0,
                agree_tol,
                slope_tol,
            } => {
                let mut runs: Vec<OscIntegralResult> = Vec::new();
                for &k in orders {
                    let mut spec = IbpSpec::new(k, *radius);
                    spec.tail_radii = vec![tail_radii.0, tail_radii.1];
                    spec.eps0 = Some(*eps0);
                    spec.quad = self.quad.clone();
                    runs.push(fio_apply_ibp(&self.amplitude, &phi, &self.function, &self.x, &spec)?);
                }
                let mut worst = 0.0f64;
                for i in 0..runs.len() {
                    for j in i + 1..runs.len() {
                        let (u, v) = (runs[i].value, runs[j].value);
                        worst = worst.max((u - v).norm() / u.norm().max(v.norm()).max(1e-300));
                    }
                }
                out.checks.push(Check::at_most("orders_agree", worst, *agree_tol));
                let slopes: Vec<f64> = runs
                    .iter()
                    .map(|r| r.tail_slope(tail_radii.0, tail_radii.1).unwrap_or(f64::NAN))
                    .collect();
                for (&k, &m) in orders.iter().zip(&slopes) {
                    let predicted = k as f64 - 1.0;
                    let dev = (m - predicted).abs() / predicted.abs().max(1.0);
                    out.checks.push(
                        Check::at_most(format!("slope_k{k}"), dev, *slope_tol)
                            .detail(format!("measured {m:.4}, predicted {predicted}")),
                    );
                }
                if let Some(i0) = orders.iter().position(|&k| k == 0) {
                    for (&k, &m) in orders.iter().zip(&slopes) {
                        if k > 0 {
                            let gain = m - slopes[i0];
                            out.checks.push(Check {
                                value: Some(gain),
                                threshold: Some(k as f64 - 1.0),
                                ..Check::new(format!("improvement_k{k}"), gain >= k as f64 - 1.0)
                            });
                        }
                    }
                }
                for r in &runs {
                    self.check_expected(&format!("value_k{}", r.ibp_order.unwrap_or(0)), r.value, out);
                }
                let mut rows = Vec::new();
                for r in &runs {
                    for &(rad, t) in &r.tails {
                        rows.push(vec![r.ibp_order.unwrap_or(0) as f64, rad, t]);
                    }
                }
                out.plots.push(Plot::new(PlotKind::TailDecay, &["k", "R", "tail_mass"], rows));
                out.data = json!({"runs": runs, "slopes": slopes, "max_relative_disagreement": worst});
            }
        }
        Ok(())
    }
}

fn gaussian(g: &GridSpec, center: f64, width: f64) -> Vec<Complex64> {
    sample(g, |p| {
        let r2: f64 = p.iter().map(|c| (c - center).powi(2)).sum();
        Complex64::new((-r2 / (2.0 * width * width)).exp(), 0.0)
    })
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

impl BuildOperator {
    fn run(&self, out: &mut OpResult, bin: &Path) -> Result<()> {
        let f = self.op.build()?;
        let g = &self.op.grid;
        let mut data = serde_json::Map::new();
        data.insert("rows".into(), json!(f.nrows()));
        data.insert("cols".into(), json!(f.ncols()));
        data.insert("theta_grid".into(), serde_json::to_value(self.op.theta_grid(g))?);
        data.insert("provenance".into(), serde_json::to_value(&f.provenance)?);
        if let Some((widths, centers, tol)) = &self.identity {
            let h = g.spacing();
            let mut rows = Vec::new();
            let mut worst = 0.0f64;
            for &w in widths {
                for &c in centers {
                    let u = gaussian(g, c, w * h);
                    let err = relative_l2(&f.apply(&u)?, &u);
                    worst = worst.max(err);
                    rows.push(json!({"width_spacings": w, "center": c, "relative_error": err}));
                }
            }
            out.checks.push(Check::at_most("fourier_identity", worst, *tol));
            data.insert("identity".into(), json!(rows));
        }
        if let Some((cfg, tol)) = &self.compare {
            let other = discretize_fio(&self.op.phase, &self.op.amplitude, g, g, &self.op.theta_grid(g), cfg)?;
            let diff = (&f.matrix - &other.matrix).norm() / f.matrix.norm().max(1e-300);
            out.checks.push(Check::at_most("routes_agree", diff, *tol));
            data.insert("route_difference".into(), json!(diff));
        }
        if let Some(tol) = self.adjoint_tol {
            let mut rng = ChaCha8Rng::seed_from_u64(0xad70);
            let u = random_vector(f.ncols(), &mut rng);
            let v = random_vector(f.nrows(), &mut rng);
            let lhs = f.row_inner(&f.apply(&u)?, &v);
            let rhs = f.col_inner(&u, &f.adjoint().apply(&v)?);
            let err = (lhs - rhs).norm() / lhs.norm().max(1e-300);
            out.checks.push(Check::at_most("adjoint_consistency", err, tol));
            data.insert("adjoint_error".into(), json!(err));
        }
        let need_norm = self.expected_norm.is_some() || self.ffstar_norm || self.refine_tol.is_some();
        if need_norm {
            let norm = f.operator_norm(self.power_tol)?;
            data.insert("norm".into(), json!(norm));
            if let Some(e) = self.expected_norm {
                let dev = (norm - e).abs() / e.abs().max(1e-300);
                out.checks.push(Check::at_most("norm_matches_sup", dev, self.norm_tol).detail(format!("measured {norm}, expected {e}")));
            }
            if self.ffstar_norm {
                let ff = f.compose(&f.adjoint())?.operator_norm(self.power_tol)?;
                let dev = (norm * norm - ff).abs() / ff.max(1e-300);
                out.checks.push(Check::at_most("norm_squared_is_ffstar_norm", dev, 2.0 * self.norm_tol));
                data.insert("ffstar_norm".into(), json!(ff));
            }
            if let Some(tol) = self.refine_tol {
                let fine = self.op.build_on(&g.refined())?.operator_norm(self.power_tol)?;
                let dev = (fine - norm).abs() / norm.max(1e-300);
                out.checks.push(Check::at_most("norm_refinement_stable", dev, tol).detail(format!("refined norm {fine}")));
                data.insert("refined_norm".into(), json!(fine));
            }
        }
        if self.save {
            f.save(bin)?;
            let back = DiscreteOperator::load(bin)?;
            out.checks.push(Check::new("persistence_roundtrip", back == f));
        }
        out.data = serde_json::Value::Object(data);
        Ok(())
    }
}

impl CheckFfstar {
    fn estimate(&self, g: &GridSpec) -> Result<crate::pdo_check::PdoSymbolEstimate> {
        let f = self.op.build_on(g)?;
        let target = match self.which {
            Which::FfStar => f.compose(&f.adjoint())?,
            Which::FStarF => fourier_conjugate(&f.adjoint().compose(&f)?, &g.dual())?,
        };
        compare_symbols(&self.op.phase, &self.op.amplitude, &target, &self.samples, self.which, self.window, self.delta0)
    }

    fn run(&self, out: &mut OpResult) -> Result<()> {
        let g = &self.op.grid;
        let coarse = self.estimate(g)?;
        let fine = self.estimate(&g.refined())?;
        for (label, est) in [("coarse", &coarse), ("fine", &fine)] {
            let e = est.max_rel_error(self.lambda_min).unwrap_or(f64::NAN);
            out.checks.push(Check::at_most(
                format!("symbol_error_m{}", est.points),
                e,
                self.rel_tol,
            ).detail(format!("{label} grid, samples with lambda >= {}", self.lambda_min)));
        }
        let ratio = ratio_test(&coarse, &fine, self.lambda_min, self.ratio_max);
        let worst = if ratio.rows.is_empty() { f64::NAN } else { ratio.max_ratio };
        out.checks.push(
            Check::at_most("refinement_ratio", worst, self.ratio_max)
                .detail(format!("{} samples compared", ratio.rows.len())),
        );
        out.plots.push(Plot::new(
            PlotKind::SymbolError,
            &["lambda", "relative_error", "relative_error_refined"],
            coarse
                .samples
                .iter()
                .zip(&fine.samples)
                .map(|(c, f)| vec![c.lambda, c.rel_error.unwrap_or(f64::NAN), f.rel_error.unwrap_or(f64::NAN)])
                .collect(),
        ));
        let mut rows = Vec::new();
        for est in [&coarse, &fine] {
            let n = self.op.phase.n();
            for s in &est.samples {
                rows.push(vec![
                    est.points as f64,
                    s.base[0],
                    s.base[n],
                    s.extracted.re,
                    s.extracted.im,
                    s.predicted,
                    s.rel_error.unwrap_or(f64::NAN),
                ]);
            }
        }
        out.plots.push(Plot::new(
            PlotKind::SymbolTable,
            &["points", "x", "xi", "extracted_re", "extracted_im", "predicted", "relative_error"],
            rows,
        ));
        out.data = json!({"coarse": coarse, "fine": fine, "ratio_test": ratio});
        Ok(())
    }
}

impl Spectrum {
    fn run(&self, out: &mut OpResult) -> Result<()> {
        let f = self.op.build()?;
        let s = f.singular_values()?;
        if let Some(e) = self.expected_norm {
            let top = s.first().copied().unwrap_or(0.0);
            out.checks.push(Check::at_most("largest_singular_value", (top - e).abs() / e.abs().max(1e-300), self.norm_tol));
        }
        out.plots.push(Plot::new(
            PlotKind::SingularValues,
            &["index", "singular_value"],
            s.iter().enumerate().map(|(i, v)| vec![i as f64, *v]).collect(),
        ));
        out.data = json!({"singular_values": s, "provenance": f.provenance});
        Ok(())
    }
}

impl CvCheck {
    fn run(&self, out: &mut OpResult) -> Result<()> {
        let f = self.op.build()?;
        let q = cv_seminorm(&self.sigma, self.k, &self.seminorm_grid)?;
        let r = cv_bound_check(&f, &q, self.gamma, self.tol)?;
        out.checks.push(Check {
            value: Some(r.norm),
            threshold: Some(r.bound),
            ..Check::new("norm_within_bound", r.pass)
        });
        out.data = json!({"seminorm": q, "bound": r});
        Ok(())
    }
}

impl Compactness {
    fn run(&self, out: &mut OpResult) -> Result<()> {
        let g = &self.op.grid;
        let coarse = self.op.build_on(g)?;
        let fine = self.op.build_on(&g.refined())?;
        let r = compactness_probe(&coarse, &fine, &self.cfg)?;
        let name = |v: Verdict| serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        out.checks.push(
            Check::new("verdict", r.verdict == self.expect)
                .detail(format!("{} (expected {}); tails {:?}", name(r.verdict), name(self.expect), r.tail)),
        );
        out.plots.push(Plot::new(
            PlotKind::SingularValues,
            &["index", "singular_value", "singular_value_refined"],
            r.fine
                .iter()
                .enumerate()
                .map(|(i, v)| vec![i as f64, r.coarse.get(i).copied().unwrap_or(f64::NAN), *v])
                .collect(),
        ));
        out.data = serde_json::to_value(&r)?;
        Ok(())
    }
}
