//! Scenario runner: loads a config, executes its operations in order and
//! writes JSON results, CSV plot data and a manifest.

mod ops;
mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Config, Section};
use crate::error::{Error, Result};
use crate::expr::VarSpace;
use crate::grid::GridSpec;
use crate::oscillatory::test_function_vars;
use crate::phases::{parse_quadratic_terms, quadratic_generating, GeneratingFunction};
use crate::symbols::SymbolField;
use crate::weights::WeightSpec;

pub use ops::{Op, OperatorSpec};
pub use plot::{emit_plot_data, Plot, PlotKind};

/// Bundled scenarios as `(name, source)`.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fourier_inversion", include_str!("../../scenarios/fourier_inversion.cfg")),
    ("oscint_regularized", include_str!("../../scenarios/oscint_regularized.cfg")),
    ("oscint_ibp", include_str!("../../scenarios/oscint_ibp.cfg")),
    ("hypotheses", include_str!("../../scenarios/hypotheses.cfg")),
    ("symbol_suite", include_str!("../../scenarios/symbol_suite.cfg")),
    ("operator_norms", include_str!("../../scenarios/operator_norms.cfg")),
    ("ffstar_gaussian", include_str!("../../scenarios/ffstar_gaussian.cfg")),
    ("ffstar_dilation", include_str!("../../scenarios/ffstar_dilation.cfg")),
    ("cv_bound", include_str!("../../scenarios/cv_bound.cfg")),
    ("compactness", include_str!("../../scenarios/compactness.cfg")),
];

/// Source of a bundled scenario, by name with or without `.cfg`.
pub fn bundled(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Variable layout of a configured symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarsKind {
    XTheta,
    XYTheta,
    Y,
}

#[derive(Clone, Debug)]
pub struct SymbolDef {
    pub field: SymbolField,
    pub vars: VarsKind,
    pub n: usize,
}

/// A validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    /// SHA-256 of the canonical config text, after overrides.
    pub hash: String,
    pub phases: BTreeMap<String, GeneratingFunction>,
    pub symbols: BTreeMap<String, SymbolDef>,
    pub grids: BTreeMap<String, GridSpec>,
    pub ops: Vec<(String, Op)>,
}

fn parse_phase(s: &Section) -> Result<GeneratingFunction> {
    s.check_keys(&["generating", "coeffs", "n"])?;
    let n: usize = s.parse_or("n", 1)?;
    if n == 0 {
        return Err(s.invalid("n", "must be at least 1"));
    }
    let generating = s.require("generating")?;
    if generating == "quadratic" {
        let terms = parse_quadratic_terms(s.require("coeffs")?, n).map_err(|e| s.invalid("coeffs", e))?;
        quadratic_generating(&terms, n).map_err(|e| s.invalid("coeffs", e))
    } else {
        if s.get("coeffs").is_some() {
            return Err(s.invalid("coeffs", "only valid with generating = quadratic"));
        }
        let src = generating.strip_prefix("expr:").unwrap_or(generating);
        GeneratingFunction::parse(src, n).map_err(|e| s.invalid("generating", e))
    }
}

fn parse_symbol(s: &Section) -> Result<SymbolDef> {
    s.check_keys(&["expr", "imag", "vars", "n", "weight", "rho"])?;
    let n: usize = s.parse_or("n", 1)?;
    if n == 0 {
        return Err(s.invalid("n", "must be at least 1"));
    }
    let (vars, space) = match s.get("vars").unwrap_or("x_theta") {
        "x_theta" => (VarsKind::XTheta, VarSpace::x_theta(n)),
        "x_y_theta" => (VarsKind::XYTheta, VarSpace::x_y_theta(n)),
        "y" => (VarsKind::Y, test_function_vars(n)),
        other => return Err(s.invalid("vars", format!("unknown layout {other:?}"))),
    };
    let weight = WeightSpec::from_tag(s.get("weight").unwrap_or("const:1"), space.len())
        .map_err(|e| s.invalid("weight", e))?;
    let rho: f64 = s.parse_or("rho", 0.0)?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(s.invalid("rho", "must lie in [0, 1]"));
    }
    let mut field =
        SymbolField::parse(s.require("expr")?, space, weight, rho).map_err(|e| s.invalid("expr", e))?;
    if let Some(im) = s.get("imag") {
        field = field.with_imag(im).map_err(|e| s.invalid("imag", e))?;
    }
    Ok(SymbolDef { field, vars, n })
}

fn parse_grid(s: &Section) -> Result<GridSpec> {
    s.check_keys(&["dim", "radius", "points"])?;
    let dim: usize = s.parse_or("dim", 1)?;
    let radius: f64 = s.parse_req("radius")?;
    let points: usize = s.parse_req("points")?;
    if dim == 0 {
        return Err(s.invalid("dim", "must be at least 1"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(s.invalid("radius", "must be positive"));
    }
    if points < 2 {
        return Err(s.invalid("points", "must be at least 2"));
    }
    Ok(GridSpec::new(dim, radius, points))
}

impl Scenario {
    /// Parses and validates a scenario, applying `section.key=value`
    /// overrides first.
    pub fn load(src: &str, overrides: &[String]) -> Result<Scenario> {
        let mut cfg = Config::parse(src)?;
        for o in overrides {
            cfg.apply_override(o)?;
        }
        Scenario::from_config(&cfg)
    }

    pub fn from_config(cfg: &Config) -> Result<Scenario> {
        for s in &cfg.sections {
            let family = s.name.split('.').next().unwrap_or("");
            let named = s.name.contains('.');
            let known = match family {
                "scenario" => !named,
                "phase" | "symbol" | "grid" | "op" => named,
                _ => false,
            };
            if !known {
                return Err(Error::Config {
                    line: s.line,
                    column: 1,
                    message: format!("unknown section [{}]", s.name),
                });
            }
        }
        let head = cfg.section("scenario").ok_or_else(|| Error::Config {
            line: 1,
            column: 1,
            message: "missing [scenario] section".into(),
        })?;
        head.check_keys(&["name", "description", "operations"])?;
        let name = head.require("name")?.to_string();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(head.invalid("name", "use letters, digits, '_' or '-'"));
        }
        let mut sc = Scenario {
            name,
            description: head.get("description").unwrap_or("").to_string(),
            hash: hex::encode(Sha256::digest(cfg.canonical().as_bytes())),
            phases: BTreeMap::new(),
            symbols: BTreeMap::new(),
            grids: BTreeMap::new(),
            ops: Vec::new(),
        };
        for (k, s) in cfg.family("phase") {
            sc.phases.insert(k, parse_phase(s)?);
        }
        for (k, s) in cfg.family("symbol") {
            sc.symbols.insert(k, parse_symbol(s)?);
        }
        for (k, s) in cfg.family("grid") {
            sc.grids.insert(k, parse_grid(s)?);
        }
        let ops = cfg.family("op");
        let order: Vec<String> = head.list("operations")?;
        if order.is_empty() {
            return Err(head.invalid("operations", "list at least one operation"));
        }
        for op in &order {
            let s = ops
                .get(op)
                .ok_or_else(|| head.invalid("operations", format!("undefined operation {op:?}")))?;
            if sc.ops.iter().any(|(n, _)| n == op) {
                return Err(head.invalid("operations", format!("{op:?} listed twice")));
            }
            let parsed = Op::parse(s, &sc)?;
            sc.ops.push((op.clone(), parsed));
        }
        Ok(sc)
    }

    pub(crate) fn phase(&self, s: &Section, key: &str) -> Result<&GeneratingFunction> {
        let name = s.require(key)?;
        self.phases
            .get(name)
            .ok_or_else(|| s.invalid(key, format!("undefined phase {name:?}")))
    }

    pub(crate) fn symbol(&self, s: &Section, key: &str, vars: VarsKind, n: usize) -> Result<&SymbolDef> {
        let name = s.require(key)?;
        let def = self
            .symbols
            .get(name)
            .ok_or_else(|| s.invalid(key, format!("undefined symbol {name:?}")))?;
        if def.vars != vars || def.n != n {
            return Err(s.invalid(
                key,
                format!("symbol {name:?} must use vars = {vars:?} with n = {n}"),
            ));
        }
        Ok(def)
    }

    pub(crate) fn grid(&self, s: &Section, key: &str, dim: usize) -> Result<&GridSpec> {
        let name = s.require(key)?;
        let g = self
            .grids
            .get(name)
            .ok_or_else(|| s.invalid(key, format!("undefined grid {name:?}")))?;
        if g.dim != dim {
            return Err(s.invalid(key, format!("grid {name:?} has dim {}, expected {dim}", g.dim)));
        }
        Ok(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

/// One acceptance check inside an operation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool) -> Self {
        Check {
            name: name.into(),
            pass,
            value: None,
            threshold: None,
            detail: None,
        }
    }

    /// Passes when `value ≤ threshold` (NaN fails).
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            value: Some(value),
            threshold: Some(threshold),
            ..Check::new(name, value <= threshold)
        }
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OpResult {
    pub name: String,
    pub kind: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub checks: Vec<Check>,
    pub data: serde_json::Value,
    #[serde(skip)]
    pub plots: Vec<Plot>,
}

impl OpResult {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub name: String,
    pub kind: String,
    pub status: Status,
    pub checks_passed: usize,
    pub checks_total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// Summary of a run. Wall-clock times live in `timing.json` so that the
/// manifest itself is reproducible.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub scenario: String,
    pub description: String,
    pub scenario_hash: String,
    pub crate_version: String,
    pub module_versions: BTreeMap<String, String>,
    pub lambda_convention: String,
    pub grids: BTreeMap<String, GridSpec>,
    pub outcomes: Vec<Outcome>,
    pub files: Vec<FileEntry>,
    pub timing_file: String,
    pub exit_code: i32,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub results: Vec<OpResult>,
    pub out_dir: PathBuf,
    /// Seconds per operation, in execution order.
    pub timing: Vec<(String, f64)>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        self.manifest.exit_code
    }

    pub fn result(&self, op: &str) -> Option<&OpResult> {
        self.results.iter().find(|r| r.name == op)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub overrides: Vec<String>,
}

/// Loads `arg` as a file path, or else as a bundled scenario name.
pub fn resolve_source(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if path.is_file() {
        return Ok(fs::read_to_string(path)?);
    }
    bundled(arg)
        .map(str::to_string)
        .ok_or_else(|| Error::Validation(format!("no scenario file or bundled scenario named {arg:?}")))
}

/// Runs the scenario at `path` (a file or a bundled name).
pub fn run_scenario(path: &str, opts: &RunOptions) -> Result<RunReport> {
    let src = resolve_source(path)?;
    let sc = Scenario::load(&src, &opts.overrides)?;
    run(&sc, &opts.out_dir)
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Executes every operation of `sc`, writing into `out_root/<name>/`.
pub fn run(sc: &Scenario, out_root: &Path) -> Result<RunReport> {
    let dir = out_root.join(&sc.name);
    fs::create_dir_all(&dir)?;
    let mut results = Vec::new();
    let mut timing = Vec::new();
    let mut files = Vec::new();
    for (name, op) in &sc.ops {
        let start = Instant::now();
        let mut res = match op.execute(name, &dir) {
            Ok(r) => r,
            Err(e) if e.exit_code() == 1 => OpResult {
                name: name.clone(),
                kind: op.kind().into(),
                status: Status::Error,
                message: Some(e.to_string()),
                checks: Vec::new(),
                data: serde_json::Value::Null,
                plots: Vec::new(),
            },
            Err(e) => {
                return Err(Error::Operation {
                    op: name.clone(),
                    source: Box::new(e),
                })
            }
        };
        if res.status != Status::Error {
            res.status = if res.checks.iter().all(|c| c.pass) {
                Status::Pass
            } else {
                Status::Fail
            };
        }
        for plot in &res.plots {
            let file = format!("{name}_{}.csv", plot.kind.as_str());
            let path = dir.join(&file);
            emit_plot_data(plot, &sc.hash, &path)?;
            files.push(file);
        }
        if dir.join(format!("{name}.bin")).is_file() {
            files.push(format!("{name}.bin"));
        }
        timing.push((name.clone(), start.elapsed().as_secs_f64()));
        results.push(res);
    }

    #[derive(Serialize)]
    struct Results<'a> {
        scenario: &'a str,
        scenario_hash: &'a str,
        operations: &'a [OpResult],
    }
    write_json(
        &dir.join("results.json"),
        &Results {
            scenario: &sc.name,
            scenario_hash: &sc.hash,
            operations: &results,
        },
    )?;
    files.insert(0, "results.json".into());

    let exit_code = if results.iter().all(|r| r.status == Status::Pass) { 0 } else { 1 };
    let version = env!("CARGO_PKG_VERSION").to_string();
    let module_versions = ["weights", "symbols", "phases", "oscillatory", "operators", "pdo_check", "cli"]
        .iter()
        .map(|m| (m.to_string(), version.clone()))
        .collect();
    let manifest = RunManifest {
        scenario: sc.name.clone(),
        description: sc.description.clone(),
        scenario_hash: sc.hash.clone(),
        crate_version: version,
        module_versions,
        lambda_convention: "sqrt_sum_squares".into(),
        grids: sc.grids.clone(),
        outcomes: results
            .iter()
            .map(|r| Outcome {
                name: r.name.clone(),
                kind: r.kind.clone(),
                status: r.status,
                checks_passed: r.checks.iter().filter(|c| c.pass).count(),
                checks_total: r.checks.len(),
                message: r.message.clone(),
            })
            .collect(),
        files: files
            .iter()
            .map(|f| {
                Ok(FileEntry {
                    path: f.clone(),
                    sha256: sha256_file(&dir.join(f))?,
                })
            })
            .collect::<Result<_>>()?,
        timing_file: "timing.json".into(),
        exit_code,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;

    #[derive(Serialize)]
    struct Timing<'a> {
        scenario_hash: &'a str,
        seconds: BTreeMap<&'a str, f64>,
        total: f64,
    }
    write_json(
        &dir.join("timing.json"),
        &Timing {
            scenario_hash: &sc.hash,
            seconds: timing.iter().map(|(n, t)| (n.as_str(), *t)).collect(),
            total: timing.iter().map(|t| t.1).sum(),
        },
    )?;
    Ok(RunReport {
        manifest,
        results,
        out_dir: dir,
        timing,
    })
}
