use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Plot-ready series produced by the operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// `(sigma, residual)`.
    SigmaResiduals,
    /// `(index, s_j[, s_j refined])`.
    SingularValues,
    /// `(lambda, relative error[, refined])`.
    SymbolError,
    /// `(R, T(R))` per integration-by-parts order.
    TailDecay,
    /// `(multi-index number, C_alpha[, refined])`.
    Seminorms,
    /// Full symbol comparison table.
    SymbolTable,
}

impl PlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::SigmaResiduals => "sigma_residuals",
            PlotKind::SingularValues => "singular_values",
            PlotKind::SymbolError => "symbol_error",
            PlotKind::TailDecay => "tail_decay",
            PlotKind::Seminorms => "seminorms",
            PlotKind::SymbolTable => "symbol_table",
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            PlotKind::SigmaResiduals,
            PlotKind::SingularValues,
            PlotKind::SymbolError,
            PlotKind::TailDecay,
            PlotKind::Seminorms,
            PlotKind::SymbolTable,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::UnsupportedKind(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub kind: PlotKind,
    /// Column names with units in brackets where they apply.
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Plot {
    pub fn new(kind: PlotKind, header: &[&str], rows: Vec<Vec<f64>>) -> Self {
        Plot {
            kind,
            header: header.iter().map(|h| h.to_string()).collect(),
            rows,
        }
    }
}

/// Writes `plot` as CSV preceded by a `# scenario_hash=...` line.
pub fn emit_plot_data(plot: &Plot, scenario_hash: &str, path: &Path) -> Result<()> {
    let width = plot.header.len();
    let narrow = !matches!(plot.kind, PlotKind::SymbolTable);
    if narrow && !(2..=3).contains(&width) {
        return Err(Error::UnsupportedKind(format!(
            "{} with {width} columns",
            plot.kind.as_str()
        )));
    }
    if let Some(r) = plot.rows.iter().find(|r| r.len() != width) {
        return Err(Error::DimensionMismatch {
            expected: width,
            got: r.len(),
        });
    }
    let mut file = File::create(path)?;
    writeln!(file, "# scenario_hash={scenario_hash}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(&plot.header)?;
    for row in &plot.rows {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}
