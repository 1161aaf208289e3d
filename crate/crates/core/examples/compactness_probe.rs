//! Singular-value tails of three amplitudes at two resolutions.

use fiolab::expr::VarSpace;
use fiolab::grid::GridSpec;
use fiolab::operators::{discretize_fio, BuildConfig};
use fiolab::pdo_check::{compactness_probe, CompactnessConfig};
use fiolab::phases::GeneratingFunction;
use fiolab::symbols::SymbolField;
use fiolab::weights::WeightSpec;

fn main() -> fiolab::Result<()> {
    let s = GeneratingFunction::parse("x*theta", 1)?;
    for src in ["1", "bracket(x, theta)^-1", "exp(-x^2 - theta^2)"] {
        let a = SymbolField::parse(src, VarSpace::x_theta(1), WeightSpec::constant(1.0, 2), 0.0)?;
        let build = |m: usize| {
            let g = GridSpec::new(1, 8.0, m);
            discretize_fio(&s, &a, &g, &g, &g.dual(), &BuildConfig::spectral())
        };
        let r = compactness_probe(&build(128)?, &build(256)?, &CompactnessConfig::default())?;
        println!(
            "a = {src:<22} s_64 = ({:.4}, {:.4})  plateau = {:?}  {:?}",
            r.tail.0, r.tail.1, r.plateau_count, r.verdict
        );
    }
    Ok(())
}
