//! Dense discretization of a Fourier integral operator: identity check,
//! route agreement, norm and a save/load round trip.

use fiolab::expr::VarSpace;
use fiolab::grid::GridSpec;
use fiolab::operators::{discretize_fio, relative_l2, sample, BuildConfig, DiscreteOperator};
use fiolab::phases::GeneratingFunction;
use fiolab::symbols::SymbolField;
use fiolab::weights::WeightSpec;
use num_complex::Complex64;

fn main() -> fiolab::Result<()> {
    let s = GeneratingFunction::parse("x*theta", 1)?;
    let amp = |src: &str| SymbolField::parse(src, VarSpace::x_theta(1), WeightSpec::constant(1.0, 2), 0.0);
    let g = GridSpec::new(1, 8.0, 256);

    let id = discretize_fio(&s, &amp("1")?, &g, &g, &g.dual(), &BuildConfig::spectral())?;
    let u = sample(&g, |p| Complex64::new((-p[0] * p[0] * 8.0).exp(), 0.0));
    println!("identity: |Fu - u| / |u| = {:.2e}", relative_l2(&id.apply(&u)?, &u));

    let a = amp("exp(-theta^2)")?;
    let spectral = discretize_fio(&s, &a, &g, &g, &g.dual(), &BuildConfig::spectral())?;
    let kernel = discretize_fio(&s, &a, &g, &g, &g.dual(), &BuildConfig::kernel(0.0))?;
    let diff = (&spectral.matrix - &kernel.matrix).norm() / spectral.frobenius_norm();
    println!("multiplier exp(-theta^2): routes differ by {diff:.2e}");
    println!("  norm {:.10} (sup |a| = 1)", spectral.operator_norm(1e-10)?);

    let dir = std::env::temp_dir().join("fiolab-example.bin");
    spectral.save(&dir)?;
    let back = DiscreteOperator::load(&dir)?;
    println!("  reloaded identical: {}", back == spectral);
    std::fs::remove_file(&dir)?;
    Ok(())
}
