//! `I(1, x*theta - y*theta) f(x)` for a Gaussian `f`, which returns `f(x)`,
//! through the regularized and the integration-by-parts routes.

use fiolab::expr::VarSpace;
use fiolab::oscillatory::{
    fio_apply_ibp, regularized_fio_apply, test_function_vars, CutoffSpec, IbpSpec, QuadSpec,
};
use fiolab::phases::{special_phase, GeneratingFunction};
use fiolab::symbols::SymbolField;
use fiolab::weights::WeightSpec;

fn main() -> fiolab::Result<()> {
    let phi = special_phase(&GeneratingFunction::parse("x*theta", 1)?);
    let a = SymbolField::parse("1", VarSpace::x_y_theta(1), WeightSpec::constant(1.0, 3), 0.0)?;
    let f = SymbolField::parse("exp(-y^2/2)", test_function_vars(1), WeightSpec::constant(1.0, 1), 0.0)?;
    let x = 0.5;
    println!("exact value      {:.10}", (-x * x / 2.0f64).exp());

    let r = regularized_fio_apply(&a, &phi, &f, &[x], &[16.0, 32.0, 64.0], CutoffSpec::gaussian(), &QuadSpec::default())?;
    println!("regularized      {:.10}  gap to bump cutoff {:.2e}", r.value.re, r.cutoff_gap.unwrap_or(f64::NAN));
    for (sigma, res) in &r.sigma_residuals {
        println!("  sigma = {sigma:>4}: residual {res:.3e}");
    }

    for k in [0, 2] {
        let mut spec = IbpSpec::new(k, 10.0);
        spec.eps0 = Some(0.25);
        spec.quad.fine_spacing = 0.008;
        let r = fio_apply_ibp(&a, &phi, &f, &[x], &spec)?;
        println!("ibp k = {k}        {:.10}", r.value.re);
    }
    Ok(())
}
