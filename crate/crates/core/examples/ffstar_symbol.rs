//! Symbols of FF* and F*F for the dilation `S = 2 x theta`, predicted to be
//! `|det S_x_theta|^-1 = 1/2`.

use fiolab::expr::VarSpace;
use fiolab::grid::GridSpec;
use fiolab::operators::{discretize_fio, BuildConfig};
use fiolab::pdo_check::{compare_symbols, fourier_conjugate, Which, Window};
use fiolab::phases::GeneratingFunction;
use fiolab::symbols::SymbolField;
use fiolab::weights::WeightSpec;

fn main() -> fiolab::Result<()> {
    let s = GeneratingFunction::parse("2*x*theta", 1)?;
    let a = SymbolField::parse("1", VarSpace::x_theta(1), WeightSpec::constant(1.0, 2), 0.0)?;
    let g = GridSpec::new(1, 8.0, 256);
    let d = g.dual();
    let samples: Vec<(Vec<f64>, Vec<f64>)> = [(-2.0, 3.0), (0.0, 2.0), (2.0, 4.0)]
        .iter()
        .map(|&(x, t)| (vec![x], vec![t]))
        .collect();

    let half = GridSpec::new(1, d.radius / 2.0, g.points / 2);
    let f = discretize_fio(&s, &a, &g, &g, &half, &BuildConfig::kernel(0.0))?;
    let ff = f.compose(&f.adjoint())?;
    let est = compare_symbols(&s, &a, &ff, &samples, Which::FfStar, Window::default(), 0.1)?;
    for p in &est.samples {
        println!("FF*  at {:?}: extracted {:.5}, predicted {}", p.base, p.extracted.re, p.predicted);
    }

    let fine = GridSpec::new(1, d.radius / 2.0, g.points);
    let f = discretize_fio(&s, &a, &g, &g, &fine, &BuildConfig::kernel(0.0))?;
    let fsf = fourier_conjugate(&f.adjoint().compose(&f)?, &d)?;
    let est = compare_symbols(&s, &a, &fsf, &samples, Which::FStarF, Window::default(), 0.1)?;
    for p in &est.samples {
        println!("F*F  at {:?}: extracted {:.5}, predicted {}", p.base, p.extracted.re, p.predicted);
    }
    Ok(())
}
