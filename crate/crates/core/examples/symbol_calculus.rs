//! Seminorm estimates for a symbol and for its derivative, square and
//! reciprocal.

use fiolab::expr::VarSpace;
use fiolab::grid::GridSpec;
use fiolab::symbols::{derivative_symbol, product_symbol, reciprocal_symbol, verify_class, SymbolField};
use fiolab::weights::{LambdaConvention, WeightSpec};
use fiolab::Error;

fn main() -> fiolab::Result<()> {
    let weight = WeightSpec::lambda(2.0, 2, LambdaConvention::SqrtSumSquares);
    let a = SymbolField::parse("1 + x^2 + theta^2", VarSpace::x_theta(1), weight, 1.0)?;
    let grid = GridSpec::new(2, 8.0, 64);

    let show = |label: &str, s: &SymbolField| -> fiolab::Result<()> {
        let table = verify_class(s, 2, &grid)?;
        let consts: Vec<String> = table
            .entries
            .iter()
            .map(|e| format!("{:?}={:.3}", e.alpha, e.constant))
            .collect();
        println!("{label:<12} {}", consts.join(" "));
        Ok(())
    };
    show("a", &a)?;
    show("d_x a", &derivative_symbol(&a, &[1, 0])?)?;
    show("a * a", &product_symbol(&a, &a)?)?;
    show("1 / a", &reciprocal_symbol(&a, 1.0, 2.0, &grid)?)?;

    let b = SymbolField::parse("x^2 + theta^2", VarSpace::x_theta(1), WeightSpec::lambda(2.0, 2, LambdaConvention::SqrtSumSquares), 1.0)?;
    match reciprocal_symbol(&b, 0.5, 2.0, &grid) {
        Err(Error::LowerBoundViolation { witness, value, bound }) => {
            println!("1 / (x^2 + theta^2): lower bound fails at {witness:?} ({value} < {bound})")
        }
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
