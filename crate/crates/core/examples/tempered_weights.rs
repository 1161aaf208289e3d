//! Temperedness estimates for polynomial and exponential weights.

use fiolab::weights::{grid_pairs, verify_tempered_capped, LambdaConvention, WeightSpec};

fn main() -> fiolab::Result<()> {
    for (label, w) in [
        ("lambda^2", WeightSpec::lambda(2.0, 1, LambdaConvention::SqrtSumSquares)),
        ("lambda^-1", WeightSpec::lambda(-1.0, 1, LambdaConvention::SqrtSumSquares)),
        ("exp(v)", WeightSpec::formula("exp(v)", 1)?),
    ] {
        for radius in [8.0, 32.0] {
            let pairs = grid_pairs(1, radius, 129);
            let r = verify_tempered_capped(&w, &pairs, 2.0, 1e6)?;
            println!(
                "{label:<10} R = {radius:>4}: C0 = {:<12.4e} pass = {}",
                r.c0_estimate, r.pass
            );
        }
    }
    Ok(())
}
