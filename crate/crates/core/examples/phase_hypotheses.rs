//! Hypothesis checks on generating functions and their special phases.

use fiolab::phases::{
    special_phase, verify_g2, verify_g3, verify_h2, verify_h3, CheckConfig, GeneratingFunction,
};

fn main() -> fiolab::Result<()> {
    let cfg = CheckConfig {
        points: Some(17),
        ..Default::default()
    };
    for src in ["x*theta", "x*theta + theta^2/2", "x^2 + theta^2", "exp(x)*theta"] {
        let s = GeneratingFunction::parse(src, 1)?;
        let phi = special_phase(&s);
        println!("S = {src}");
        for r in [verify_g2(&s, &cfg), verify_g3(&s, 2, &cfg), verify_h2(&phi, 2, &cfg), verify_h3(&phi, &cfg)] {
            match &r.witness {
                Some(w) if !r.pass => println!("  {:<3} fail at {w:?}: {}", r.name, r.reason.as_deref().unwrap_or("")),
                _ => println!("  {:<3} pass", r.name),
            }
        }
    }
    Ok(())
}
