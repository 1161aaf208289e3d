//! Runs a bundled scenario with an override and prints the manifest.

use fiolab::runner::{run_scenario, RunOptions};

fn main() -> fiolab::Result<()> {
    let opts = RunOptions {
        out_dir: std::env::temp_dir().join("fiolab-example"),
        overrides: vec!["grid.main.points=128".into()],
    };
    let report = run_scenario("fourier_inversion", &opts)?;
    println!("{}", serde_json::to_string_pretty(&report.manifest)?);
    println!("exit code {}", report.exit_code());
    Ok(())
}
