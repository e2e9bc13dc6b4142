//! A small Monte Carlo sweep over array sizes, written to a directory.
//!
//! Usage: `cargo run --release --example sweep -- [out_dir]`

use oapsense::experiment::{emit_outputs, run_sweep, ExperimentConfig};

fn main() -> oapsense::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "out/sweep-example".into());
    let cfg = ExperimentConfig::parse("run.trials = 100\nlens.sigma_diff0_m = 0.0005\n")?;
    let report = run_sweep(&cfg)?;
    println!(
        "{:>7} {:>10} {:>8} {:>8}",
        "array", "mse_m2", "miss", "false"
    );
    for a in &report.arrays {
        println!(
            "{:>3}x{:<3} {:>10.3} {:>8.3} {:>8.3}",
            a.array_n,
            a.array_n,
            a.mse.unwrap_or(f64::NAN),
            a.miss_rate,
            a.false_peak_rate
        );
    }
    for p in emit_outputs(&report, &cfg, out.as_ref())? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
