//! Gamma–Gamma fading: sample moments against the density.

use oapsense::optics::{sample_turbulence, turbulence_density, TurbulenceParams};
use oapsense::stream_rng;

fn main() -> oapsense::Result<()> {
    let params = TurbulenceParams::new(4.0, 2.0)?;
    let mut rng = stream_rng(7, 0);
    let n = 200_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| sample_turbulence(&params, &mut rng))
        .collect::<oapsense::Result<_>>()?;
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    println!(
        "alpha=4 beta=2: mean {mean:.4}, variance {var:.4} (expected {:.4})",
        params.scintillation_index()
    );

    println!("{:>6} {:>10} {:>10}", "rho", "density", "histogram");
    let width = 0.25;
    for k in 0..12 {
        let lo = k as f64 * width;
        let rho = lo + 0.5 * width;
        let frac = draws.iter().filter(|&&x| x >= lo && x < lo + width).count() as f64 / n as f64;
        println!(
            "{rho:>6.3} {:>10.4} {:>10.4}",
            turbulence_density(rho, &params)?,
            frac / width
        );
    }
    Ok(())
}
