//! Export frames with ground truth and read them back.
//!
//! Usage: `cargo run --example dataset -- [out_dir]`

use oapsense::experiment::ExperimentConfig;
use oapsense::sensor::{export_dataset, read_ground_truth};

fn main() -> oapsense::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "out/dataset-example".into());
    let cfg = ExperimentConfig::default();
    let handle = export_dataset(8, &cfg.dataset_config()?, cfg.seed, out.as_ref())?;
    let frames = handle.load_frames()?;
    let rows = read_ground_truth(&handle.ground_truth)?;
    println!(
        "{} frames of {:?} pixels, {} ground-truth rows",
        frames.len(),
        frames[0].dim(),
        rows.len()
    );
    for row in rows.iter().take(5) {
        println!("{row:?}");
    }
    Ok(())
}
