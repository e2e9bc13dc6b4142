//! Reproducible experiments: configuration, Monte Carlo sweeps over array
//! sizes, calibration runs, and CSV/SVG/frame outputs.
//!
//! Each trial owns two random streams derived from `(seed, trial)`, one for
//! the scene and one for rendering, so results do not depend on thread count
//! or scheduling.

mod config;
mod output;
mod pipeline;

pub use config::{
    CountMode, DetectorSettings, ExperimentConfig, FadingMode, SensorSettings, CONFIG_KEYS,
};
pub use output::{
    by_count_csv, emit_outputs, mse_plot_svg, overlay_svg, run_simulation, sweep_csv, trials_csv,
    write_simulation, Simulation, BY_COUNT_HEADER, SWEEP_HEADER, TRIALS_HEADER,
};
pub use pipeline::{
    localize, run_calibration, run_sweep, run_trial, simulate_trial, ArrayReport,
    CalibrationReport, CountBreakdown, ExperimentReport, Localization, TrialOutcome, TrialRecord,
    MIN_CALIBRATION_FRAMES, MIN_GATE_M,
};
