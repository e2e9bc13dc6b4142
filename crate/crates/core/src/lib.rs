//! Camera-based monitoring of outdoor optical access points.
//!
//! A wide field-of-view lens on the access-point UAV focuses the residual
//! interrogator beams of ground transmitters onto a focal-plane photodetector
//! array. This crate simulates those frames and inverts them back into ground
//! positions:
//!
//! - [`optics`]: turbulence, beam irradiance, collected power, angle mapping, blur
//! - [`sensor`]: pixel grid, frame rendering, scene generation, dataset export
//! - [`detect`]: matched-filter heatmaps, NMS peaks, sub-pixel refinement, calibration
//! - [`assign`]: Euclidean/Mahalanobis costs and exact linear assignment
//! - [`geom`]: inverse lens geometry, position error, eavesdropper flagging
//! - [`experiment`]: configuration, Monte Carlo sweeps and report outputs
//!
//! The `examples/` directory has one runnable program per capability.

pub mod assign;
pub mod detect;
pub mod error;
pub mod experiment;
pub mod geom;
pub mod optics;
pub mod sensor;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A point or vector in a plane (sensor or ground), meters.
pub type Vec2 = [f64; 2];

/// Independent random stream `stream` derived from a master seed.
///
/// Streams with different indices never overlap, so per-trial and per-frame
/// work can run in any order and still reproduce bit-for-bit.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn dist2(a: Vec2, b: Vec2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}
