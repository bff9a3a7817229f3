//! Rolling-horizon toll optimization on a mesoscopic traffic simulator.
//!
//! The crate couples a point-queue network loading model with a path-size
//! logit route choice model, wraps both in a guidance-consistent state
//! predictor, and searches toll schedules with a real-coded genetic
//! algorithm. A closed-loop harness plays optimized tolls against a
//! stochastic "world" simulator and scores them against no-toll and
//! static-toll baselines.

pub mod closed_loop;
pub mod demand;
pub mod error;
pub mod guidance;
pub mod network;
pub mod optimizer;
pub mod prediction;
pub mod route_choice;
pub mod rng;
pub mod supply;
pub mod tolls;

pub use error::{Error, Result};

/// Bound the number of concurrently running evaluations/replications.
/// Takes effect once per process; later calls are ignored.
pub fn set_parallelism(jobs: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build_global();
}
