#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Rare-event failure probability estimation by sequential directional
//! importance sampling, with Subset Simulation as fallback and baseline.

pub mod error;
pub mod kriging;
pub mod model;
pub mod sdis;
pub mod specfun;
pub mod sus;

pub use error::{Error, Result};
pub use kriging::{KrigingModel, RootSet, SearchInterval};
pub use model::{benchmark, benchmark_by_name, Benchmark, BenchmarkCase, LimitState};
pub use sdis::{run, run_with_seed, FirstLevelMethod, LevelRecord, RunResult, SdisParams};
pub use sus::{run_sus, SusParams, SusResult};
