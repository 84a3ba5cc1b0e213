//! Synthetic scenarios, replication harnesses, and calibration experiments.
//!
//! Every random draw comes from a ChaCha8 stream keyed by a master seed and a
//! stream index, so parallel and serial runs produce identical numbers.

pub mod experiments;
pub mod harness;
pub mod scenarios;
pub mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use experiments::{
    convergence_experiment, coverage_experiment, loglog_slope, ConvergenceConfig, ConvergencePoint, ConvergenceReport,
    CoverageConfig, CoveragePoint, CoverageReport,
};
pub use harness::{run_table, Cell, Method, ReplicationReport, TableConfig};
pub use scenarios::{
    gen_categorical_scenario, gen_functional_scenario, gen_vector_scenario, ScenarioDraw, ScenarioKind, ScenarioSpec,
};

/// Random stream `stream` of master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
