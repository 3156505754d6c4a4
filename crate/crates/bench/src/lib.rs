//! Fixtures shared by the kernel benchmarks.

use irsim::montecarlo::{point_context, reference_spec, ExperimentSpec, PointContext};
use irsim::transceiver::Protocol;

/// Reference system with M = N = K = `size`, fixed random phases, all protocols.
pub fn spec(size: usize) -> ExperimentSpec {
    let mut spec = reference_spec(size, size, size);
    spec.trials = 1;
    spec
}

/// Grid-point context with ON/OFF and DE statistics built.
pub fn context(size: usize) -> PointContext {
    point_context(&spec(size), 0).expect("reference fixture is valid")
}

pub const PROTOCOLS: [Protocol; 3] = Protocol::ALL;
