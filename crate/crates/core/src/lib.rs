//! Serial vs parallel Poisson-clock Monte Carlo harness.
//!
//! The same superposed Poisson process is simulated by a single merged
//! clock and by `N` independent clocks spread over workers. With a uniform
//! source the two agree in distribution and the parallel run replays
//! bit-identically under any worker mapping. A defective source breaks the
//! agreement, which is how the detector exposes it; the rejection-rescale
//! fix restores it.

pub mod cli;
pub mod detector;
pub mod exec;
pub mod process;
pub mod rng;
pub mod seeds;
pub mod source;
pub mod stats;
pub mod transforms;

pub use exec::Execution;
pub use process::{
    merge, simulate_parallel, simulate_serial, Event, MappingKind, ParallelConfig, SerialConfig,
    StreamMode, Trajectory,
};
pub use rng::{FaultModel, GeneratorState, Seed, StreamId, UnitSample};
pub use source::{PipelineSpec, SampleSource};
pub use transforms::{FixWindow, MeasurePreservingMap};
