//! Control plane for distributed dashcam video analytics on a group of
//! phones: weighted frame scheduling across heterogeneous workers,
//! queueing-model frame rate control, a pipelined coordinator/worker loop,
//! a deterministic discrete-event simulator and a live TCP mode.
//!
//! Start with [`scheduler::generate_sequence`], [`ratectl::compute_frame_rate`]
//! and [`sim::run_scenario`]; the `examples/` directory has one runnable
//! program per capability.

pub mod cli;
pub mod coordinator;
pub mod live;
pub mod metrics;
pub mod model;
pub mod ratectl;
pub mod scheduler;
pub mod sim;
pub mod wire;
pub mod worker;

pub use coordinator::{Coordinator, CoordinatorError};
pub use metrics::MetricsReport;
pub use model::{FrameDescriptor, PerfLog, PerfRecord, SystemParams, VideoSource, WorkerId};
pub use sim::{run_scenario, ScenarioConfig};
