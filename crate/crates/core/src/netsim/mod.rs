//! Network simulation: topology, scenario configuration, workload planning,
//! the deterministic event engine and raw trace collection.

pub mod engine;
pub mod scenario;
pub mod topology;
pub mod trace;
pub mod workload;

pub use engine::{run_scenario, Sim};
pub use scenario::Scenario;
pub use topology::Topology;
pub use trace::RawTrace;
