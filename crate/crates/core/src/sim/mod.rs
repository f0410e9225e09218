//! Slot-level simulation of a whole network.

mod engine;
pub mod metrics;
pub mod power;
pub mod scenario;

pub use engine::{measure_formation, run, run_with, Ie, LogLevel, SessionError, SimError, SimOptions, Simulation};
pub use metrics::{EventKind, LogEntry, Metrics, SimEventLog, SlotKind, StreamMetrics};
pub use power::{estimate_power, Activity, PowerModel, TopologyActivity};
pub use scenario::{LinkSpec, ParseError, Scenario, ScenarioError, ScenarioEvent, StreamRequest, TimedEvent};
