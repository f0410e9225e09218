//! Centralized TDMA mesh protocol library and slot-level network simulator.
//!
//! The master collects the network topology through a round-robin
//! convergecast, routes streams over the graph of strong links and builds a
//! conflict-free schedule that reuses slots between transmissions which do
//! not interfere according to the graph of weak links.

pub mod activation;
pub mod config;
pub mod error;
pub mod graph;
pub mod harness;
pub mod ids;
pub mod period;
pub mod routing;
pub mod scheduler;
pub mod sim;
pub mod stream;
pub mod topology;

pub use config::{HopGraph, NetworkConfig, SlotTime, SuperframeLayout, TileKind, TileLayout};
pub use error::*;
pub use graph::{DualGraph, LinkDelta, LinkQuality};
pub use ids::{Link, NodeId, NodeSet, StreamId};
pub use period::PeriodClass;
pub use stream::{ChainTag, Direction, Stream, StreamParams, StreamState};
