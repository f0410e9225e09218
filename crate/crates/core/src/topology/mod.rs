//! Topology collection: per-node neighbour discovery and convergecast
//! forwarding, and master-side merging into the strong/weak graphs.

mod master;
mod node;
pub mod wire;

pub use master::MasterTopology;
pub use node::{Neighbor, NeighborTable, NodeTopology, SyncState};
pub use wire::{Sme, TopologyRecord, UplinkFrame};
