use thiserror::Error;

use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PeriodError {
    #[error("period {0} is not in the 1-2-5 progression")]
    NotInProgression(u32),
    #[error("period of {tiles} tiles does not span a whole number of control superframes (length {superframe})")]
    Misaligned { tiles: u32, superframe: usize },
    #[error("no periods given")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("max_nodes must be in 1..=256, got {0}")]
    MaxNodes(usize),
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("control superframe must contain at least one downlink and one uplink tile")]
    Superframe,
    #[error("{kind} tiles have no room for a data slot")]
    NoDataSlots { kind: &'static str },
    #[error("max_uplink_payload {payload} cannot hold the sender's own record ({needed} bytes)")]
    PayloadTooSmall { payload: usize, needed: usize },
    #[error("{field} must be within [0, 1], got {value}")]
    Probability { field: &'static str, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SlotError {
    #[error("data slot {index} out of range (superframe has {len})")]
    OutOfRange { index: u32, len: u32 },
    #[error("tile {tile} slot {slot} out of range")]
    BadPosition { tile: u32, slot: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("trailing bytes after frame")]
    Trailing,
    #[error("unknown element kind {0}")]
    UnknownKind(u8),
    #[error("invalid field: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("record references node {node} beyond max_nodes {max_nodes}")]
    NodeOutOfRange { node: NodeId, max_nodes: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("no strong path from {src} to {dst}")]
    Unroutable { src: NodeId, dst: NodeId },
    #[error("invalid endpoints {src} -> {dst}")]
    BadEndpoints { src: NodeId, dst: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("element period {period} does not divide superframe length {superframe}")]
    PeriodMismatch { period: u32, superframe: u32 },
    #[error("element offset {offset} not below its period {period}")]
    OffsetRange { offset: u32, period: u32 },
    #[error("node {node} has two actions in slot {slot}")]
    Clash { node: NodeId, slot: u32 },
    #[error(transparent)]
    Period(#[from] PeriodError),
}
