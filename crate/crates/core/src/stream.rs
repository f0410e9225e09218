//! Stream parameters and lifecycle.

use std::fmt;

use crate::ids::{NodeId, StreamId};
use crate::period::PeriodClass;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Data flows from the stream source to its destination.
    Forward,
    /// Data flows from the destination back to the source.
    Reverse,
    Bidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamParams {
    pub period: PeriodClass,
    pub direction: Direction,
    /// Transmissions per packet per period, 1..=3.
    pub redundancy: u8,
    /// Route redundant copies over a node-disjoint secondary path.
    pub spatial: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParamsError {
    #[error("redundancy must be in 1..=3, got {0}")]
    Redundancy(u8),
    #[error("spatial redundancy requires redundancy of at least 2")]
    SpatialNeedsCopies,
}

impl StreamParams {
    pub fn new(period: PeriodClass, direction: Direction, redundancy: u8, spatial: bool) -> Result<Self, ParamsError> {
        let p = StreamParams { period, direction, redundancy, spatial };
        p.check()?;
        Ok(p)
    }

    pub fn simple(period: PeriodClass) -> Self {
        StreamParams { period, direction: Direction::Forward, redundancy: 1, spatial: false }
    }

    pub fn check(&self) -> Result<(), ParamsError> {
        if !(1..=3).contains(&self.redundancy) {
            return Err(ParamsError::Redundancy(self.redundancy));
        }
        if self.spatial && self.redundancy < 2 {
            return Err(ParamsError::SpatialNeedsCopies);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamState {
    Requested,
    Established,
    Rejected,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    pub id: StreamId,
    pub params: StreamParams,
    pub state: StreamState,
}

impl Stream {
    pub fn new(id: StreamId, params: StreamParams) -> Self {
        Stream { id, params, state: StreamState::Requested }
    }
}

/// Identifies one transmission chain of a stream: a direction and a
/// redundant copy index. Packed into the flags byte of the wire stream id:
/// bit 0 set for the reverse direction, bits 1-2 hold the copy index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChainTag {
    pub stream: StreamId,
    pub reverse: bool,
    pub copy: u8,
}

impl ChainTag {
    pub fn flags(&self) -> u8 {
        (self.reverse as u8) | (self.copy & 0b11) << 1
    }

    pub fn from_flags(stream: StreamId, flags: u8) -> Self {
        ChainTag { stream, reverse: flags & 1 != 0, copy: (flags >> 1) & 0b11 }
    }

    /// Node injecting packets into this chain.
    pub fn source(&self) -> NodeId {
        if self.reverse {
            self.stream.dst
        } else {
            self.stream.src
        }
    }

    /// Node delivering packets of this chain to its session layer.
    pub fn sink(&self) -> NodeId {
        if self.reverse {
            self.stream.src
        } else {
            self.stream.dst
        }
    }
}

impl fmt::Display for ChainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}:{}#{}", self.source(), self.sink(), self.stream.port, self.copy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        let p = PeriodClass::new(10).unwrap();
        assert!(StreamParams::new(p, Direction::Forward, 0, false).is_err());
        assert!(StreamParams::new(p, Direction::Forward, 4, false).is_err());
        assert_eq!(StreamParams::new(p, Direction::Forward, 1, true), Err(ParamsError::SpatialNeedsCopies));
        assert!(StreamParams::new(p, Direction::Bidirectional, 3, true).is_ok());
    }

    #[test]
    fn chain_flags_round_trip() {
        let s = StreamId::new(3, 0, 1);
        for reverse in [false, true] {
            for copy in 0..3 {
                let t = ChainTag { stream: s, reverse, copy };
                assert_eq!(ChainTag::from_flags(s, t.flags()), t);
            }
        }
        let t = ChainTag { stream: s, reverse: true, copy: 0 };
        assert_eq!((t.source(), t.sink()), (NodeId(0), NodeId(3)));
    }
}
