//! Compact schedule as distributed by the master.
//!
//! ```text
//! schedule := id:u32 tiles:u16 count:u16 element{count}
//! element  := src dst port flags tx rx offset:u16 period:u16
//! ```
//! Multi-byte fields are big-endian. `flags` packs the chain tag.

use super::ScheduleElement;
use crate::config::{NetworkConfig, SuperframeLayout};
use crate::error::WireError;
use crate::ids::{NodeId, StreamId};
use crate::stream::ChainTag;

pub const SCHEDULE_HEADER_BYTES: usize = 8;
pub const ELEMENT_BYTES: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompactSchedule {
    pub id: u32,
    /// Data superframe length in tiles.
    pub tiles: u32,
    /// Data superframe length in data slots.
    pub slots: u32,
    pub elements: Vec<ScheduleElement>,
}

impl CompactSchedule {
    pub fn new(id: u32, tiles: u32, config: &NetworkConfig, elements: Vec<ScheduleElement>) -> Self {
        let slots = SuperframeLayout::new(config, tiles).total_slots();
        CompactSchedule { id, tiles, slots, elements }
    }

    pub fn empty(config: &NetworkConfig) -> Self {
        Self::new(0, config.control_superframe_len() as u32, config, Vec::new())
    }

    pub fn encoded_len(&self) -> usize {
        SCHEDULE_HEADER_BYTES + ELEMENT_BYTES * self.elements.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let narrow = |v: u32, what: &str| {
            u16::try_from(v).map_err(|_| WireError::Invalid(format!("{what} {v} does not fit 16 bits")))
        };
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend(self.id.to_be_bytes());
        out.extend(narrow(self.tiles, "superframe tiles")?.to_be_bytes());
        out.extend(narrow(self.elements.len() as u32, "element count")?.to_be_bytes());
        for e in &self.elements {
            let s = e.chain.stream;
            out.extend([s.src.0, s.dst.0, s.port, e.chain.flags(), e.tx.0, e.rx.0]);
            out.extend(narrow(e.offset, "offset")?.to_be_bytes());
            out.extend(narrow(e.period, "period")?.to_be_bytes());
        }
        Ok(out)
    }

    /// The slot count is not on the wire; it follows from the tile count
    /// under `config`.
    pub fn decode(bytes: &[u8], config: &NetworkConfig) -> Result<Self, WireError> {
        if bytes.len() < SCHEDULE_HEADER_BYTES {
            return Err(WireError::Truncated { needed: SCHEDULE_HEADER_BYTES, have: bytes.len() });
        }
        let id = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
        let tiles = u16::from_be_bytes([bytes[4], bytes[5]]) as u32;
        let count = u16::from_be_bytes([bytes[6], bytes[7]]) as usize;
        let needed = SCHEDULE_HEADER_BYTES + count * ELEMENT_BYTES;
        if bytes.len() < needed {
            return Err(WireError::Truncated { needed, have: bytes.len() });
        }
        if bytes.len() > needed {
            return Err(WireError::Trailing);
        }
        if tiles == 0 {
            return Err(WireError::Invalid("superframe of zero tiles".into()));
        }
        let elements = bytes[SCHEDULE_HEADER_BYTES..]
            .chunks_exact(ELEMENT_BYTES)
            .map(|b| {
                let stream = StreamId::new(b[0], b[1], b[2]);
                ScheduleElement {
                    chain: ChainTag::from_flags(stream, b[3]),
                    tx: NodeId(b[4]),
                    rx: NodeId(b[5]),
                    offset: u16::from_be_bytes([b[6], b[7]]) as u32,
                    period: u16::from_be_bytes([b[8], b[9]]) as u32,
                }
            })
            .collect();
        Ok(Self::new(id, tiles, config, elements))
    }

    /// Splits the encoded elements into chunks that each fit one downlink
    /// payload together with the schedule header.
    pub fn chunk_count(&self, payload: usize) -> usize {
        let per = payload.saturating_sub(SCHEDULE_HEADER_BYTES) / ELEMENT_BYTES;
        self.elements.len().div_ceil(per.max(1)).max(1)
    }

    /// Elements involving `node` as transmitter or receiver.
    pub fn involving(&self, node: NodeId) -> impl Iterator<Item = &ScheduleElement> {
        self.elements.iter().filter(move |e| e.tx == node || e.rx == node)
    }

    /// Per-slot listing, one line per occupied slot.
    pub fn render_table(&self, config: &NetworkConfig) -> String {
        use std::fmt::Write;
        let layout = SuperframeLayout::new(config, self.tiles);
        let mut out = String::new();
        writeln!(out, "schedule {} superframe {} tiles {} data slots", self.id, self.tiles, self.slots).unwrap();
        writeln!(out, "{:>6} {:>5} {:>5}  transmissions", "slot", "tile", "pos").unwrap();
        for slot in 0..self.slots {
            let active: Vec<String> = self
                .elements
                .iter()
                .filter(|e| e.period > 0 && e.active_at(slot))
                .map(|e| format!("{}->{} ({})", e.tx, e.rx, e.chain))
                .collect();
            if active.is_empty() {
                continue;
            }
            let t = layout.slot_to_time(slot).expect("slot within superframe");
            writeln!(out, "{:>6} {:>5} {:>5}  {}", slot, t.tile, t.slot_in_tile, active.join(", ")).unwrap();
        }
        out
    }
}
