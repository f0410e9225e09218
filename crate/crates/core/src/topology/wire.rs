//! Uplink frame wire format.
//!
//! ```text
//! frame  := fwd_count:u8 sme_count:u8 record(sender) record{fwd_count} sme{sme_count}
//! record := node:u8 hop:u8 forwardee:u8 strong:mask weak:mask
//! mask   := ceil(max_nodes / 8) bytes, node i at byte i/8 bit i%8
//! sme    := 8 bytes, see `Sme`
//! ```
//!
//! A record whose forwardee equals its own node id has no forwardee.

use crate::error::WireError;
use crate::ids::{NodeId, NodeSet, StreamId};
use crate::period::PeriodClass;
use crate::stream::{Direction, StreamParams};

pub const UPLINK_HEADER_BYTES: usize = 2;
pub const SME_BYTES: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologyRecord {
    pub node: NodeId,
    pub hop: u8,
    pub forwardee: Option<NodeId>,
    pub strong: NodeSet,
    pub weak: NodeSet,
}

impl TopologyRecord {
    pub fn check(&self) -> Result<(), String> {
        if !self.strong.is_subset(&self.weak) {
            return Err(format!("record {}: strong mask not within weak mask", self.node));
        }
        if self.weak.contains(self.node) {
            return Err(format!("record {}: reports itself as neighbour", self.node));
        }
        if (self.hop == 0) != self.node.is_master() {
            return Err(format!("record {}: hop 0 is reserved for the master", self.node));
        }
        Ok(())
    }

    pub fn encode_into(&self, mask_bytes: usize, out: &mut Vec<u8>) {
        out.push(self.node.0);
        out.push(self.hop);
        out.push(self.forwardee.unwrap_or(self.node).0);
        out.extend(self.strong.to_bytes(mask_bytes * 8));
        out.extend(self.weak.to_bytes(mask_bytes * 8));
    }

    fn decode(bytes: &[u8], max_nodes: usize) -> Result<Self, WireError> {
        let mb = max_nodes.div_ceil(8);
        let node = NodeId(bytes[0]);
        let fw = NodeId(bytes[2]);
        for id in [node, fw] {
            if id.index() >= max_nodes {
                return Err(WireError::Invalid(format!("node id {id} beyond max_nodes {max_nodes}")));
            }
        }
        let strong = NodeSet::from_bytes(&bytes[3..3 + mb]);
        let weak = NodeSet::from_bytes(&bytes[3 + mb..3 + 2 * mb]);
        if strong.iter().chain(weak.iter()).any(|n| n.index() >= max_nodes) {
            return Err(WireError::Invalid("mask bit beyond max_nodes".into()));
        }
        Ok(TopologyRecord { node, hop: bytes[1], forwardee: (fw != node).then_some(fw), strong, weak })
    }
}

/// Stream management element carried in uplink frames.
///
/// ```text
/// listen  := 1 node port 0 0 0 0 0
/// connect := 2 src dst port period:u16be flags 0
///            flags: bits 0-1 direction (0 fwd, 1 rev, 2 bi), bits 2-3 redundancy, bit 4 spatial
/// close   := 3 src dst port 0 0 0 0
/// resend  := 4 node schedule_id:u32be 0 0
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Sme {
    Listen { node: NodeId, port: u8 },
    Connect { id: StreamId, params: StreamParams },
    Close { id: StreamId },
    Resend { node: NodeId, schedule_id: u32 },
}

impl Sme {
    pub fn encode(&self) -> [u8; SME_BYTES] {
        let mut b = [0u8; SME_BYTES];
        match self {
            Sme::Listen { node, port } => {
                b[0] = 1;
                b[1] = node.0;
                b[2] = *port;
            }
            Sme::Connect { id, params } => {
                b[0] = 2;
                b[1..4].copy_from_slice(&[id.src.0, id.dst.0, id.port]);
                b[4..6].copy_from_slice(&(params.period.tiles() as u16).to_be_bytes());
                let dir = match params.direction {
                    Direction::Forward => 0,
                    Direction::Reverse => 1,
                    Direction::Bidirectional => 2,
                };
                b[6] = dir | (params.redundancy & 0b11) << 2 | (params.spatial as u8) << 4;
            }
            Sme::Close { id } => {
                b[0] = 3;
                b[1..4].copy_from_slice(&[id.src.0, id.dst.0, id.port]);
            }
            Sme::Resend { node, schedule_id } => {
                b[0] = 4;
                b[1] = node.0;
                b[2..6].copy_from_slice(&schedule_id.to_be_bytes());
            }
        }
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        if b.len() < SME_BYTES {
            return Err(WireError::Truncated { needed: SME_BYTES, have: b.len() });
        }
        let id = StreamId::new(b[1], b[2], b[3]);
        Ok(match b[0] {
            1 => Sme::Listen { node: NodeId(b[1]), port: b[2] },
            2 => {
                let period = PeriodClass::new(u16::from_be_bytes([b[4], b[5]]) as u32)
                    .map_err(|e| WireError::Invalid(e.to_string()))?;
                let direction = match b[6] & 0b11 {
                    0 => Direction::Forward,
                    1 => Direction::Reverse,
                    2 => Direction::Bidirectional,
                    d => return Err(WireError::Invalid(format!("direction {d}"))),
                };
                let params = StreamParams::new(period, direction, (b[6] >> 2) & 0b11, b[6] & 0x10 != 0)
                    .map_err(|e| WireError::Invalid(e.to_string()))?;
                Sme::Connect { id, params }
            }
            3 => Sme::Close { id },
            4 => Sme::Resend { node: NodeId(b[1]), schedule_id: u32::from_be_bytes([b[2], b[3], b[4], b[5]]) },
            k => return Err(WireError::UnknownKind(k)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UplinkFrame {
    pub sender: TopologyRecord,
    pub forwarded: Vec<TopologyRecord>,
    pub smes: Vec<Sme>,
}

impl UplinkFrame {
    pub fn encoded_len(&self, max_nodes: usize) -> usize {
        let rec = 3 + 2 * max_nodes.div_ceil(8);
        UPLINK_HEADER_BYTES + rec * (1 + self.forwarded.len()) + SME_BYTES * self.smes.len()
    }

    pub fn encode(&self, max_nodes: usize) -> Vec<u8> {
        let mb = max_nodes.div_ceil(8);
        let mut out = Vec::with_capacity(self.encoded_len(max_nodes));
        out.push(self.forwarded.len() as u8);
        out.push(self.smes.len() as u8);
        self.sender.encode_into(mb, &mut out);
        for r in &self.forwarded {
            r.encode_into(mb, &mut out);
        }
        for s in &self.smes {
            out.extend(s.encode());
        }
        out
    }

    pub fn decode(bytes: &[u8], max_nodes: usize) -> Result<Self, WireError> {
        if bytes.len() < UPLINK_HEADER_BYTES {
            return Err(WireError::Truncated { needed: UPLINK_HEADER_BYTES, have: bytes.len() });
        }
        let rec = 3 + 2 * max_nodes.div_ceil(8);
        let (nf, ns) = (bytes[0] as usize, bytes[1] as usize);
        let needed = UPLINK_HEADER_BYTES + rec * (1 + nf) + SME_BYTES * ns;
        if bytes.len() < needed {
            return Err(WireError::Truncated { needed, have: bytes.len() });
        }
        if bytes.len() > needed {
            return Err(WireError::Trailing);
        }
        let mut pos = UPLINK_HEADER_BYTES;
        let mut next_record = || {
            let r = TopologyRecord::decode(&bytes[pos..pos + rec], max_nodes);
            pos += rec;
            r
        };
        let sender = next_record()?;
        let forwarded = (0..nf).map(|_| next_record()).collect::<Result<Vec<_>, _>>()?;
        let sme_base = UPLINK_HEADER_BYTES + rec * (1 + nf);
        let smes = (0..ns).map(|i| Sme::decode(&bytes[sme_base + i * SME_BYTES..])).collect::<Result<Vec<_>, _>>()?;
        Ok(UplinkFrame { sender, forwarded, smes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(max: usize) -> impl Strategy<Value = NodeSet> {
        proptest::collection::vec(0..max as u8, 0..8).prop_map(|v| v.into_iter().map(NodeId).collect())
    }

    fn record(max: usize) -> impl Strategy<Value = TopologyRecord> {
        (0..max as u8, 1u8..20, proptest::option::of(0..max as u8), mask(max), mask(max)).prop_map(
            move |(node, hop, fw, s, w)| {
                let node = NodeId(node);
                let mut weak = w.union(&s);
                weak.remove(node);
                let mut strong = s;
                strong.remove(node);
                TopologyRecord {
                    node,
                    hop: if node.is_master() { 0 } else { hop },
                    forwardee: fw.map(NodeId).filter(|&f| f != node),
                    strong,
                    weak,
                }
            },
        )
    }

    fn sme() -> impl Strategy<Value = Sme> {
        let period = prop::sample::select(vec![1u32, 2, 5, 10, 20, 50, 100, 1000, 50000]);
        prop_oneof![
            (any::<u8>(), any::<u8>()).prop_map(|(n, p)| Sme::Listen { node: NodeId(n), port: p }),
            (any::<u8>(), any::<u8>(), any::<u8>(), period, 0u8..3, 1u8..=3, any::<bool>()).prop_map(
                |(s, d, port, per, dir, red, sp)| Sme::Connect {
                    id: StreamId::new(s, d, port),
                    params: StreamParams {
                        period: PeriodClass::new(per).unwrap(),
                        direction: [Direction::Forward, Direction::Reverse, Direction::Bidirectional][dir as usize],
                        redundancy: red,
                        spatial: sp && red >= 2,
                    },
                }
            ),
            (any::<u8>(), any::<u8>(), any::<u8>()).prop_map(|(s, d, p)| Sme::Close { id: StreamId::new(s, d, p) }),
            (any::<u8>(), any::<u32>()).prop_map(|(n, id)| Sme::Resend { node: NodeId(n), schedule_id: id }),
        ]
    }

    fn frame() -> impl Strategy<Value = (usize, UplinkFrame)> {
        prop::sample::select(vec![8usize, 13, 16, 64, 128]).prop_flat_map(|max| {
            (
                Just(max),
                record(max),
                proptest::collection::vec(record(max), 0..5),
                proptest::collection::vec(sme(), 0..4),
            )
                .prop_map(|(max, sender, forwarded, smes)| (max, UplinkFrame { sender, forwarded, smes }))
        })
    }

    proptest! {
        #[test]
        fn frame_round_trip((max, frame) in frame()) {
            let bytes = frame.encode(max);
            prop_assert_eq!(bytes.len(), frame.encoded_len(max));
            prop_assert_eq!(UplinkFrame::decode(&bytes, max).unwrap(), frame);
        }
    }

    #[test]
    fn record_size_matches_layout() {
        let r =
            TopologyRecord { node: NodeId(5), hop: 2, forwardee: None, strong: NodeSet::new(), weak: NodeSet::new() };
        let f = UplinkFrame { sender: r, forwarded: vec![], smes: vec![] };
        assert_eq!(f.encode(16).len(), 2 + 3 + 4);
        assert_eq!(f.encode(128).len(), 2 + 3 + 32);
    }

    #[test]
    fn decode_rejects_out_of_range_ids() {
        let r =
            TopologyRecord { node: NodeId(20), hop: 2, forwardee: None, strong: NodeSet::new(), weak: NodeSet::new() };
        let f = UplinkFrame { sender: r, forwarded: vec![], smes: vec![] };
        let bytes = f.encode(32);
        assert!(UplinkFrame::decode(&bytes, 32).is_ok());
        assert!(matches!(UplinkFrame::decode(&bytes[..bytes.len() - 1], 32), Err(WireError::Truncated { .. })));
    }
}
