//! Node-side topology collection.

use std::collections::{BTreeMap, VecDeque};

use super::wire::{Sme, TopologyRecord, UplinkFrame, SME_BYTES, UPLINK_HEADER_BYTES};
use crate::config::NetworkConfig;
use crate::ids::{NodeId, NodeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyncState {
    Unsynced,
    /// One downlink flood received; clock offset known, skew not yet.
    OffsetAcquired,
    Synchronized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub rssi: i16,
    pub hop: u8,
    /// Whole rounds elapsed without hearing this neighbour.
    pub rounds_since_heard: u32,
    heard_this_round: bool,
}

/// Neighbours this node has overheard recently.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    entries: BTreeMap<NodeId, Neighbor>,
    threshold: i16,
    timeout: u32,
}

impl NeighborTable {
    pub fn new(threshold: i16, timeout: u32) -> Self {
        NeighborTable { entries: BTreeMap::new(), threshold, timeout }
    }

    pub fn heard(&mut self, id: NodeId, rssi: i16, hop: u8) {
        self.entries.insert(id, Neighbor { rssi, hop, rounds_since_heard: 0, heard_this_round: true });
    }

    /// Closes a round: entries not heard during it age by one, and those
    /// silent for `timeout` whole rounds are dropped.
    pub fn end_round(&mut self) -> Vec<NodeId> {
        let timeout = self.timeout;
        let mut dropped = Vec::new();
        self.entries.retain(|&id, n| {
            if std::mem::take(&mut n.heard_this_round) {
                return true;
            }
            n.rounds_since_heard += 1;
            let keep = n.rounds_since_heard < timeout;
            if !keep {
                dropped.push(id);
            }
            keep
        });
        dropped
    }

    pub fn get(&self, id: NodeId) -> Option<&Neighbor> {
        self.entries.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Neighbor)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_strong(&self, n: &Neighbor) -> bool {
        n.rssi >= self.threshold
    }

    pub fn strong(&self) -> NodeSet {
        self.entries.iter().filter(|(_, n)| self.is_strong(n)).map(|(k, _)| *k).collect()
    }

    pub fn weak(&self) -> NodeSet {
        self.entries.keys().copied().collect()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[derive(Clone, Debug)]
pub struct NodeTopology {
    id: NodeId,
    max_nodes: usize,
    record_bytes: usize,
    payload: usize,
    sync: SyncState,
    hop: Option<u8>,
    neighbors: NeighborTable,
    forwardee: Option<NodeId>,
    stranded: bool,
    queue: VecDeque<TopologyRecord>,
    smes: VecDeque<Sme>,
}

impl NodeTopology {
    pub fn new(id: NodeId, config: &NetworkConfig) -> Self {
        let mut t = NodeTopology {
            id,
            max_nodes: config.max_nodes,
            record_bytes: config.record_bytes(),
            payload: config.max_uplink_payload,
            sync: SyncState::Unsynced,
            hop: None,
            neighbors: NeighborTable::new(config.rssi_strong_threshold, config.topology_timeout_rounds),
            forwardee: None,
            stranded: false,
            queue: VecDeque::new(),
            smes: VecDeque::new(),
        };
        t.reset();
        t
    }

    /// Back to the power-on state. The master is synchronized by definition.
    pub fn reset(&mut self) {
        let master = self.id.is_master();
        self.sync = if master { SyncState::Synchronized } else { SyncState::Unsynced };
        self.hop = master.then_some(0);
        self.neighbors.clear();
        self.forwardee = None;
        self.stranded = false;
        self.queue.clear();
        self.smes.clear();
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn sync_state(&self) -> SyncState {
        self.sync
    }

    pub fn is_synchronized(&self) -> bool {
        self.sync == SyncState::Synchronized
    }

    pub fn hop(&self) -> Option<u8> {
        self.hop
    }

    pub fn neighbors(&self) -> &NeighborTable {
        &self.neighbors
    }

    pub fn queue(&self) -> &VecDeque<TopologyRecord> {
        &self.queue
    }

    pub fn pending_smes(&self) -> usize {
        self.smes.len()
    }

    pub fn forwardee(&self) -> Option<NodeId> {
        self.forwardee
    }

    pub fn is_stranded(&self) -> bool {
        self.stranded
    }

    /// A downlink flood reached this node `hop` hops away from the master.
    /// Returns true when this flood completed synchronization.
    pub fn on_downlink_flood(&mut self, hop: u8) -> bool {
        if self.id.is_master() {
            return false;
        }
        match self.sync {
            SyncState::Unsynced => {
                self.sync = SyncState::OffsetAcquired;
                false
            }
            SyncState::OffsetAcquired => {
                self.sync = SyncState::Synchronized;
                self.hop = Some(hop);
                true
            }
            SyncState::Synchronized => {
                self.hop = Some(hop);
                false
            }
        }
    }

    /// Picks the strong neighbour with a lower hop count and the highest
    /// RSSI (lowest id on ties). Nodes one hop from the master need none.
    pub fn select_forwardee(&mut self) -> Option<NodeId> {
        let my_hop = match self.hop {
            Some(h) if h > 1 => h,
            _ => {
                self.forwardee = None;
                self.stranded = false;
                return None;
            }
        };
        let best = self
            .neighbors
            .iter()
            .filter(|(_, n)| self.neighbors.is_strong(n) && n.hop < my_hop)
            .max_by(|(ia, a), (ib, b)| a.rssi.cmp(&b.rssi).then(ib.cmp(ia)))
            .map(|(id, _)| id);
        self.forwardee = best;
        self.stranded = best.is_none();
        best
    }

    pub fn own_record(&self) -> TopologyRecord {
        TopologyRecord {
            node: self.id,
            hop: self.hop.unwrap_or(u8::MAX),
            forwardee: self.forwardee,
            strong: self.neighbors.strong(),
            weak: self.neighbors.weak(),
        }
    }

    pub fn enqueue_sme(&mut self, sme: Sme) {
        self.smes.push_back(sme);
    }

    fn enqueue_record(&mut self, rec: TopologyRecord) {
        match self.queue.iter_mut().find(|r| r.node == rec.node) {
            Some(slot) => *slot = rec,
            None => self.queue.push_back(rec),
        }
    }

    /// Frame for this node's round-robin turn: its own record, then pending
    /// SMEs, then as many queued records as still fit, oldest first.
    pub fn build_uplink_frame(&mut self) -> Option<UplinkFrame> {
        if !self.is_synchronized() {
            return None;
        }
        self.select_forwardee();
        let sender = self.own_record();
        let mut room = self.payload - UPLINK_HEADER_BYTES - self.record_bytes;
        let mut smes = Vec::new();
        while room >= SME_BYTES && smes.len() < u8::MAX as usize {
            match self.smes.pop_front() {
                Some(s) => {
                    smes.push(s);
                    room -= SME_BYTES;
                }
                None => break,
            }
        }
        let my_hop = sender.hop;
        let mut forwarded = Vec::new();
        while room >= self.record_bytes && forwarded.len() < u8::MAX as usize {
            let Some(r) = self.queue.pop_front() else { break };
            // Hop counts changed since the record was queued: it would no
            // longer move towards the master.
            if r.hop <= my_hop {
                log::debug!("node {} drops stale record of {}", self.id, r.node);
                continue;
            }
            forwarded.push(r);
            room -= self.record_bytes;
        }
        Some(UplinkFrame { sender, forwarded, smes })
    }

    /// Another node's uplink frame was received with the given RSSI.
    pub fn on_uplink_overheard(&mut self, frame: &UplinkFrame, rssi: i16) {
        let s = &frame.sender;
        if s.node == self.id || s.node.index() >= self.max_nodes {
            return;
        }
        self.neighbors.heard(s.node, rssi, s.hop);
        if s.forwardee == Some(self.id) && !self.id.is_master() {
            self.enqueue_record(s.clone());
            for r in &frame.forwarded {
                self.enqueue_record(r.clone());
            }
            for sme in &frame.smes {
                self.smes.push_back(sme.clone());
            }
        }
    }

    /// Round-robin cycle completed; ages neighbours.
    pub fn end_round(&mut self) -> Vec<NodeId> {
        self.neighbors.end_round()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NetworkConfig {
        NetworkConfig { max_nodes: 16, rssi_strong_threshold: -80, ..Default::default() }
    }

    fn synced(id: u8, hop: u8) -> NodeTopology {
        let mut t = NodeTopology::new(NodeId(id), &cfg());
        t.on_downlink_flood(hop);
        t.on_downlink_flood(hop);
        t
    }

    fn frame_from(id: u8, hop: u8, forwardee: Option<u8>, forwarded: Vec<TopologyRecord>) -> UplinkFrame {
        UplinkFrame {
            sender: TopologyRecord {
                node: NodeId(id),
                hop,
                forwardee: forwardee.map(NodeId),
                strong: NodeSet::new(),
                weak: NodeSet::new(),
            },
            forwarded,
            smes: vec![],
        }
    }

    fn rec(id: u8, hop: u8) -> TopologyRecord {
        frame_from(id, hop, None, vec![]).sender
    }

    #[test]
    fn two_floods_to_synchronize() {
        let mut t = NodeTopology::new(NodeId(3), &cfg());
        assert!(!t.on_downlink_flood(2));
        assert_eq!(t.sync_state(), SyncState::OffsetAcquired);
        assert!(t.build_uplink_frame().is_none());
        assert!(t.on_downlink_flood(2));
        assert!(t.is_synchronized());
        assert_eq!(t.hop(), Some(2));
        t.on_downlink_flood(3);
        assert_eq!(t.hop(), Some(3));
    }

    #[test]
    fn master_is_hop_zero() {
        let mut m = NodeTopology::new(NodeId(0), &cfg());
        assert!(m.is_synchronized());
        m.on_downlink_flood(4);
        assert_eq!(m.hop(), Some(0));
    }

    #[test]
    fn forwardee_by_rssi_then_lowest_id() {
        let mut t = synced(9, 2);
        t.on_uplink_overheard(&frame_from(3, 1, None, vec![]), -70);
        t.on_uplink_overheard(&frame_from(7, 1, None, vec![]), -60);
        t.on_uplink_overheard(&frame_from(8, 2, None, vec![]), -40);
        assert_eq!(t.select_forwardee(), Some(NodeId(7)));

        let mut t = synced(9, 2);
        t.on_uplink_overheard(&frame_from(7, 1, None, vec![]), -65);
        t.on_uplink_overheard(&frame_from(3, 1, None, vec![]), -65);
        assert_eq!(t.select_forwardee(), Some(NodeId(3)));
    }

    #[test]
    fn forwardee_exhaustive_against_brute_force() {
        // All RSSI assignments over three candidate neighbours from a small grid.
        let grid = [-90i16, -75, -70, -60];
        for a in grid {
            for b in grid {
                for c in grid {
                    let mut t = synced(9, 2);
                    let cands = [(3u8, a), (5, b), (7, c)];
                    for (id, r) in cands {
                        t.on_uplink_overheard(&frame_from(id, 1, None, vec![]), r);
                    }
                    let expected = cands
                        .iter()
                        .filter(|(_, r)| *r >= -80)
                        .fold(None::<(u8, i16)>, |best, &(id, r)| match best {
                            Some((_, br)) if br >= r => best,
                            _ => Some((id, r)),
                        })
                        .map(|(id, _)| NodeId(id));
                    assert_eq!(t.select_forwardee(), expected, "{a} {b} {c}");
                    assert_eq!(t.is_stranded(), expected.is_none());
                }
            }
        }
    }

    #[test]
    fn hop_one_has_no_forwardee() {
        let mut t = synced(4, 1);
        t.on_uplink_overheard(&frame_from(0, 0, None, vec![]), -50);
        assert_eq!(t.select_forwardee(), None);
        assert!(!t.is_stranded());
    }

    #[test]
    fn strong_and_weak_membership() {
        let mut t = synced(4, 1);
        t.on_uplink_overheard(&frame_from(5, 1, None, vec![]), -75);
        t.on_uplink_overheard(&frame_from(6, 1, None, vec![]), -85);
        assert!(t.neighbors().strong().contains(NodeId(5)));
        assert!(t.neighbors().weak().contains(NodeId(5)));
        assert!(!t.neighbors().strong().contains(NodeId(6)));
        assert!(t.neighbors().weak().contains(NodeId(6)));
    }

    #[test]
    fn forwardee_enqueues_sender_and_forwarded() {
        let mut t = synced(4, 1);
        let f = frame_from(8, 2, Some(4), vec![rec(9, 3), rec(10, 3), rec(11, 4)]);
        t.on_uplink_overheard(&f, -60);
        assert_eq!(t.queue().len(), 4);
        let mut other = synced(5, 1);
        other.on_uplink_overheard(&f, -60);
        assert!(other.queue().is_empty());
    }

    #[test]
    fn empty_queue_gives_own_record_only() {
        let mut t = synced(4, 1);
        let f = t.build_uplink_frame().unwrap();
        assert!(f.forwarded.is_empty() && f.smes.is_empty());
        assert_eq!(f.sender.node, NodeId(4));
    }

    #[test]
    fn fifo_with_capacity_two() {
        // Payload for header + own record + two forwarded records.
        let c = NetworkConfig { max_uplink_payload: 2 + 3 * 7, ..cfg() };
        let mut t = NodeTopology::new(NodeId(4), &c);
        t.on_downlink_flood(1);
        t.on_downlink_flood(1);
        for id in 10..15 {
            t.on_uplink_overheard(&frame_from(id, 2, Some(4), vec![]), -60);
        }
        let f = t.build_uplink_frame().unwrap();
        let ids: Vec<u8> = f.forwarded.iter().map(|r| r.node.0).collect();
        assert_eq!(ids, vec![10, 11]);
        let left: Vec<u8> = t.queue().iter().map(|r| r.node.0).collect();
        assert_eq!(left, vec![12, 13, 14]);
        assert!(f.encoded_len(16) <= c.max_uplink_payload);
    }

    #[test]
    fn newer_record_replaces_in_place() {
        let mut t = synced(4, 1);
        t.on_uplink_overheard(&frame_from(10, 2, Some(4), vec![]), -60);
        t.on_uplink_overheard(&frame_from(11, 2, Some(4), vec![]), -60);
        let mut newer = frame_from(10, 2, Some(4), vec![]);
        newer.sender.weak.insert(NodeId(4));
        t.on_uplink_overheard(&newer, -60);
        let q: Vec<_> = t.queue().iter().map(|r| (r.node.0, r.weak.len())).collect();
        assert_eq!(q, vec![(10, 1), (11, 0)]);
    }

    #[test]
    fn smes_take_priority_over_forwarded_records() {
        let c = NetworkConfig { max_uplink_payload: 2 + 7 + 16 + 6, ..cfg() };
        let mut t = NodeTopology::new(NodeId(4), &c);
        t.on_downlink_flood(1);
        t.on_downlink_flood(1);
        t.on_uplink_overheard(&frame_from(10, 2, Some(4), vec![]), -60);
        t.enqueue_sme(Sme::Listen { node: NodeId(4), port: 1 });
        t.enqueue_sme(Sme::Listen { node: NodeId(4), port: 2 });
        let f = t.build_uplink_frame().unwrap();
        assert_eq!(f.smes.len(), 2);
        assert!(f.forwarded.is_empty());
        assert_eq!(t.queue().len(), 1);
    }

    #[test]
    fn neighbour_timeout() {
        let c = NetworkConfig { topology_timeout_rounds: 3, ..cfg() };
        let mut t = NodeTopology::new(NodeId(4), &c);
        t.on_uplink_overheard(&frame_from(5, 1, None, vec![]), -60);
        assert!(t.end_round().is_empty());
        // Silent for timeout - 1 rounds, then heard again: retained.
        assert!(t.end_round().is_empty());
        assert!(t.end_round().is_empty());
        t.on_uplink_overheard(&frame_from(5, 1, None, vec![]), -60);
        assert_eq!(t.neighbors().get(NodeId(5)).unwrap().rounds_since_heard, 0);
        assert!(t.end_round().is_empty());
        assert!(t.end_round().is_empty());
        assert!(t.end_round().is_empty());
        assert_eq!(t.end_round(), vec![NodeId(5)]);
        assert!(t.neighbors().weak().is_empty());
    }
}
