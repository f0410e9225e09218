//! Master-side aggregation of topology records into the dual graph.
//!
//! A link is present when either endpoint's latest record reports it, and
//! disappears only once no present record supports it. Nodes whose own record
//! has not reached the master for `topology_timeout_rounds` whole rounds are
//! removed with all their links. The master itself is never removed.

use super::wire::{TopologyRecord, UplinkFrame};
use crate::config::NetworkConfig;
use crate::error::TopologyError;
use crate::graph::{DualGraph, LinkDelta, LinkQuality};
use crate::ids::{NodeId, NodeSet};

#[derive(Clone, Debug)]
pub struct MasterTopology {
    max_nodes: usize,
    timeout: u32,
    graph: DualGraph,
    records: Vec<Option<TopologyRecord>>,
    staleness: Vec<u32>,
    heard: NodeSet,
}

impl MasterTopology {
    pub fn new(config: &NetworkConfig) -> Self {
        MasterTopology {
            max_nodes: config.max_nodes,
            timeout: config.topology_timeout_rounds,
            graph: DualGraph::new(config.max_nodes),
            records: vec![None; config.max_nodes],
            staleness: vec![0; config.max_nodes],
            heard: NodeSet::new(),
        }
    }

    pub fn graph(&self) -> &DualGraph {
        &self.graph
    }

    pub fn record(&self, n: NodeId) -> Option<&TopologyRecord> {
        self.records.get(n.index()).and_then(Option::as_ref)
    }

    pub fn staleness(&self, n: NodeId) -> u32 {
        self.staleness[n.index()]
    }

    fn check(&self, r: &TopologyRecord) -> Result<(), TopologyError> {
        let max = self.max_nodes;
        let bad = std::iter::once(r.node)
            .chain(r.forwardee)
            .chain(r.strong.iter())
            .chain(r.weak.iter())
            .find(|n| n.index() >= max);
        match bad {
            Some(node) => Err(TopologyError::NodeOutOfRange { node, max_nodes: max }),
            None => Ok(()),
        }
    }

    /// Merges the sender record and every forwarded record of `frame`.
    /// The whole frame is rejected if any record names a node out of range.
    pub fn ingest(&mut self, frame: &UplinkFrame, direct: bool) -> Result<LinkDelta, TopologyError> {
        let records = std::iter::once(&frame.sender).chain(frame.forwarded.iter());
        for r in records.clone() {
            if let Err(e) = self.check(r) {
                log::warn!("master rejects uplink frame from {}: {e}", frame.sender.node);
                return Err(e);
            }
        }
        if !direct {
            log::trace!("master ingests relayed frame of {}", frame.sender.node);
        }
        let mut delta = LinkDelta::default();
        for r in records {
            delta.extend(self.ingest_record(r));
        }
        Ok(delta)
    }

    /// Merges a single record, e.g. the master's own neighbour view.
    pub fn ingest_record(&mut self, r: &TopologyRecord) -> LinkDelta {
        let x = r.node;
        if x.index() >= self.max_nodes {
            return LinkDelta::default();
        }
        self.heard.insert(x);
        self.staleness[x.index()] = 0;
        if self.records[x.index()].as_ref() == Some(r) && self.graph.is_present(x) {
            return LinkDelta::default();
        }
        self.records[x.index()] = Some(r.clone());
        self.graph.add_node(x);
        self.refresh_row(x)
    }

    fn refresh_row(&mut self, x: NodeId) -> LinkDelta {
        let mut delta = LinkDelta::default();
        let present: Vec<NodeId> = self.graph.present().iter().filter(|&y| y != x).collect();
        for y in present {
            let (xs, xw) = self.reports(x, y);
            let (ys, yw) = self.reports(y, x);
            let q = if xs || ys {
                Some(LinkQuality::Strong)
            } else if xw || yw {
                Some(LinkQuality::Weak)
            } else {
                None
            };
            delta.extend(self.graph.set_link(x, y, q));
        }
        delta
    }

    fn reports(&self, from: NodeId, about: NodeId) -> (bool, bool) {
        match &self.records[from.index()] {
            Some(r) => (r.strong.contains(about), r.weak.contains(about)),
            None => (false, false),
        }
    }

    /// Closes a round-robin cycle. Nodes not heard during it age by one
    /// round; those silent for the timeout are removed.
    pub fn expire_stale(&mut self) -> (LinkDelta, Vec<NodeId>) {
        let heard = std::mem::take(&mut self.heard);
        let mut delta = LinkDelta::default();
        let mut removed = Vec::new();
        for n in self.graph.present().iter().collect::<Vec<_>>() {
            if n.is_master() || heard.contains(n) {
                continue;
            }
            self.staleness[n.index()] += 1;
            if self.staleness[n.index()] >= self.timeout {
                self.records[n.index()] = None;
                self.staleness[n.index()] = 0;
                delta.extend(self.graph.remove_node(n));
                removed.push(n);
            }
        }
        if !removed.is_empty() {
            log::debug!("master expires {:?}", removed);
        }
        (delta, removed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::Link;

    fn rec(node: u8, strong: &[u8], weak: &[u8]) -> TopologyRecord {
        let s: NodeSet = strong.iter().map(|&v| NodeId(v)).collect();
        let w: NodeSet = weak.iter().map(|&v| NodeId(v)).collect();
        TopologyRecord {
            node: NodeId(node),
            hop: if node == 0 { 0 } else { 1 },
            forwardee: None,
            strong: s,
            weak: w.union(&s),
        }
    }

    fn frame(r: TopologyRecord) -> UplinkFrame {
        UplinkFrame { sender: r, forwarded: vec![], smes: vec![] }
    }

    fn link(a: u8, b: u8) -> Link {
        Link::new(NodeId(a), NodeId(b)).unwrap()
    }

    fn master() -> MasterTopology {
        MasterTopology::new(&NetworkConfig { max_nodes: 16, topology_timeout_rounds: 3, ..Default::default() })
    }

    #[test]
    fn direct_merge() {
        let mut m = master();
        m.ingest(&frame(rec(6, &[5], &[])), true).unwrap();
        m.ingest(&frame(rec(5, &[0, 6], &[])), true).unwrap();
        assert!(m.graph().has_strong(NodeId(5), NodeId(0)));
        assert!(m.graph().has_strong(NodeId(5), NodeId(6)));
        m.graph().check_invariants().unwrap();
    }

    #[test]
    fn link_needs_both_sides_to_disappear() {
        let mut m = master();
        m.ingest(&frame(rec(5, &[0, 6], &[])), true).unwrap();
        m.ingest(&frame(rec(6, &[5], &[])), true).unwrap();
        let d = m.ingest(&frame(rec(5, &[0], &[])), true).unwrap();
        assert!(d.strong_removed.is_empty(), "node 6 still reports the link");
        let d = m.ingest(&frame(rec(6, &[], &[])), true).unwrap();
        assert_eq!(d.strong_removed, vec![link(5, 6)]);
        assert_eq!(d.weak_removed, vec![link(5, 6)]);
    }

    #[test]
    fn ingest_is_idempotent() {
        let mut m = master();
        let f = frame(rec(5, &[0, 6], &[7]));
        m.ingest(&frame(rec(6, &[], &[])), true).unwrap();
        m.ingest(&frame(rec(7, &[], &[])), true).unwrap();
        let first = m.ingest(&f, true).unwrap();
        assert!(!first.is_empty());
        assert!(m.ingest(&f, true).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_record_rejects_frame() {
        let mut m = master();
        let mut f = frame(rec(5, &[0], &[]));
        f.forwarded.push(rec(7, &[], &[]));
        f.forwarded[0].weak.insert(NodeId(20));
        assert!(matches!(m.ingest(&f, true), Err(TopologyError::NodeOutOfRange { .. })));
        assert!(!m.graph().is_present(NodeId(5)));
    }

    #[test]
    fn stale_node_expires_after_timeout_rounds() {
        let mut m = master();
        m.ingest(&frame(rec(5, &[0], &[])), true).unwrap();
        assert!(m.expire_stale().1.is_empty());
        assert!(m.expire_stale().1.is_empty());
        assert!(m.expire_stale().1.is_empty());
        let (delta, removed) = m.expire_stale();
        assert_eq!(removed, vec![NodeId(5)]);
        assert_eq!(delta.strong_removed, vec![link(0, 5)]);
        assert!(!m.graph().is_present(NodeId(5)));
    }

    #[test]
    fn refreshed_node_is_retained() {
        let mut m = master();
        let f = frame(rec(5, &[0], &[]));
        m.ingest(&f, true).unwrap();
        m.expire_stale();
        m.expire_stale();
        m.expire_stale();
        assert_eq!(m.staleness(NodeId(5)), 2);
        m.ingest(&f, true).unwrap();
        assert_eq!(m.staleness(NodeId(5)), 0);
        for _ in 0..3 {
            assert!(m.expire_stale().1.is_empty());
        }
        assert!(m.graph().is_present(NodeId(5)));
    }

    #[test]
    fn master_never_expires() {
        let mut m = master();
        for _ in 0..10 {
            m.expire_stale();
        }
        assert!(m.graph().is_present(NodeId(0)));
    }
}
