//! Dual strong/weak link graph over node bitmasks.
//!
//! The strong graph holds links good enough to carry data and is what the
//! router walks. The weak graph holds every decodable link, is a superset of
//! the strong one, and is what the scheduler consults for interference.

use std::collections::VecDeque;

use crate::ids::{Link, NodeId, NodeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkQuality {
    Strong,
    Weak,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualGraph {
    max_nodes: usize,
    present: NodeSet,
    strong: Vec<NodeSet>,
    weak: Vec<NodeSet>,
}

/// Link changes produced by a graph update.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkDelta {
    pub weak_added: Vec<Link>,
    pub weak_removed: Vec<Link>,
    pub strong_added: Vec<Link>,
    pub strong_removed: Vec<Link>,
}

impl LinkDelta {
    pub fn is_empty(&self) -> bool {
        self.weak_added.is_empty()
            && self.weak_removed.is_empty()
            && self.strong_added.is_empty()
            && self.strong_removed.is_empty()
    }

    pub fn extend(&mut self, other: LinkDelta) {
        self.weak_added.extend(other.weak_added);
        self.weak_removed.extend(other.weak_removed);
        self.strong_added.extend(other.strong_added);
        self.strong_removed.extend(other.strong_removed);
    }
}

impl DualGraph {
    /// An empty graph with only the master present.
    pub fn new(max_nodes: usize) -> Self {
        let mut present = NodeSet::new();
        present.insert(NodeId::MASTER);
        DualGraph { max_nodes, present, strong: vec![NodeSet::new(); max_nodes], weak: vec![NodeSet::new(); max_nodes] }
    }

    pub fn max_nodes(&self) -> usize {
        self.max_nodes
    }

    pub fn present(&self) -> &NodeSet {
        &self.present
    }

    pub fn is_present(&self, n: NodeId) -> bool {
        self.present.contains(n)
    }

    pub fn in_range(&self, n: NodeId) -> bool {
        n.index() < self.max_nodes
    }

    pub fn add_node(&mut self, n: NodeId) {
        assert!(self.in_range(n), "node {n} out of range");
        self.present.insert(n);
    }

    /// Removes a node and every link touching it; returns the links removed.
    pub fn remove_node(&mut self, n: NodeId) -> LinkDelta {
        let mut delta = LinkDelta::default();
        if !self.present.contains(n) {
            return delta;
        }
        for m in self.weak[n.index()].iter().collect::<Vec<_>>() {
            let l = Link::new(n, m).expect("irreflexive");
            if self.has_strong(n, m) {
                delta.strong_removed.push(l);
            }
            delta.weak_removed.push(l);
            self.weak[m.index()].remove(n);
            self.strong[m.index()].remove(n);
        }
        self.weak[n.index()] = NodeSet::new();
        self.strong[n.index()] = NodeSet::new();
        self.present.remove(n);
        delta
    }

    /// Sets the quality of the link between `a` and `b` (`None` removes it),
    /// adding the endpoints if needed. Returns the resulting change.
    pub fn set_link(&mut self, a: NodeId, b: NodeId, q: Option<LinkQuality>) -> LinkDelta {
        let mut delta = LinkDelta::default();
        let Some(l) = Link::new(a, b) else { return delta };
        if q.is_some() {
            self.add_node(a);
            self.add_node(b);
        }
        let (was_s, was_w) = (self.has_strong(a, b), self.has_weak(a, b));
        let (now_s, now_w) = match q {
            Some(LinkQuality::Strong) => (true, true),
            Some(LinkQuality::Weak) => (false, true),
            None => (false, false),
        };
        let set = |sets: &mut Vec<NodeSet>, on: bool| {
            if on {
                sets[a.index()].insert(b);
                sets[b.index()].insert(a);
            } else {
                sets[a.index()].remove(b);
                sets[b.index()].remove(a);
            }
        };
        set(&mut self.strong, now_s);
        set(&mut self.weak, now_w);
        match (was_s, now_s) {
            (false, true) => delta.strong_added.push(l),
            (true, false) => delta.strong_removed.push(l),
            _ => {}
        }
        match (was_w, now_w) {
            (false, true) => delta.weak_added.push(l),
            (true, false) => delta.weak_removed.push(l),
            _ => {}
        }
        delta
    }

    pub fn has_strong(&self, a: NodeId, b: NodeId) -> bool {
        a.index() < self.max_nodes && self.strong[a.index()].contains(b)
    }

    pub fn has_weak(&self, a: NodeId, b: NodeId) -> bool {
        a.index() < self.max_nodes && self.weak[a.index()].contains(b)
    }

    pub fn strong_neighbors(&self, n: NodeId) -> &NodeSet {
        &self.strong[n.index()]
    }

    pub fn weak_neighbors(&self, n: NodeId) -> &NodeSet {
        &self.weak[n.index()]
    }

    pub fn neighbors(&self, n: NodeId, q: LinkQuality) -> &NodeSet {
        match q {
            LinkQuality::Strong => self.strong_neighbors(n),
            LinkQuality::Weak => self.weak_neighbors(n),
        }
    }

    fn links_of(&self, sets: &[NodeSet]) -> Vec<Link> {
        let mut out = Vec::new();
        for a in self.present.iter() {
            for b in sets[a.index()].iter().filter(|b| *b > a) {
                out.push(Link::new(a, b).unwrap());
            }
        }
        out
    }

    pub fn strong_links(&self) -> Vec<Link> {
        self.links_of(&self.strong)
    }

    pub fn weak_links(&self) -> Vec<Link> {
        self.links_of(&self.weak)
    }

    /// Present non-master nodes without any weak neighbour.
    pub fn disconnected(&self) -> Vec<NodeId> {
        self.present.iter().filter(|n| !n.is_master() && self.weak[n.index()].is_empty()).collect()
    }

    /// Hop distances from `from` over links of quality `q`, restricted to
    /// present nodes.
    pub fn bfs_distances(&self, from: NodeId, q: LinkQuality) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.max_nodes];
        if !self.is_present(from) {
            return dist;
        }
        dist[from.index()] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u.index()].unwrap();
            for v in self.neighbors(u, q).iter() {
                if dist[v.index()].is_none() && self.is_present(v) {
                    dist[v.index()] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Checks symmetry, irreflexivity, strong-within-weak and that links only
    /// join present nodes.
    pub fn check_invariants(&self) -> Result<(), String> {
        for a in 0..self.max_nodes {
            let an = NodeId(a as u8);
            if !self.strong[a].is_subset(&self.weak[a]) {
                return Err(format!("strong links of {an} not within weak links"));
            }
            if self.weak[a].contains(an) {
                return Err(format!("self link at {an}"));
            }
            if !self.weak[a].is_empty() && !self.present.contains(an) {
                return Err(format!("absent node {an} has links"));
            }
            for b in self.weak[a].iter() {
                if !self.weak[b.index()].contains(an) || self.has_strong(an, b) != self.has_strong(b, an) {
                    return Err(format!("asymmetric link {an}-{b}"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(v: u8) -> NodeId {
        NodeId(v)
    }

    #[test]
    fn strong_implies_weak() {
        let mut g = DualGraph::new(8);
        let d = g.set_link(n(1), n(2), Some(LinkQuality::Strong));
        assert!(g.has_weak(n(2), n(1)));
        assert_eq!(d.strong_added.len(), 1);
        assert_eq!(d.weak_added.len(), 1);
        let d = g.set_link(n(1), n(2), Some(LinkQuality::Weak));
        assert_eq!(d.strong_removed, vec![Link::new(n(1), n(2)).unwrap()]);
        assert!(d.weak_added.is_empty());
        g.check_invariants().unwrap();
    }

    #[test]
    fn remove_node_drops_links() {
        let mut g = DualGraph::new(8);
        g.set_link(n(0), n(1), Some(LinkQuality::Strong));
        g.set_link(n(1), n(2), Some(LinkQuality::Weak));
        let d = g.remove_node(n(1));
        assert_eq!(d.weak_removed.len(), 2);
        assert_eq!(d.strong_removed.len(), 1);
        assert!(g.weak_links().is_empty());
        g.check_invariants().unwrap();
    }

    #[test]
    fn bfs_respects_quality() {
        let mut g = DualGraph::new(8);
        g.set_link(n(0), n(1), Some(LinkQuality::Strong));
        g.set_link(n(1), n(2), Some(LinkQuality::Weak));
        g.set_link(n(0), n(3), Some(LinkQuality::Strong));
        g.set_link(n(3), n(2), Some(LinkQuality::Strong));
        let weak = g.bfs_distances(n(0), LinkQuality::Weak);
        let strong = g.bfs_distances(n(0), LinkQuality::Strong);
        assert_eq!(weak[2], Some(2));
        assert_eq!(strong[2], Some(2));
        g.set_link(n(3), n(2), None);
        assert_eq!(g.bfs_distances(n(0), LinkQuality::Strong)[2], None);
        assert_eq!(g.bfs_distances(n(0), LinkQuality::Weak)[2], Some(2));
    }
}
