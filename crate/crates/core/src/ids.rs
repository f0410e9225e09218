//! Identifiers shared by every layer: nodes, node sets, undirected links and
//! stream identities.

use std::fmt;

/// Largest network supported. Node ids travel as single bytes on the wire.
pub const MAX_SUPPORTED_NODES: usize = 256;

const WORDS: usize = MAX_SUPPORTED_NODES / 64;

/// A node address. Node 0 is always the master.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u8);

impl NodeId {
    pub const MASTER: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_master(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u8> for NodeId {
    fn from(v: u8) -> Self {
        NodeId(v)
    }
}

/// Fixed-width bitmask over node ids, wide enough for the largest network.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct NodeSet([u64; WORDS]);

impl NodeSet {
    pub const fn new() -> Self {
        NodeSet([0; WORDS])
    }

    pub fn insert(&mut self, n: NodeId) -> bool {
        let (w, b) = (n.index() / 64, n.index() % 64);
        let was = self.0[w] & (1 << b) != 0;
        self.0[w] |= 1 << b;
        !was
    }

    pub fn remove(&mut self, n: NodeId) -> bool {
        let (w, b) = (n.index() / 64, n.index() % 64);
        let was = self.0[w] & (1 << b) != 0;
        self.0[w] &= !(1 << b);
        was
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.0[n.index() / 64] & (1 << (n.index() % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a & !b == 0)
    }

    pub fn union(&self, other: &NodeSet) -> NodeSet {
        let mut out = *self;
        for (o, b) in out.0.iter_mut().zip(other.0.iter()) {
            *o |= b;
        }
        out
    }

    pub fn intersection(&self, other: &NodeSet) -> NodeSet {
        let mut out = *self;
        for (o, b) in out.0.iter_mut().zip(other.0.iter()) {
            *o &= b;
        }
        out
    }

    pub fn difference(&self, other: &NodeSet) -> NodeSet {
        let mut out = *self;
        for (o, b) in out.0.iter_mut().zip(other.0.iter()) {
            *o &= !b;
        }
        out
    }

    /// Members in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(NodeId((wi * 64 + b) as u8))
            })
        })
    }

    /// Packs the lowest `width` bits little-endian into `ceil(width / 8)` bytes.
    pub fn to_bytes(&self, width: usize) -> Vec<u8> {
        let mut out = vec![0u8; width.div_ceil(8)];
        for n in self.iter().filter(|n| n.index() < width) {
            out[n.index() / 8] |= 1 << (n.index() % 8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> NodeSet {
        let mut s = NodeSet::new();
        for (i, &b) in bytes.iter().enumerate() {
            for bit in 0..8 {
                let idx = i * 8 + bit;
                if b & (1 << bit) != 0 && idx < MAX_SUPPORTED_NODES {
                    s.insert(NodeId(idx as u8));
                }
            }
        }
        s
    }
}

impl fmt::Debug for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|n| n.0)).finish()
    }
}

impl FromIterator<NodeId> for NodeSet {
    fn from_iter<I: IntoIterator<Item = NodeId>>(iter: I) -> Self {
        let mut s = NodeSet::new();
        for n in iter {
            s.insert(n);
        }
        s
    }
}

/// Undirected link, always stored low id first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Link(NodeId, NodeId);

impl Link {
    /// Returns `None` for self-links.
    pub fn new(a: NodeId, b: NodeId) -> Option<Link> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Link(a, b)),
            std::cmp::Ordering::Greater => Some(Link(b, a)),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn low(&self) -> NodeId {
        self.0
    }

    pub fn high(&self) -> NodeId {
        self.1
    }

    pub fn key(&self) -> u16 {
        (self.0 .0 as u16) << 8 | self.1 .0 as u16
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.0, self.1)
    }
}

/// Stream identity: source, destination and destination port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamId {
    pub src: NodeId,
    pub dst: NodeId,
    pub port: u8,
}

impl StreamId {
    pub fn new(src: u8, dst: u8, port: u8) -> Self {
        StreamId { src: NodeId(src), dst: NodeId(dst), port }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}:{}", self.src, self.dst, self.port)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn link_canonical_order() {
        let a = Link::new(NodeId(7), NodeId(3)).unwrap();
        let b = Link::new(NodeId(3), NodeId(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.low(), NodeId(3));
        assert!(Link::new(NodeId(4), NodeId(4)).is_none());
    }

    #[test]
    fn node_set_basics() {
        let mut s = NodeSet::new();
        assert!(s.insert(NodeId(200)));
        assert!(!s.insert(NodeId(200)));
        s.insert(NodeId(3));
        s.insert(NodeId(64));
        assert_eq!(s.iter().map(|n| n.0).collect::<Vec<_>>(), vec![3, 64, 200]);
        assert_eq!(s.len(), 3);
        assert!(s.remove(NodeId(64)));
        assert!(!s.contains(NodeId(64)));
    }

    #[test]
    fn node_set_bytes_round_trip() {
        let s: NodeSet = [1u8, 6, 9, 15].into_iter().map(NodeId).collect();
        let bytes = s.to_bytes(16);
        assert_eq!(bytes.len(), 2);
        assert_eq!(NodeSet::from_bytes(&bytes), s);
    }
}
