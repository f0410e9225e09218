//! Path computation over the strong-link graph.

use std::fmt;

use crate::error::RouteError;
use crate::graph::{DualGraph, LinkQuality};
use crate::ids::{NodeId, NodeSet};

/// A loop-free walk over strong links from `nodes[0]` to the last node.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Path {
    nodes: Vec<NodeId>,
}

impl Path {
    pub fn new(nodes: Vec<NodeId>) -> Self {
        assert!(nodes.len() >= 2, "a path needs two endpoints");
        Path { nodes }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    /// Length in hops.
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn src(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn dst(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }

    /// (tx, rx) pairs in path order.
    pub fn hops(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn intermediates(&self) -> &[NodeId] {
        &self.nodes[1..self.nodes.len() - 1]
    }

    pub fn reversed(&self) -> Path {
        Path { nodes: self.nodes.iter().rev().copied().collect() }
    }

    /// Every hop is a strong link and no node repeats.
    pub fn is_valid_in(&self, g: &DualGraph) -> bool {
        let mut seen = NodeSet::new();
        self.nodes.iter().all(|&n| g.is_present(n) && seen.insert(n)) && self.hops().all(|(a, b)| g.has_strong(a, b))
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str("->")?;
            }
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

/// Minimum-hop strong path. Walking back from `dst`, each node's predecessor
/// is its lowest-id neighbour one hop closer to `src`.
pub fn shortest_path(g: &DualGraph, src: NodeId, dst: NodeId) -> Result<Path, RouteError> {
    if src == dst || !g.in_range(src) || !g.in_range(dst) {
        return Err(RouteError::BadEndpoints { src, dst });
    }
    let dist = g.bfs_distances(src, LinkQuality::Strong);
    let Some(mut d) = dist[dst.index()] else {
        return Err(RouteError::Unroutable { src, dst });
    };
    let mut rev = vec![dst];
    let mut cur = dst;
    while d > 0 {
        cur = g.strong_neighbors(cur).iter().find(|n| dist[n.index()] == Some(d - 1)).expect("bfs predecessor");
        rev.push(cur);
        d -= 1;
    }
    rev.reverse();
    Ok(Path::new(rev))
}

/// Depth-limited search for a path avoiding the intermediates of `primary`,
/// no longer than `primary.len() + margin`. Neighbours are expanded in
/// ascending id order, so the result is the lexicographically smallest such
/// path. A one-hop primary is never returned as its own secondary.
pub fn secondary_path(g: &DualGraph, primary: &Path, margin: u32) -> Option<Path> {
    let (src, dst) = (primary.src(), primary.dst());
    let limit = primary.len() as u32 + margin;
    let mut banned: NodeSet = primary.intermediates().iter().copied().collect();

    let mut restricted = g.clone();
    for &n in primary.intermediates() {
        restricted.remove_node(n);
    }
    if primary.len() == 1 {
        restricted.set_link(src, dst, None);
    }
    let to_dst = restricted.bfs_distances(dst, LinkQuality::Strong);
    to_dst[src.index()].filter(|&d| d <= limit)?;

    let mut stack = vec![src];
    banned.insert(src);
    if dfs(&restricted, dst, limit, &to_dst, &mut stack, &mut banned) {
        Some(Path::new(stack))
    } else {
        None
    }
}

fn dfs(
    g: &DualGraph,
    dst: NodeId,
    limit: u32,
    to_dst: &[Option<u32>],
    stack: &mut Vec<NodeId>,
    banned: &mut NodeSet,
) -> bool {
    let u = *stack.last().unwrap();
    if u == dst {
        return true;
    }
    let depth = stack.len() as u32;
    for v in g.strong_neighbors(u).iter() {
        if banned.contains(v) {
            continue;
        }
        match to_dst[v.index()] {
            Some(d) if depth + d <= limit => {}
            _ => continue,
        }
        stack.push(v);
        banned.insert(v);
        if dfs(g, dst, limit, to_dst, stack, banned) {
            return true;
        }
        banned.remove(v);
        stack.pop();
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(n: usize, links: &[(u8, u8)]) -> DualGraph {
        let mut g = DualGraph::new(n);
        for i in 0..n {
            g.add_node(NodeId(i as u8));
        }
        for &(a, b) in links {
            g.set_link(NodeId(a), NodeId(b), Some(LinkQuality::Strong));
        }
        g
    }

    fn ids(p: &Path) -> Vec<u8> {
        p.nodes().iter().map(|n| n.0).collect()
    }

    fn replay_links() -> Vec<(u8, u8)> {
        vec![
            (0, 1),
            (0, 2),
            (0, 3),
            (0, 5),
            (0, 6),
            (0, 7),
            (1, 2),
            (2, 3),
            (3, 4),
            (7, 8),
            (7, 9),
            (9, 10),
            (9, 11),
            (8, 10),
            (10, 11),
            (11, 12),
            (12, 13),
            (13, 5),
            (13, 6),
            (5, 6),
        ]
    }

    #[test]
    fn line_path() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        assert_eq!(ids(&shortest_path(&g, NodeId(2), NodeId(0)).unwrap()), vec![2, 1, 0]);
        assert!(secondary_path(&g, &shortest_path(&g, NodeId(2), NodeId(0)).unwrap(), 5).is_none());
    }

    #[test]
    fn direct_link_wins() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]);
        assert_eq!(ids(&shortest_path(&g, NodeId(4), NodeId(0)).unwrap()), vec![4, 0]);
    }

    #[test]
    fn unroutable() {
        let g = graph(4, &[(0, 1), (2, 3)]);
        assert_eq!(
            shortest_path(&g, NodeId(3), NodeId(0)),
            Err(RouteError::Unroutable { src: NodeId(3), dst: NodeId(0) })
        );
        assert!(shortest_path(&g, NodeId(1), NodeId(1)).is_err());
    }

    #[test]
    fn diamond() {
        let g = graph(4, &[(0, 1), (1, 3), (0, 2), (2, 3)]);
        let p = shortest_path(&g, NodeId(0), NodeId(3)).unwrap();
        assert_eq!(ids(&p), vec![0, 1, 3]);
        assert_eq!(ids(&secondary_path(&g, &p, 0).unwrap()), vec![0, 2, 3]);
    }

    #[test]
    fn replay_topology_routes() {
        let mut g = graph(14, &replay_links());
        let p = shortest_path(&g, NodeId(13), NodeId(0)).unwrap();
        assert_eq!(ids(&p), vec![13, 5, 0]);
        assert_eq!(ids(&secondary_path(&g, &p, 3).unwrap()), vec![13, 6, 0]);

        g.remove_node(NodeId(5));
        let p = shortest_path(&g, NodeId(13), NodeId(0)).unwrap();
        assert_eq!(ids(&p), vec![13, 6, 0]);
        assert_eq!(ids(&secondary_path(&g, &p, 3).unwrap()), vec![13, 12, 11, 9, 7, 0]);
        assert!(secondary_path(&g, &p, 2).is_none());
    }

    fn floyd_warshall(n: usize, adj: &[Vec<bool>]) -> Vec<Vec<u32>> {
        const INF: u32 = u32::MAX / 2;
        let mut d = vec![vec![INF; n]; n];
        for i in 0..n {
            d[i][i] = 0;
            for j in 0..n {
                if adj[i][j] {
                    d[i][j] = 1;
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
                }
            }
        }
        d
    }

    /// Exhaustive enumeration of simple paths avoiding `banned`.
    fn any_path_within(adj: &[Vec<bool>], u: usize, dst: usize, left: u32, seen: &mut Vec<bool>) -> bool {
        if u == dst {
            return true;
        }
        if left == 0 {
            return false;
        }
        for v in 0..adj.len() {
            if adj[u][v] && !seen[v] {
                seen[v] = true;
                let ok = any_path_within(adj, v, dst, left - 1, seen);
                seen[v] = false;
                if ok {
                    return true;
                }
            }
        }
        false
    }

    fn random_graph() -> impl Strategy<Value = (usize, Vec<(u8, u8)>)> {
        (4usize..=20).prop_flat_map(|n| (Just(n), proptest::collection::vec((0..n as u8, 0..n as u8), 0..n * 3)))
    }

    proptest! {
        #[test]
        fn shortest_matches_all_pairs_oracle((n, links) in random_graph(), s in 0u8..20, t in 0u8..20) {
            let (s, t) = (s % n as u8, t % n as u8);
            prop_assume!(s != t);
            let g = graph(n, &links);
            let mut adj = vec![vec![false; n]; n];
            for &(a, b) in &links {
                if a != b {
                    adj[a as usize][b as usize] = true;
                    adj[b as usize][a as usize] = true;
                }
            }
            let d = floyd_warshall(n, &adj)[s as usize][t as usize];
            match shortest_path(&g, NodeId(s), NodeId(t)) {
                Ok(p) => {
                    prop_assert!(p.is_valid_in(&g));
                    prop_assert_eq!(p.len() as u32, d);
                    prop_assert_eq!((p.src(), p.dst()), (NodeId(s), NodeId(t)));
                    prop_assert_eq!(shortest_path(&g, NodeId(s), NodeId(t)).unwrap(), p);
                }
                Err(_) => prop_assert!(d >= u32::MAX / 2),
            }
        }

        #[test]
        fn secondary_is_disjoint_bounded_and_complete((n, links) in random_graph(), s in 0u8..20, margin in 0u32..4) {
            let s = s % n as u8;
            prop_assume!(s != 0);
            let g = graph(n, &links);
            let Ok(p) = shortest_path(&g, NodeId(s), NodeId(0)) else { return Ok(()) };
            let sec = secondary_path(&g, &p, margin);
            let mut adj = vec![vec![false; n]; n];
            for &(a, b) in &links {
                if a != b {
                    adj[a as usize][b as usize] = true;
                    adj[b as usize][a as usize] = true;
                }
            }
            if p.len() == 1 {
                adj[s as usize][0] = false;
                adj[0][s as usize] = false;
            }
            let mut seen = vec![false; n];
            seen[s as usize] = true;
            for m in p.intermediates() {
                seen[m.index()] = true;
            }
            let exists = any_path_within(&adj, s as usize, 0, p.len() as u32 + margin, &mut seen);
            prop_assert_eq!(sec.is_some(), exists);
            if let Some(q) = sec {
                prop_assert!(q.is_valid_in(&g));
                prop_assert!(q.len() <= p.len() + margin as usize);
                prop_assert!(q.intermediates().iter().all(|m| !p.intermediates().contains(m)));
                prop_assert_eq!((q.src(), q.dst()), (p.src(), p.dst()));
                prop_assert_ne!(q, p);
            }
        }
    }
}
