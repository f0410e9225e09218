//! Reschedule triggers.
//!
//! After each schedule the master keeps two link sets: the links the schedule
//! transmits on, and the absent links whose appearance would make two
//! co-slotted transmissions interfere. A topology change touching either set,
//! or a pending stream request, forces a new schedule. Both sets are bloom
//! filters, so a change may trigger a needless reschedule but never misses a
//! needed one.

use std::fmt;

use crate::config::NetworkConfig;
use crate::graph::{DualGraph, LinkDelta};
use crate::ids::Link;
use crate::scheduler::{conflict_in_time, conflicts_in_slot, CompactSchedule};

/// Target false-positive probability at declared capacity.
pub const TARGET_FP_RATE: f64 = 0.01;
/// Average degree assumed when sizing filters from `max_nodes`.
pub const ASSUMED_DEGREE: usize = 6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bloom filter over undirected links.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BloomFilter {
    bits: Vec<u64>,
    m: usize,
    k: u32,
    seed: u64,
    len: usize,
}

impl BloomFilter {
    /// Sized for false-positive probability `fp` once `capacity` links are
    /// inserted: `m = -n ln p / ln² 2`, `k = round(m / n · ln 2)`.
    pub fn with_capacity(capacity: usize, fp: f64, seed: u64) -> Self {
        let n = capacity.max(1) as f64;
        let ln2 = std::f64::consts::LN_2;
        let m = (-n * fp.ln() / (ln2 * ln2)).ceil().max(64.0) as usize;
        let k = ((m as f64 / n) * ln2).round().max(1.0) as u32;
        BloomFilter { bits: vec![0; m.div_ceil(64)], m, k, seed, len: 0 }
    }

    pub fn bits(&self) -> usize {
        self.m
    }

    pub fn hashes(&self) -> u32 {
        self.k
    }

    /// Number of insertions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn positions(&self, l: Link) -> impl Iterator<Item = usize> {
        let h1 = splitmix64(l.key() as u64 ^ self.seed);
        let h2 = splitmix64(h1) | 1;
        let m = self.m as u64;
        (0..self.k as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as usize)
    }

    pub fn insert(&mut self, l: Link) {
        for p in self.positions(l).collect::<Vec<_>>() {
            self.bits[p / 64] |= 1 << (p % 64);
        }
        self.len += 1;
    }

    pub fn contains(&self, l: Link) -> bool {
        self.positions(l).all(|p| self.bits[p / 64] & (1 << (p % 64)) != 0)
    }

    /// `(1 - e^(-kn/m))^k` after `n` insertions.
    pub fn analytic_fp_rate(&self, n: usize) -> f64 {
        let k = self.k as f64;
        (1.0 - (-k * n as f64 / self.m as f64).exp()).powf(k)
    }
}

#[derive(Clone, Debug)]
pub struct ActivationSets {
    pub used_links: BloomFilter,
    pub conflict_links: BloomFilter,
}

const USED_SEED: u64 = 0x7573_6564;
const CONFLICT_SEED: u64 = 0x636f_6e66;

/// Exact link sets behind the filters, in insertion order without repeats.
pub fn activation_links(s: &CompactSchedule, g: &DualGraph) -> (Vec<Link>, Vec<Link>) {
    let mut used = Vec::new();
    for e in &s.elements {
        if let Some(l) = Link::new(e.tx, e.rx) {
            if !used.contains(&l) {
                used.push(l);
            }
        }
    }
    let mut conflict = Vec::new();
    for (i, a) in s.elements.iter().enumerate() {
        for b in &s.elements[i + 1..] {
            if !conflict_in_time(a.offset, a.period, b.offset, b.period) || conflicts_in_slot(a, b, g) {
                continue;
            }
            for (u, v) in [(b.tx, a.rx), (a.tx, b.rx)] {
                if let Some(l) = Link::new(u, v) {
                    if !g.has_weak(u, v) && !conflict.contains(&l) {
                        conflict.push(l);
                    }
                }
            }
        }
    }
    (used, conflict)
}

pub fn build_activation_sets(s: &CompactSchedule, g: &DualGraph, config: &NetworkConfig) -> ActivationSets {
    let (used, conflict) = activation_links(s, g);
    let base = config.max_nodes * ASSUMED_DEGREE;
    let mut used_links = BloomFilter::with_capacity(base.max(used.len()), TARGET_FP_RATE, USED_SEED);
    let mut conflict_links = BloomFilter::with_capacity(base.max(conflict.len()), TARGET_FP_RATE, CONFLICT_SEED);
    for l in used {
        used_links.insert(l);
    }
    for l in conflict {
        conflict_links.insert(l);
    }
    ActivationSets { used_links, conflict_links }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Trigger {
    UsedLinkLost(Link),
    ConflictLinkAppeared(Link),
    PendingSmes(usize),
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::UsedLinkLost(l) => write!(f, "used-link-lost {l}"),
            Trigger::ConflictLinkAppeared(l) => write!(f, "conflict-link-appeared {l}"),
            Trigger::PendingSmes(n) => write!(f, "pending-smes {n}"),
        }
    }
}

/// First trigger that fires, if any.
pub fn should_reschedule(sets: &ActivationSets, delta: &LinkDelta, pending_smes: usize) -> Option<Trigger> {
    if let Some(&l) = delta.strong_removed.iter().find(|&&l| sets.used_links.contains(l)) {
        return Some(Trigger::UsedLinkLost(l));
    }
    if let Some(&l) = delta.weak_added.iter().find(|&&l| sets.conflict_links.contains(l)) {
        return Some(Trigger::ConflictLinkAppeared(l));
    }
    (pending_smes > 0).then_some(Trigger::PendingSmes(pending_smes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LinkQuality;
    use crate::ids::{NodeId, StreamId};
    use crate::scheduler::{validate, ScheduleElement};
    use crate::stream::ChainTag;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn l(a: u8, b: u8) -> Link {
        Link::new(NodeId(a), NodeId(b)).unwrap()
    }

    fn elem(tx: u8, rx: u8, offset: u32, period: u32) -> ScheduleElement {
        ScheduleElement {
            chain: ChainTag { stream: StreamId::new(tx, rx, 0), reverse: false, copy: 0 },
            tx: NodeId(tx),
            rx: NodeId(rx),
            offset,
            period,
        }
    }

    fn two_pairs() -> (DualGraph, CompactSchedule, NetworkConfig) {
        let cfg = NetworkConfig::default();
        let mut g = DualGraph::new(16);
        g.set_link(NodeId(1), NodeId(2), Some(LinkQuality::Strong));
        g.set_link(NodeId(5), NodeId(6), Some(LinkQuality::Strong));
        g.set_link(NodeId(0), NodeId(1), Some(LinkQuality::Strong));
        g.set_link(NodeId(0), NodeId(5), Some(LinkQuality::Strong));
        let s = CompactSchedule::new(1, 2, &cfg, vec![elem(1, 2, 3, 25), elem(5, 6, 3, 25)]);
        (g, s, cfg)
    }

    #[test]
    fn empty_schedule_sets_are_empty() {
        let cfg = NetworkConfig::default();
        let g = DualGraph::new(16);
        let sets = build_activation_sets(&CompactSchedule::empty(&cfg), &g, &cfg);
        assert!(sets.used_links.is_empty() && sets.conflict_links.is_empty());
        for a in 0..16 {
            for b in a + 1..16 {
                assert!(!sets.used_links.contains(l(a, b)));
                assert!(!sets.conflict_links.contains(l(a, b)));
            }
        }
    }

    #[test]
    fn co_slotted_pairs_yield_cross_links() {
        let (g, s, cfg) = two_pairs();
        assert!(validate(&s, &g));
        let (used, conflict) = activation_links(&s, &g);
        assert_eq!(used, vec![l(1, 2), l(5, 6)]);
        let mut c = conflict.clone();
        c.sort();
        assert_eq!(c, vec![l(1, 6), l(2, 5)]);
        let sets = build_activation_sets(&s, &g, &cfg);
        assert!(sets.used_links.contains(l(2, 1)));
        assert!(sets.conflict_links.contains(l(5, 2)));
        assert!(sets.conflict_links.contains(l(1, 6)));
    }

    #[test]
    fn conflict_links_match_injection_oracle() {
        let (g, s, _) = two_pairs();
        let (_, conflict) = activation_links(&s, &g);
        for a in 0..16u8 {
            for b in a + 1..16 {
                if g.has_weak(NodeId(a), NodeId(b)) {
                    continue;
                }
                let mut h = g.clone();
                h.set_link(NodeId(a), NodeId(b), Some(LinkQuality::Weak));
                let breaks = s.elements.iter().enumerate().any(|(i, x)| {
                    s.elements[i + 1..].iter().any(|y| {
                        conflict_in_time(x.offset, x.period, y.offset, y.period) && conflicts_in_slot(x, y, &h)
                    })
                });
                assert_eq!(breaks, conflict.contains(&l(a, b)), "link {a}-{b}");
            }
        }
    }

    #[test]
    fn triggers() {
        let (g, s, cfg) = two_pairs();
        let sets = build_activation_sets(&s, &g, &cfg);
        let lost = LinkDelta { strong_removed: vec![l(1, 2)], ..Default::default() };
        assert_eq!(should_reschedule(&sets, &lost, 0), Some(Trigger::UsedLinkLost(l(1, 2))));
        let appeared = LinkDelta { weak_added: vec![l(2, 5)], ..Default::default() };
        assert_eq!(should_reschedule(&sets, &appeared, 0), Some(Trigger::ConflictLinkAppeared(l(2, 5))));
        let mut h = g.clone();
        h.set_link(NodeId(2), NodeId(5), Some(LinkQuality::Weak));
        assert!(!validate(&s, &h));
        let unused = LinkDelta { strong_removed: vec![l(0, 5)], ..Default::default() };
        assert_eq!(should_reschedule(&sets, &unused, 0), None);
        assert_eq!(should_reschedule(&sets, &unused, 2), Some(Trigger::PendingSmes(2)));
    }

    #[test]
    fn sizing_targets_one_percent() {
        let f = BloomFilter::with_capacity(96, TARGET_FP_RATE, 1);
        assert_eq!(f.hashes(), 7);
        assert!(f.analytic_fp_rate(96) <= 0.0101);
    }

    #[test]
    fn measured_fp_rate_within_twice_analytic() {
        let cap = 16 * ASSUMED_DEGREE * 4;
        let mut f = BloomFilter::with_capacity(cap, TARGET_FP_RATE, 99);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let all: Vec<Link> =
            (0..=255u8).flat_map(|a| (a..=255u8).filter_map(move |b| Link::new(NodeId(a), NodeId(b)))).collect();
        let mut inserted = std::collections::HashSet::new();
        while inserted.len() < cap {
            let x = all[rng.gen_range(0..all.len())];
            if inserted.insert(x) {
                f.insert(x);
            }
        }
        let absent: Vec<Link> = all.into_iter().filter(|x| !inserted.contains(x)).collect();
        let trials = 100_000;
        let fp = (0..trials).filter(|_| f.contains(absent[rng.gen_range(0..absent.len())])).count();
        let rate = fp as f64 / trials as f64;
        assert!(rate <= 2.0 * f.analytic_fp_rate(cap), "rate {rate}");
    }

    proptest! {
        #[test]
        fn no_false_negatives_and_canonical(pairs in proptest::collection::vec((any::<u8>(), any::<u8>()), 1..200), seed in any::<u64>()) {
            let mut f = BloomFilter::with_capacity(pairs.len(), TARGET_FP_RATE, seed);
            let links: Vec<Link> = pairs.iter().filter_map(|&(a, b)| Link::new(NodeId(a), NodeId(b))).collect();
            for &x in &links {
                f.insert(x);
            }
            for &(a, b) in &pairs {
                if let Some(x) = Link::new(NodeId(b), NodeId(a)) {
                    prop_assert!(f.contains(x));
                }
            }
        }
    }
}
