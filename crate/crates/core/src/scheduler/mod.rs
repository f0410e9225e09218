//! Greedy incremental TDMA scheduling with spatial reuse.
//!
//! Every transmission is an element `(tx, rx, offset, period)` repeating at
//! data slots `offset + k * period`. Two elements can share a slot only if
//! they have no node in common and neither transmitter is heard by the
//! other element's receiver in the weak graph.

mod compact;
mod expand;

pub use compact::{CompactSchedule, ELEMENT_BYTES, SCHEDULE_HEADER_BYTES};
pub use expand::{expand, Action, ExpandedSchedule};

use std::fmt;

use crate::activation::{build_activation_sets, ActivationSets};
use crate::config::NetworkConfig;
use crate::error::PeriodError;
use crate::graph::DualGraph;
use crate::ids::{NodeId, StreamId};
use crate::period::gcd;
use crate::routing::{secondary_path, shortest_path, Path};
use crate::stream::{ChainTag, Direction, StreamParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScheduleElement {
    pub chain: ChainTag,
    pub tx: NodeId,
    pub rx: NodeId,
    /// First data slot of the element, below `period`.
    pub offset: u32,
    /// Repetition interval in data slots.
    pub period: u32,
}

impl ScheduleElement {
    pub fn stream(&self) -> StreamId {
        self.chain.stream
    }

    pub fn active_at(&self, slot: u32) -> bool {
        slot % self.period == self.offset
    }

    fn nodes(&self) -> [NodeId; 2] {
        [self.tx, self.rx]
    }
}

impl fmt::Display for ScheduleElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}->{} @{}/{}", self.chain, self.tx, self.rx, self.offset, self.period)
    }
}

/// Whether slot progressions `a + kp` and `b + kq` ever meet.
pub fn conflict_in_time(a: u32, p: u32, b: u32, q: u32) -> bool {
    let g = gcd(p as u64, q as u64) as i64;
    (a as i64 - b as i64).rem_euclid(g) == 0
}

/// Whether two transmissions interfere when they happen in the same slot.
pub fn conflicts_in_slot(e1: &ScheduleElement, e2: &ScheduleElement, g: &DualGraph) -> bool {
    e1.nodes().iter().any(|n| e2.nodes().contains(n)) || g.has_weak(e2.tx, e1.rx) || g.has_weak(e1.tx, e2.rx)
}

pub fn elements_conflict(e1: &ScheduleElement, e2: &ScheduleElement, g: &DualGraph) -> bool {
    conflict_in_time(e1.offset, e1.period, e2.offset, e2.period) && conflicts_in_slot(e1, e2, g)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RejectReason {
    NoPath,
    Capacity,
    Period(PeriodError),
    NoListener,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::NoPath => f.write_str("no-path"),
            RejectReason::Capacity => f.write_str("capacity"),
            RejectReason::Period(e) => write!(f, "period: {e}"),
            RejectReason::NoListener => f.write_str("no-listener"),
        }
    }
}

/// Hop at which greedy placement ran out of slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FailurePoint {
    pub chain: ChainTag,
    pub tx: NodeId,
    pub rx: NodeId,
    /// Slot of the previous hop of the chain, if any.
    pub after: Option<u32>,
    pub period: u32,
    /// Elements of the same stream already placed when the hop failed.
    pub tentative: Vec<ScheduleElement>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub stream: StreamId,
    pub reason: RejectReason,
    pub failure: Option<FailurePoint>,
}

/// Paths for each redundant copy of one direction of a stream.
pub fn copy_paths(g: &DualGraph, src: NodeId, dst: NodeId, params: &StreamParams, margin: u32) -> Option<Vec<Path>> {
    let primary = shortest_path(g, src, dst).ok()?;
    let secondary = if params.spatial { secondary_path(g, &primary, margin) } else { None };
    let r = params.redundancy as usize;
    let mut paths = vec![primary.clone(); r];
    if let Some(s) = secondary {
        paths[r - 1] = s;
    }
    Some(paths)
}

/// Incrementally grows a schedule one stream at a time.
#[derive(Clone, Debug)]
pub struct ScheduleBuilder<'a> {
    config: &'a NetworkConfig,
    graph: &'a DualGraph,
    elements: Vec<ScheduleElement>,
    accepted: Vec<(StreamId, StreamParams)>,
    rejected: Vec<Rejection>,
}

impl<'a> ScheduleBuilder<'a> {
    pub fn new(config: &'a NetworkConfig, graph: &'a DualGraph) -> Self {
        ScheduleBuilder { config, graph, elements: Vec::new(), accepted: Vec::new(), rejected: Vec::new() }
    }

    pub fn elements(&self) -> &[ScheduleElement] {
        &self.elements
    }

    pub fn accepted(&self) -> &[(StreamId, StreamParams)] {
        &self.accepted
    }

    pub fn rejected(&self) -> &[Rejection] {
        &self.rejected
    }

    fn fits(&self, cand: &ScheduleElement, tentative: &[ScheduleElement]) -> bool {
        !self.elements.iter().chain(tentative).any(|e| elements_conflict(cand, e, self.graph))
    }

    /// Routes and places every chain of the stream, or leaves the schedule
    /// untouched and records the rejection.
    pub fn try_add(&mut self, id: StreamId, params: StreamParams) -> Result<(), Rejection> {
        match self.place(id, &params) {
            Ok(elems) => {
                log::debug!("scheduled {} with {} elements", id, elems.len());
                self.elements.extend(elems);
                self.accepted.push((id, params));
                Ok(())
            }
            Err(r) => {
                log::debug!("rejected {}: {}", id, r.reason);
                self.rejected.push(r.clone());
                Err(r)
            }
        }
    }

    fn place(&self, id: StreamId, params: &StreamParams) -> Result<Vec<ScheduleElement>, Rejection> {
        let reject = |reason, failure| Rejection { stream: id, reason, failure };
        let period = self.config.period_slots(params.period).map_err(|e| reject(RejectReason::Period(e), None))?;
        let directions: &[bool] = match params.direction {
            Direction::Forward => &[false],
            Direction::Reverse => &[true],
            Direction::Bidirectional => &[false, true],
        };
        let mut tentative = Vec::new();
        for &reverse in directions {
            let probe = ChainTag { stream: id, reverse, copy: 0 };
            let paths = copy_paths(self.graph, probe.source(), probe.sink(), params, self.config.dfs_depth_margin)
                .ok_or_else(|| reject(RejectReason::NoPath, None))?;
            for (copy, path) in paths.iter().enumerate() {
                let chain = ChainTag { stream: id, reverse, copy: copy as u8 };
                let mut after: Option<u32> = None;
                for (tx, rx) in path.hops() {
                    let start = after.map_or(0, |s| s + 1);
                    let slot = (start..period)
                        .find(|&offset| self.fits(&ScheduleElement { chain, tx, rx, offset, period }, &tentative));
                    let Some(offset) = slot else {
                        let fp = FailurePoint { chain, tx, rx, after, period, tentative: tentative.clone() };
                        return Err(reject(RejectReason::Capacity, Some(fp)));
                    };
                    tentative.push(ScheduleElement { chain, tx, rx, offset, period });
                    after = Some(offset);
                }
            }
        }
        Ok(tentative)
    }

    /// Freezes the current state into a schedule with the given id.
    pub fn finish(self, schedule_id: u32) -> ScheduleOutcome {
        let periods: Vec<_> = self.accepted.iter().map(|(_, p)| p.period).collect();
        let tiles = if periods.is_empty() {
            self.config.control_superframe_len() as u32
        } else {
            self.config.superframe_duration(periods).expect("accepted periods are valid")
        };
        let schedule = CompactSchedule::new(schedule_id, tiles, self.config, self.elements);
        let activation = build_activation_sets(&schedule, self.graph, self.config);
        ScheduleOutcome { schedule, accepted: self.accepted, rejected: self.rejected, activation }
    }
}

#[derive(Clone, Debug)]
pub struct ScheduleOutcome {
    pub schedule: CompactSchedule,
    pub accepted: Vec<(StreamId, StreamParams)>,
    pub rejected: Vec<Rejection>,
    pub activation: ActivationSets,
}

/// Schedules `streams` in order from scratch.
pub fn schedule_streams(
    streams: &[(StreamId, StreamParams)],
    graph: &DualGraph,
    config: &NetworkConfig,
    schedule_id: u32,
) -> ScheduleOutcome {
    let mut b = ScheduleBuilder::new(config, graph);
    for &(id, params) in streams {
        let _ = b.try_add(id, params);
    }
    b.finish(schedule_id)
}

/// First conflict or malformed element found by checking every slot of the
/// superframe one by one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Malformed(ScheduleElement),
    NotStrong(ScheduleElement),
    Conflict { slot: u32, a: ScheduleElement, b: ScheduleElement },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Malformed(e) => write!(f, "malformed element {e}"),
            Violation::NotStrong(e) => write!(f, "element {e} is not on a strong link"),
            Violation::Conflict { slot, a, b } => write!(f, "slot {slot}: {a} conflicts with {b}"),
        }
    }
}

/// Brute-force check: expands every element over the whole superframe.
pub fn find_violation(s: &CompactSchedule, g: &DualGraph) -> Option<Violation> {
    for e in &s.elements {
        if e.period == 0 || e.offset >= e.period || !s.slots.is_multiple_of(e.period) {
            return Some(Violation::Malformed(*e));
        }
        if !g.has_strong(e.tx, e.rx) {
            return Some(Violation::NotStrong(*e));
        }
    }
    let mut active = Vec::new();
    for slot in 0..s.slots {
        active.clear();
        active.extend(s.elements.iter().filter(|e| e.active_at(slot)));
        for (i, a) in active.iter().enumerate() {
            for b in &active[i + 1..] {
                if conflicts_in_slot(a, b, g) {
                    return Some(Violation::Conflict { slot, a: *a, b: *b });
                }
            }
        }
    }
    None
}

pub fn validate(s: &CompactSchedule, g: &DualGraph) -> bool {
    find_violation(s, g).is_none()
}

/// Pairwise check using the closed-form time predicate.
pub fn validate_pairwise(s: &CompactSchedule, g: &DualGraph) -> bool {
    let ok_elem = |e: &ScheduleElement| {
        e.period > 0 && e.offset < e.period && s.slots.is_multiple_of(e.period) && g.has_strong(e.tx, e.rx)
    };
    s.elements.iter().all(ok_elem)
        && s.elements.iter().enumerate().all(|(i, a)| s.elements[i + 1..].iter().all(|b| !elements_conflict(a, b, g)))
}
