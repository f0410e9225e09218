//! Run metrics, their CSV form and the event log.

use std::fmt::{self, Write};
use std::time::Duration;

use crate::ids::{NodeId, StreamId};
use crate::stream::{Direction, StreamParams, StreamState};

#[derive(Clone, Debug, PartialEq)]
pub struct StreamMetrics {
    pub id: StreamId,
    pub params: StreamParams,
    pub state: StreamState,
    /// Packets whose period instance has completed.
    pub sent: u64,
    pub delivered: u64,
    /// Data slots from the first transmission of a packet to its delivery.
    pub max_latency_slots: Option<u64>,
}

impl StreamMetrics {
    pub fn reliability(&self) -> Option<f64> {
        (self.sent > 0).then(|| self.delivered as f64 / self.sent as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub duration: Duration,
    /// From the last node synchronizing to the master holding the full graph.
    pub formation_time: Option<Duration>,
    /// Time at which every reachable node was synchronized.
    pub sync_time: Option<Duration>,
    pub schedules: u32,
    pub streams: Vec<StreamMetrics>,
    /// Average current per node in mA, over the time the node was up.
    pub node_current_ma: Vec<(NodeId, f64)>,
    /// Receptions destroyed by a concurrent transmission.
    pub collisions: u64,
    /// Forwarded records that did not move strictly towards the master.
    pub convergecast_violations: u64,
}

pub const CSV_HEADER: &str = "stream,src,dst,port,period_tiles,direction,redundancy,spatial,state,sent,delivered,reliability,max_latency_slots,formation_s,schedules,mean_current_ma";

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Metrics {
    pub fn total_sent(&self) -> u64 {
        self.streams.iter().map(|s| s.sent).sum()
    }

    pub fn total_delivered(&self) -> u64 {
        self.streams.iter().map(|s| s.delivered).sum()
    }

    pub fn stream(&self, id: StreamId) -> Option<&StreamMetrics> {
        self.streams.iter().find(|s| s.id == id)
    }

    pub fn mean_current_ma(&self) -> Option<f64> {
        let n = self.node_current_ma.len();
        (n > 0).then(|| self.node_current_ma.iter().map(|(_, c)| c).sum::<f64>() / n as f64)
    }

    /// One row per stream and a final summary row.
    pub fn to_csv(&self) -> String {
        let mut o = String::from(CSV_HEADER);
        o.push('\n');
        for s in &self.streams {
            let dir = match s.params.direction {
                Direction::Forward => "uni",
                Direction::Reverse => "rev",
                Direction::Bidirectional => "bi",
            };
            writeln!(
                o,
                "{},{},{},{},{},{},{},{},{:?},{},{},{},{},,,",
                s.id,
                s.id.src.0,
                s.id.dst.0,
                s.id.port,
                s.params.period.tiles(),
                dir,
                s.params.redundancy,
                s.params.spatial as u8,
                s.state,
                s.sent,
                s.delivered,
                opt(s.reliability().map(|r| format!("{r:.6}"))),
                opt(s.max_latency_slots),
            )
            .unwrap();
        }
        let sent = self.total_sent();
        let delivered = self.total_delivered();
        let rel = (sent > 0).then(|| format!("{:.6}", delivered as f64 / sent as f64));
        let lat = self.streams.iter().filter_map(|s| s.max_latency_slots).max();
        writeln!(
            o,
            "summary,,,,,,,,,{sent},{delivered},{},{},{},{},{}",
            opt(rel),
            opt(lat),
            opt(self.formation_time.map(|d| format!("{:.3}", d.as_secs_f64()))),
            self.schedules,
            opt(self.mean_current_ma().map(|c| format!("{c:.6}"))),
        )
        .unwrap();
        o
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    Downlink,
    Uplink,
    Data,
    /// Tile boundary bookkeeping.
    Tile,
}

impl SlotKind {
    fn tag(self) -> &'static str {
        match self {
            SlotKind::Downlink => "DL",
            SlotKind::Uplink => "UL",
            SlotKind::Data => "DA",
            SlotKind::Tile => "--",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    NodeUp,
    NodeDown,
    LinkSet,
    Synchronized,
    Flood,
    Uplink,
    NeighborLost,
    Expired,
    Sme,
    Ie,
    Reschedule,
    Activated,
    Resend,
    Established,
    Rejected,
    Transmit,
    Receive,
    Lost,
    Collision,
    Deliver,
    Formed,
}

impl EventKind {
    fn tag(self) -> &'static str {
        match self {
            EventKind::NodeUp => "node_up",
            EventKind::NodeDown => "node_down",
            EventKind::LinkSet => "link_set",
            EventKind::Synchronized => "sync",
            EventKind::Flood => "flood",
            EventKind::Uplink => "uplink",
            EventKind::NeighborLost => "neighbor_lost",
            EventKind::Expired => "expired",
            EventKind::Sme => "sme",
            EventKind::Ie => "ie",
            EventKind::Reschedule => "reschedule",
            EventKind::Activated => "activated",
            EventKind::Resend => "resend",
            EventKind::Established => "established",
            EventKind::Rejected => "rejected",
            EventKind::Transmit => "tx",
            EventKind::Receive => "rx",
            EventKind::Lost => "lost",
            EventKind::Collision => "collision",
            EventKind::Deliver => "deliver",
            EventKind::Formed => "formed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogEntry {
    pub time: Duration,
    pub slot: SlotKind,
    pub actor: NodeId,
    pub kind: EventKind,
    pub detail: String,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>12} {} {:>3} {} {}",
            self.time.as_micros(),
            self.slot.tag(),
            self.actor.0,
            self.kind.tag(),
            self.detail
        )
    }
}

/// FNV-1a, used as a short payload digest in log lines.
pub fn digest(bytes: &[u8]) -> u32 {
    bytes.iter().fold(0x811c_9dc5u32, |h, &b| (h ^ b as u32).wrapping_mul(0x0100_0193))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimEventLog {
    entries: Vec<LogEntry>,
}

impl SimEventLog {
    pub fn push(&mut self, e: LogEntry) {
        self.entries.push(e);
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        for e in &self.entries {
            writeln!(o, "{e}").unwrap();
        }
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::period::PeriodClass;

    #[test]
    fn csv_has_stream_rows_and_summary() {
        let p = StreamParams::simple(PeriodClass::new(2).unwrap());
        let m = Metrics {
            duration: Duration::from_secs(10),
            formation_time: Some(Duration::from_millis(4200)),
            sync_time: Some(Duration::from_millis(300)),
            schedules: 2,
            streams: vec![StreamMetrics {
                id: StreamId::new(1, 0, 1),
                params: p,
                state: StreamState::Established,
                sent: 50,
                delivered: 49,
                max_latency_slots: Some(3),
            }],
            node_current_ma: vec![(NodeId(0), 1.0), (NodeId(1), 2.0)],
            collisions: 0,
            convergecast_violations: 0,
        };
        let csv = m.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        let cols = CSV_HEADER.split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
        assert!(lines[1].contains(",50,49,0.980000,3,"));
        assert_eq!(lines[2], "summary,,,,,,,,,50,49,0.980000,3,4.200,2,1.500000");
    }

    #[test]
    fn digest_is_fnv1a() {
        assert_eq!(digest(b""), 0x811c_9dc5);
        assert_eq!(digest(b"a"), 0xe40c_292c);
    }
}
