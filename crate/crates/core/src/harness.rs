//! Experiment harness: network generators, the flooding baseline, Monte
//! Carlo admission, formation and power sweeps.

use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{NetworkConfig, TileKind};
use crate::graph::{DualGraph, LinkQuality};
use crate::ids::{NodeId, StreamId};
use crate::period::PeriodClass;
use crate::scheduler::{Action, ExpandedSchedule, ScheduleBuilder};
use crate::sim::{estimate_power, measure_formation, LinkSpec, PowerModel, Scenario, SimError, TopologyActivity};
use crate::stream::{ChainTag, StreamParams};

/// RSSI given to generated links; well above the strong threshold.
pub const GENERATED_RSSI: i16 = -60;

/// Node positions on a hexagonal lattice, in axial coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HexNetwork {
    pub coords: Vec<(i32, i32)>,
}

impl HexNetwork {
    /// All cells within `radius` of the centre, centre first, then ring by
    /// ring. Radius 3 gives 37 nodes and a diameter of 6 hops.
    pub fn hexagon(radius: i32) -> Self {
        let mut coords = vec![(0, 0)];
        for k in 1..=radius {
            let mut ring: Vec<(i32, i32)> = Vec::new();
            for q in -k..=k {
                for r in (-k).max(-q - k)..=k.min(-q + k) {
                    if hex_distance((0, 0), (q, r)) == k {
                        ring.push((q, r));
                    }
                }
            }
            ring.sort_by(|a, b| angle(*a).total_cmp(&angle(*b)));
            coords.extend(ring);
        }
        HexNetwork { coords }
    }

    /// Rectangular block of `rows` offset rows, row-major from a corner.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut coords = Vec::with_capacity(rows * cols);
        for row in 0..rows as i32 {
            for col in 0..cols as i32 {
                coords.push((col - (row - (row & 1)) / 2, row));
            }
        }
        HexNetwork { coords }
    }

    /// The first `n` nodes of the most compact grid holding them, with the
    /// most central cell relabelled as node 0.
    pub fn with_nodes(n: usize) -> Self {
        let cols = (n as f64).sqrt().ceil() as usize;
        let rows = n.div_ceil(cols.max(1));
        let mut h = Self::grid(rows, cols);
        h.coords.truncate(n);
        h.center_master();
        h
    }

    /// Swaps node 0 with the node of least eccentricity (lowest index on ties).
    pub fn center_master(&mut self) {
        let ecc = |i: usize| self.coords.iter().map(|c| hex_distance(self.coords[i], *c)).max().unwrap_or(0);
        if let Some(best) = (0..self.len()).min_by_key(|&i| (ecc(i), i)) {
            self.coords.swap(0, best);
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Lattice neighbour pairs `(i, j)` with `i < j`.
    pub fn links(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (i, a) in self.coords.iter().enumerate() {
            for (j, b) in self.coords.iter().enumerate().skip(i + 1) {
                if hex_distance(*a, *b) == 1 {
                    out.push((NodeId(i as u8), NodeId(j as u8)));
                }
            }
        }
        out
    }

    /// Every link strong, in both graphs.
    pub fn graph(&self, max_nodes: usize) -> DualGraph {
        let mut g = DualGraph::new(max_nodes);
        for i in 0..self.len() {
            g.add_node(NodeId(i as u8));
        }
        for (a, b) in self.links() {
            g.set_link(a, b, Some(LinkQuality::Strong));
        }
        g
    }

    /// Loss-free scenario over this network with the master at node 0.
    pub fn scenario(&self, config: NetworkConfig) -> Scenario {
        let mut s = Scenario::new(config);
        s.nodes = (0..self.len()).map(|i| NodeId(i as u8)).collect();
        s.links = self.links().into_iter().map(|(a, b)| LinkSpec { a, b, rssi: GENERATED_RSSI, per: 0.0 }).collect();
        s
    }
}

fn hex_distance(a: (i32, i32), b: (i32, i32)) -> i32 {
    let (dq, dr) = (a.0 - b.0, a.1 - b.1);
    (dq.abs() + dr.abs() + (dq + dr).abs()) / 2
}

fn angle((q, r): (i32, i32)) -> f64 {
    let x = q as f64 + r as f64 / 2.0;
    let y = r as f64 * 3f64.sqrt() / 2.0;
    let a = y.atan2(x);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

/// Parses `comparison37` or `hex<rows>x<cols>`.
pub fn preset(name: &str) -> Option<HexNetwork> {
    if name == "comparison37" {
        return Some(HexNetwork::hexagon(3));
    }
    let (r, c) = name.strip_prefix("hex")?.split_once('x')?;
    let (rows, cols): (usize, usize) = (r.parse().ok()?, c.parse().ok()?);
    (rows > 0 && cols > 0 && rows * cols <= crate::ids::MAX_SUPPORTED_NODES).then(|| HexNetwork::grid(rows, cols))
}

/// Whole-network flooding baseline: every packet occupies `hops` slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WcpsBaseline {
    pub hops: u32,
    pub slot: Duration,
    pub deadline: Duration,
    pub message_bytes: usize,
    /// Extra flood slots beyond the network depth.
    pub oversize: u32,
}

impl WcpsBaseline {
    pub fn new(hops: u32) -> Self {
        WcpsBaseline {
            hops,
            slot: Duration::from_millis(2),
            deadline: Duration::from_millis(50),
            message_bytes: 21,
            oversize: 0,
        }
    }
}

pub fn wcps_admission(base: &WcpsBaseline) -> u32 {
    let slots = (base.deadline.as_nanos() / base.slot.as_nanos()) as u32;
    slots / (base.hops + base.oversize).max(1)
}

/// Timing used when comparing against the flooding baseline: 2 ms slots,
/// 25 ms tiles so that a two-tile period meets the 50 ms deadline, and
/// control regions keeping the default control share.
pub fn comparison_config(max_nodes: usize) -> NetworkConfig {
    NetworkConfig {
        max_nodes,
        tile_duration: Duration::from_millis(25),
        data_slot_duration: Duration::from_millis(2),
        downlink_control_duration: Duration::from_millis(9),
        uplink_control_duration: Duration::from_millis(2),
        ..NetworkConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct MonteCarloSpec {
    pub network: HexNetwork,
    pub config: NetworkConfig,
    pub hops: u32,
    pub trials: usize,
    /// Stream period; its length is the latency bound.
    pub period: PeriodClass,
    pub redundancy: u8,
    pub seed: u64,
}

impl MonteCarloSpec {
    pub fn comparison(hops: u32, trials: usize, seed: u64) -> Self {
        Self::on(HexNetwork::hexagon(3), hops, trials, seed)
    }

    /// Comparison timing on an arbitrary network.
    pub fn on(network: HexNetwork, hops: u32, trials: usize, seed: u64) -> Self {
        MonteCarloSpec {
            config: comparison_config(network.len()),
            network,
            hops,
            trials,
            period: PeriodClass::new(2).expect("in progression"),
            redundancy: 1,
            seed,
        }
    }

    pub fn deadline(&self) -> Duration {
        self.config.tile_duration * self.period.tiles()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum HarnessError {
    #[error("no node pair is {0} hops apart")]
    NoPair(u32),
    #[error("invalid stream parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Period(#[from] crate::error::PeriodError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdmissionRange {
    pub hops: u32,
    pub min: usize,
    pub max: usize,
    pub median: usize,
    /// Streams admitted by each trial, in trial order.
    pub counts: Vec<usize>,
}

fn pairs_at(g: &DualGraph, n: usize, d: u32) -> Vec<(NodeId, NodeId)> {
    let mut out = Vec::new();
    for i in 0..n {
        let dist = g.bfs_distances(NodeId(i as u8), LinkQuality::Strong);
        for (j, dj) in dist.iter().enumerate().take(n) {
            if i != j && *dj == Some(d) {
                out.push((NodeId(i as u8), NodeId(j as u8)));
            }
        }
    }
    out
}

fn trial_seed(seed: u64, hops: u32, trial: usize) -> u64 {
    seed ^ (hops as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (trial as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Admits random streams between nodes `hops` apart until the first
/// rejection, once per trial.
pub fn tdmh_admission_mc(spec: &MonteCarloSpec) -> Result<AdmissionRange, HarnessError> {
    let n = spec.network.len();
    let g = spec.network.graph(spec.config.max_nodes);
    let pairs = pairs_at(&g, n, spec.hops);
    if pairs.is_empty() {
        return Err(HarnessError::NoPair(spec.hops));
    }
    spec.config.period_slots(spec.period)?;
    let params = StreamParams::new(spec.period, crate::stream::Direction::Forward, spec.redundancy, false)
        .map_err(|e| HarnessError::Params(e.to_string()))?;
    let cap = 256 * pairs.len();
    let counts: Vec<usize> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(spec.seed, spec.hops, trial));
            let mut b = ScheduleBuilder::new(&spec.config, &g);
            let mut ports = std::collections::BTreeMap::<(NodeId, NodeId), u8>::new();
            let mut admitted = 0;
            while admitted < cap {
                let &(src, dst) = pairs.choose(&mut rng).expect("non-empty");
                let port = ports.entry((src, dst)).or_insert(0);
                let id = StreamId { src, dst, port: *port };
                *port = port.wrapping_add(1);
                if b.try_add(id, params).is_err() {
                    break;
                }
                admitted += 1;
            }
            admitted
        })
        .collect();
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    Ok(AdmissionRange {
        hops: spec.hops,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        median: sorted[(sorted.len() - 1) / 2],
        counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompareRow {
    pub hops: u32,
    pub wcps: u32,
    pub tdmh_min: usize,
    pub tdmh_max: usize,
    pub tdmh_median: usize,
}

/// Longest shortest path of the network.
pub fn diameter(network: &HexNetwork) -> u32 {
    let g = network.graph(network.len());
    (0..network.len())
        .filter_map(|i| g.bfs_distances(NodeId(i as u8), LinkQuality::Strong).into_iter().flatten().max())
        .max()
        .unwrap_or(0)
}

/// Sweeps every hop distance present in the network against a flooding
/// baseline spanning its diameter.
pub fn compare(network: &HexNetwork, trials: usize, seed: u64) -> Result<Vec<CompareRow>, HarnessError> {
    let h = diameter(network);
    let wcps = wcps_admission(&WcpsBaseline::new(h));
    (1..=h)
        .map(|d| {
            let r = tdmh_admission_mc(&MonteCarloSpec::on(network.clone(), d, trials, seed))?;
            Ok(CompareRow { hops: d, wcps, tdmh_min: r.min, tdmh_max: r.max, tdmh_median: r.median })
        })
        .collect()
}

pub const COMPARE_HEADER: &str = "hops,wcps,tdmh_min,tdmh_max,tdmh_median";

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut o = format!("{COMPARE_HEADER}\n");
    for r in rows {
        o += &format!("{},{},{},{},{}\n", r.hops, r.wcps, r.tdmh_min, r.tdmh_max, r.tdmh_median);
    }
    o
}

pub fn compare_text(rows: &[CompareRow]) -> String {
    rows.iter()
        .map(|r| {
            format!("hops={}: wcps={} tdmh=[{}, {}] median={}\n", r.hops, r.wcps, r.tdmh_min, r.tdmh_max, r.tdmh_median)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FormationPoint {
    pub max_nodes: usize,
    pub nodes: usize,
    pub uplink_frames: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormationResult {
    pub point: FormationPoint,
    pub time: Result<Duration, SimError>,
}

/// Master-side silence timeout used by the formation study. Wider bitmasks
/// leave room for fewer forwarded records per frame, so a node's own record
/// reaches the master less often as `max_nodes` grows.
pub fn formation_timeout_rounds(max_nodes: usize) -> u32 {
    (max_nodes as u32 / 8).max(NetworkConfig::default().topology_timeout_rounds)
}

/// Scenario for one formation point: a compact hex block with the master at
/// its centre, default timing otherwise.
pub fn formation_scenario(p: FormationPoint) -> Scenario {
    let cfg = NetworkConfig {
        max_nodes: p.max_nodes,
        uplink_frames_per_tile: p.uplink_frames,
        topology_timeout_rounds: formation_timeout_rounds(p.max_nodes),
        ..Default::default()
    };
    let mut s = HexNetwork::with_nodes(p.nodes).scenario(cfg);
    s.duration = Duration::from_secs(3600);
    s
}

pub fn formation_grid() -> Vec<FormationPoint> {
    let mut v = Vec::new();
    for &max in &[16, 32, 64, 128] {
        for &nodes in &[16, 32, 64, 128] {
            if nodes > max {
                continue;
            }
            for &uplink_frames in &[1, 4] {
                v.push(FormationPoint { max_nodes: max, nodes, uplink_frames });
            }
        }
    }
    v
}

pub fn formation_sweep(points: &[FormationPoint]) -> Vec<FormationResult> {
    let mut out: Vec<FormationResult> = points
        .par_iter()
        .map(|&point| FormationResult { point, time: measure_formation(&formation_scenario(point)) })
        .collect();
    out.sort_by_key(|r| (r.point.max_nodes, r.point.nodes, r.point.uplink_frames));
    out
}

pub const FORMATION_HEADER: &str = "max_nodes,nodes,uplink_frames,formation_s";

pub fn formation_csv(results: &[FormationResult]) -> String {
    let mut o = format!("{FORMATION_HEADER}\n");
    for r in results {
        let t = match &r.time {
            Ok(d) => d.as_secs_f64().to_string(),
            Err(_) => "nonconvergent".into(),
        };
        o += &format!("{},{},{},{}\n", r.point.max_nodes, r.point.nodes, r.point.uplink_frames, t);
    }
    o
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotRole {
    Transmit,
    Receive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerPoint {
    pub role: SlotRole,
    pub neighbors: usize,
    pub active_slots: usize,
    pub utilization: f64,
    pub current_ma: f64,
}

/// Expanded schedule with `active` slots of one role at the start of a
/// superframe of `slots` data slots.
pub fn synthetic_schedule(role: SlotRole, active: usize, slots: usize) -> ExpandedSchedule {
    let c = ChainTag { stream: StreamId::new(1, 2, 0), reverse: false, copy: 0 };
    let a = match role {
        SlotRole::Transmit => Action::TransmitFromSession(c),
        SlotRole::Receive => Action::ReceiveToSession(c),
    };
    let mut actions = vec![Action::Sleep; slots];
    for x in actions.iter_mut().take(active) {
        *x = a;
    }
    ExpandedSchedule { node: NodeId(1), schedule_id: 1, actions, buffers: vec![] }
}

/// Average current over the (data-slot utilization, neighbour count) grid
/// for one control superframe of the given configuration.
pub fn power_sweep(config: &NetworkConfig, model: &PowerModel, neighbors: &[usize], steps: usize) -> Vec<PowerPoint> {
    let tiles = config.control_superframe_len() as u32;
    let slots: usize = (0..tiles as u64).map(|t| config.data_slots_per_tile(config.tile_kind(t)) as usize).sum();
    let mut out = Vec::new();
    for role in [SlotRole::Transmit, SlotRole::Receive] {
        for &nb in neighbors {
            for step in 0..=steps {
                let active = (slots * step).div_ceil(steps.max(1)).min(slots);
                let e = synthetic_schedule(role, active, slots);
                let topo = TopologyActivity { neighbors: nb, is_master: false };
                out.push(PowerPoint {
                    role,
                    neighbors: nb,
                    active_slots: active,
                    utilization: active as f64 / slots as f64,
                    current_ma: estimate_power(&e, tiles, topo, model, config),
                });
            }
        }
    }
    out
}

pub const POWER_HEADER: &str = "role,neighbors,active_slots,utilization,current_ma";

pub fn power_csv(points: &[PowerPoint]) -> String {
    let mut o = format!("{POWER_HEADER}\n");
    for p in points {
        let role = match p.role {
            SlotRole::Transmit => "tx",
            SlotRole::Receive => "rx",
        };
        o += &format!("{role},{},{},{},{}\n", p.neighbors, p.active_slots, p.utilization, p.current_ma);
    }
    o
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct CsvError {
    pub line: usize,
    pub message: String,
}

fn csv_rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>, CsvError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(CsvError { line: 1, message: format!("expected header {header}") }),
    }
    let cols = header.split(',').count();
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() == cols {
                Ok((i + 1, f))
            } else {
                Err(CsvError { line: i + 1, message: format!("expected {cols} fields, found {}", f.len()) })
            }
        })
        .collect()
}

fn field<T: std::str::FromStr>(line: usize, v: &str) -> Result<T, CsvError> {
    v.parse().map_err(|_| CsvError { line, message: format!("bad field {v:?}") })
}

pub fn parse_compare_csv(text: &str) -> Result<Vec<CompareRow>, CsvError> {
    csv_rows(text, COMPARE_HEADER)?
        .into_iter()
        .map(|(l, f)| {
            Ok(CompareRow {
                hops: field(l, f[0])?,
                wcps: field(l, f[1])?,
                tdmh_min: field(l, f[2])?,
                tdmh_max: field(l, f[3])?,
                tdmh_median: field(l, f[4])?,
            })
        })
        .collect()
}

/// Formation rows; `None` marks a point that did not converge.
pub fn parse_formation_csv(text: &str) -> Result<Vec<(FormationPoint, Option<Duration>)>, CsvError> {
    csv_rows(text, FORMATION_HEADER)?
        .into_iter()
        .map(|(l, f)| {
            let p =
                FormationPoint { max_nodes: field(l, f[0])?, nodes: field(l, f[1])?, uplink_frames: field(l, f[2])? };
            let t = match f[3] {
                "nonconvergent" => None,
                v => Some(Duration::from_secs_f64(field(l, v)?)),
            };
            Ok((p, t))
        })
        .collect()
}

pub fn parse_power_csv(text: &str) -> Result<Vec<PowerPoint>, CsvError> {
    csv_rows(text, POWER_HEADER)?
        .into_iter()
        .map(|(l, f)| {
            let role = match f[0] {
                "tx" => SlotRole::Transmit,
                "rx" => SlotRole::Receive,
                v => return Err(CsvError { line: l, message: format!("bad role {v:?}") }),
            };
            Ok(PowerPoint {
                role,
                neighbors: field(l, f[1])?,
                active_slots: field(l, f[2])?,
                utilization: field(l, f[3])?,
                current_ma: field(l, f[4])?,
            })
        })
        .collect()
}

/// Fourteen-node mesh used for the relay-failure replay: node 13 reaches
/// the master through relays 5 and 6, with a long detour 13-12-11-9-7.
pub fn replay_scenario() -> Scenario {
    let cfg = NetworkConfig { dfs_depth_margin: 3, ..Default::default() };
    let mut s = Scenario::new(cfg);
    s.nodes = (0..14).map(NodeId).collect();
    let strong: &[(u8, u8, i16)] = &[
        (0, 1, -55),
        (0, 2, -58),
        (0, 3, -60),
        (0, 5, -62),
        (0, 6, -57),
        (0, 7, -59),
        (1, 2, -61),
        (2, 3, -64),
        (3, 4, -63),
        (7, 8, -60),
        (7, 9, -66),
        (9, 10, -62),
        (9, 11, -65),
        (8, 10, -67),
        (10, 11, -61),
        (11, 12, -64),
        (12, 13, -66),
        (13, 5, -68),
        (13, 6, -60),
        (5, 6, -70),
    ];
    let weak: &[(u8, u8, i16)] = &[(4, 5, -86), (1, 3, -88), (8, 9, -87)];
    for &(a, b, rssi) in strong.iter().chain(weak) {
        s.links.push(LinkSpec { a: NodeId(a), b: NodeId(b), rssi, per: 0.0 });
    }
    s.streams.push(crate::sim::StreamRequest {
        id: StreamId::new(13, 0, 1),
        params: StreamParams::new(
            PeriodClass::new(10).expect("in progression"),
            crate::stream::Direction::Forward,
            3,
            true,
        )
        .expect("valid"),
    });
    s.events.push(crate::sim::TimedEvent {
        at: Duration::from_secs(90),
        event: crate::sim::ScenarioEvent::NodeDown(NodeId(5)),
    });
    s.duration = Duration::from_secs(180);
    s
}

/// Streams between two-hop pairs of a 16-node hex block, every link losing
/// packets with probability `per`.
pub fn redundancy_scenario(redundancy: u8, per: f64, seed: u64) -> Scenario {
    let net = HexNetwork::with_nodes(16);
    let mut s = net.scenario(NetworkConfig::default());
    for l in &mut s.links {
        l.per = per;
    }
    let g = net.graph(16);
    let pairs: Vec<_> = pairs_at(&g, net.len(), 2).into_iter().filter(|(a, b)| a < b).collect();
    let period = PeriodClass::new(10).expect("in progression");
    let params = StreamParams::new(period, crate::stream::Direction::Forward, redundancy, false).expect("valid");
    for (a, b) in pairs.iter().step_by(pairs.len().div_ceil(4)).copied() {
        s.streams.push(crate::sim::StreamRequest { id: StreamId { src: a, dst: b, port: 1 }, params });
    }
    s.seed = seed;
    s.duration = Duration::from_secs(120);
    s
}

/// Mean delivery ratio over `seeds` runs for redundancy 1, 2 and 3.
pub fn redundancy_study(per: f64, seeds: u64) -> Result<[f64; 3], SimError> {
    let runs: Vec<(usize, f64)> = (0..3usize)
        .flat_map(|r| (0..seeds).map(move |seed| (r, seed)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(r, seed)| {
            let s = redundancy_scenario(r as u8 + 1, per, seed + 1);
            let opts = crate::sim::SimOptions { log: crate::sim::LogLevel::Off, ..Default::default() };
            let (m, _) = crate::sim::run_with(&s, opts)?;
            let ratio = if m.total_sent() == 0 { 0.0 } else { m.total_delivered() as f64 / m.total_sent() as f64 };
            Ok((r, ratio))
        })
        .collect::<Result<_, SimError>>()?;
    let mut out = [0.0; 3];
    for (r, x) in runs {
        out[r] += x / seeds as f64;
    }
    Ok(out)
}

/// Control tiles of each kind in `tiles` tiles.
pub fn tile_mix(config: &NetworkConfig, tiles: u32) -> (u32, u32) {
    let dl = (0..tiles as u64).filter(|&t| config.tile_kind(t) == TileKind::Downlink).count() as u32;
    (dl, tiles - dl)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hexagon_sizes() {
        let h = HexNetwork::hexagon(3);
        assert_eq!(h.len(), 37);
        let g = h.graph(37);
        let ecc = g.bfs_distances(NodeId(0), LinkQuality::Strong);
        assert_eq!(ecc.iter().flatten().max(), Some(&3));
        assert_eq!(diameter(&h), 6);
        assert_eq!(g.strong_neighbors(NodeId(0)).len(), 6);
        // 6 interior ring-1 + ring-2 nodes have six neighbours each.
        let six = (0..37).filter(|&i| g.strong_neighbors(NodeId(i)).len() == 6).count();
        assert_eq!(six, 19);
    }

    #[test]
    fn grid_interior_degree_six() {
        let h = HexNetwork::grid(5, 5);
        let g = h.graph(25);
        assert_eq!(g.strong_neighbors(NodeId(12)).len(), 6);
        assert_eq!(HexNetwork::with_nodes(128).len(), 128);
        assert_eq!(preset("hex4x4").unwrap().len(), 16);
        assert_eq!(preset("comparison37").unwrap().len(), 37);
        assert!(preset("hex0x3").is_none());
        assert!(preset("bogus").is_none());
    }

    #[test]
    fn wcps_boundaries() {
        assert_eq!(wcps_admission(&WcpsBaseline::new(6)), 4);
        assert_eq!(wcps_admission(&WcpsBaseline::new(1)), 25);
        assert_eq!(wcps_admission(&WcpsBaseline::new(25)), 1);
        assert_eq!(wcps_admission(&WcpsBaseline::new(26)), 0);
        let over = WcpsBaseline { oversize: 2, ..WcpsBaseline::new(6) };
        assert_eq!(wcps_admission(&over), 3);
    }

    #[test]
    fn comparison_timing() {
        let c = comparison_config(37);
        c.validate().unwrap();
        assert_eq!(c.period_slots(PeriodClass::new(2).unwrap()), Ok(19));
        assert!((c.control_share() - NetworkConfig::default().control_share()).abs() < 1e-12);
        assert_eq!(MonteCarloSpec::comparison(1, 1, 0).deadline(), Duration::from_millis(50));
    }

    #[test]
    fn admission_is_deterministic_and_errors_without_pairs() {
        let spec = MonteCarloSpec::comparison(2, 4, 7);
        let a = tdmh_admission_mc(&spec).unwrap();
        assert_eq!(a, tdmh_admission_mc(&spec).unwrap());
        assert!(a.min <= a.median && a.median <= a.max);
        assert!(a.counts.contains(&a.min) && a.counts.contains(&a.max));
        let far = MonteCarloSpec::comparison(7, 1, 7);
        assert_eq!(tdmh_admission_mc(&far), Err(HarnessError::NoPair(7)));
    }

    #[test]
    fn power_sweep_rows() {
        let cfg = NetworkConfig::default();
        let pts = power_sweep(&cfg, &PowerModel::default(), &[2, 6], 5);
        assert_eq!(pts.len(), 2 * 2 * 6);
        assert_eq!(pts[0].active_slots, 0);
        assert_eq!(pts[5].active_slots, 25);
        assert!(pts
            .windows(2)
            .filter(|w| w[0].neighbors == w[1].neighbors && w[0].role == w[1].role)
            .all(|w| w[1].current_ma > w[0].current_ma));
        assert_eq!(power_csv(&pts).lines().count(), 25);
        assert_eq!(parse_power_csv(&power_csv(&pts)).unwrap(), pts);
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![CompareRow { hops: 1, wcps: 4, tdmh_min: 60, tdmh_max: 110, tdmh_median: 90 }];
        assert_eq!(parse_compare_csv(&compare_csv(&rows)).unwrap(), rows);
        let p = FormationPoint { max_nodes: 16, nodes: 16, uplink_frames: 1 };
        let res = vec![
            FormationResult { point: p, time: Ok(Duration::from_millis(7500)) },
            FormationResult { point: p, time: Err(SimError::NonConvergent(Duration::from_secs(1))) },
        ];
        let back = parse_formation_csv(&formation_csv(&res)).unwrap();
        assert_eq!(back, vec![(p, Some(Duration::from_millis(7500))), (p, None)]);
        assert_eq!(parse_compare_csv("hops\n").unwrap_err().line, 1);
        let bad = format!("{COMPARE_HEADER}\n1,2,3\n");
        assert_eq!(parse_compare_csv(&bad).unwrap_err().line, 2);
    }
}
