//! Tile-by-tile simulation of a whole network.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::{digest, EventKind, LogEntry, Metrics, SimEventLog, SlotKind, StreamMetrics};
use super::power::{Activity, PowerModel};
use super::scenario::{Scenario, ScenarioError, ScenarioEvent, StreamRequest};
use crate::activation::{build_activation_sets, should_reschedule, ActivationSets, Trigger};
use crate::config::{HopGraph, NetworkConfig, SuperframeLayout, TileKind};
use crate::graph::{DualGraph, LinkDelta, LinkQuality};
use crate::ids::{Link, NodeId, StreamId};
use crate::scheduler::{
    conflicts_in_slot, expand, find_violation, Action, CompactSchedule, ExpandedSchedule, RejectReason,
    ScheduleBuilder, ScheduleElement, ELEMENT_BYTES, SCHEDULE_HEADER_BYTES,
};
use crate::stream::{ChainTag, Direction, StreamParams, StreamState};
use crate::topology::{MasterTopology, NodeTopology, Sme, UplinkFrame};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LogLevel {
    Off,
    /// Control plane only.
    Control,
    /// Control plane and every data-slot transmission.
    #[default]
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimOptions {
    pub log: LogLevel,
    pub power: PowerModel,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("schedule {id} failed the brute-force check: {detail}")]
    Divergence { id: u32, detail: String },
    #[error("formation did not complete within {0:?}")]
    NonConvergent(Duration),
    #[error("formation must be measured on a loss-free scenario")]
    Lossy,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("node {0} is down")]
    NodeDown(NodeId),
    #[error("node {0} is not synchronized")]
    NotSynchronized(NodeId),
    #[error("node {node} is not an endpoint of {stream} in that direction")]
    NotEndpoint { node: NodeId, stream: StreamId },
    #[error("unknown stream {0}")]
    UnknownStream(StreamId),
    #[error("stream {0} is already open")]
    AlreadyOpen(StreamId),
    #[error("stream {0} is not established")]
    NotEstablished(StreamId),
    #[error("stream {0} already has a packet staged for this period")]
    Busy(StreamId),
}

/// Information element carried by downlink floods.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ie {
    ServerOpened { node: NodeId, port: u8 },
    Rejected { stream: StreamId, reason: RejectReason },
}

#[derive(Clone, Debug)]
struct Chunk {
    schedule_id: u32,
    index: usize,
    count: usize,
    tiles: u32,
    start: u64,
    elements: Vec<ScheduleElement>,
}

#[derive(Clone, Debug)]
struct Distribution {
    chunks: Vec<Arc<Chunk>>,
    sent: u32,
    total: u32,
}

#[derive(Clone, Debug)]
struct Incoming {
    id: u32,
    tiles: u32,
    start: u64,
    parts: Vec<Option<Vec<ScheduleElement>>>,
}

impl Incoming {
    fn complete(&self) -> bool {
        self.parts.iter().all(Option::is_some)
    }
}

#[derive(Clone, Debug)]
struct ActiveSchedule {
    id: u32,
    tiles: u32,
    start: u64,
    layout: Arc<SuperframeLayout>,
    expanded: ExpandedSchedule,
    /// Directions this node injects packets into, with their period.
    outgoing: Vec<((StreamId, bool), u32)>,
    streams: BTreeSet<StreamId>,
}

impl ActiveSchedule {
    fn slot_index(&self, tile: u64, slot: u32) -> usize {
        let t = ((tile - self.start) % self.tiles as u64) as usize;
        (self.layout.tiles()[t].base + slot) as usize
    }
}

#[derive(Clone, Debug)]
struct SimNode {
    up: bool,
    topo: NodeTopology,
    active: Option<ActiveSchedule>,
    incoming: Option<Incoming>,
    resend_for: u32,
    relay: BTreeMap<ChainTag, DataPacket>,
    open_servers: BTreeSet<(NodeId, u8)>,
    activity: Activity,
}

impl SimNode {
    fn active_id(&self) -> u32 {
        self.active.as_ref().map_or(0, |a| a.id)
    }
}

#[derive(Clone, Debug)]
struct DataPacket {
    seq: u16,
    payload: Arc<[u8]>,
    first_tx: u64,
}

#[derive(Clone, Debug)]
struct InFlight {
    seq: u16,
    payload: Arc<[u8]>,
    first_tx: Option<u64>,
    delivered: bool,
}

#[derive(Clone, Debug, Default)]
struct DirSession {
    next: Option<InFlight>,
    current: Option<InFlight>,
    seq: u16,
    sent: u64,
    delivered: u64,
    last_rx: Option<u16>,
    inbox: VecDeque<Vec<u8>>,
    max_latency: Option<u64>,
}

#[derive(Clone, Debug)]
struct StreamEntry {
    params: StreamParams,
    state: StreamState,
    auto: bool,
    connected: bool,
    retry_tile: u64,
    dirs: [DirSession; 2],
}

#[derive(Clone, Debug)]
struct Truth {
    links: BTreeMap<Link, (i16, f64)>,
    adj: Vec<Vec<NodeId>>,
    up: Vec<bool>,
    hops: Vec<Option<u32>>,
    graph: DualGraph,
}

impl Truth {
    fn link(&self, a: NodeId, b: NodeId) -> Option<(i16, f64)> {
        Link::new(a, b).and_then(|l| self.links.get(&l).copied())
    }

    fn rebuild(&mut self, cfg: &NetworkConfig) {
        let n = cfg.max_nodes;
        self.adj = vec![Vec::new(); n];
        for l in self.links.keys() {
            self.adj[l.low().index()].push(l.high());
            self.adj[l.high().index()].push(l.low());
        }
        for a in &mut self.adj {
            a.sort();
        }
        let mut g = DualGraph::new(n);
        for (i, &up) in self.up.iter().enumerate() {
            if up {
                g.add_node(NodeId(i as u8));
            }
        }
        for (l, &(rssi, _)) in &self.links {
            if self.up[l.low().index()] && self.up[l.high().index()] {
                let q = if rssi >= cfg.rssi_strong_threshold { LinkQuality::Strong } else { LinkQuality::Weak };
                g.set_link(l.low(), l.high(), Some(q));
            }
        }
        let q = match cfg.hop_graph {
            HopGraph::Weak => LinkQuality::Weak,
            HopGraph::Strong => LinkQuality::Strong,
        };
        self.hops = g.bfs_distances(NodeId::MASTER, q);
        for i in 0..n {
            if self.up[i] && self.hops[i].is_none() {
                g.remove_node(NodeId(i as u8));
            }
        }
        self.graph = g;
    }
}

#[derive(Clone, Debug)]
struct Master {
    topo: MasterTopology,
    sets: ActivationSets,
    listeners: BTreeSet<(NodeId, u8)>,
    established: Vec<(StreamId, StreamParams)>,
    pending: Vec<(StreamId, StreamParams)>,
    closing: Vec<StreamId>,
    trigger: Option<Trigger>,
    current: Arc<CompactSchedule>,
    current_start: u64,
    graphs: BTreeMap<u32, DualGraph>,
    distribution: Option<Distribution>,
    resend: bool,
    ies: Vec<(Ie, u32)>,
}

impl Master {
    fn pending_smes(&self) -> usize {
        self.pending.len() + self.closing.len()
    }
}

/// A running network. Time advances one tile per [`Simulation::step_tile`].
#[derive(Clone, Debug)]
pub struct Simulation {
    cfg: NetworkConfig,
    opts: SimOptions,
    events: Vec<super::scenario::TimedEvent>,
    next_event: usize,
    rng: ChaCha8Rng,
    nodes: Vec<SimNode>,
    truth: Truth,
    master: Master,
    streams: BTreeMap<StreamId, StreamEntry>,
    log: SimEventLog,
    tile: u64,
    gslot: u64,
    uplinks: u64,
    round: u64,
    schedules: u32,
    collisions: u64,
    convergecast_violations: u64,
    sync_time: Option<Duration>,
    formation: Option<Duration>,
    up_time: Vec<Duration>,
    duration: Duration,
}

fn newer(a: u16, b: u16) -> bool {
    (a.wrapping_sub(b) as i16) > 0
}

fn key_of(c: &ChainTag) -> (StreamId, bool) {
    (c.stream, c.reverse)
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        Self::with_options(scenario, SimOptions::default())
    }

    pub fn with_options(scenario: &Scenario, opts: SimOptions) -> Result<Self, SimError> {
        scenario.validate()?;
        let cfg = scenario.config.clone();
        let n = cfg.max_nodes;
        let mut up = vec![false; n];
        for v in &scenario.nodes {
            up[v.index()] = true;
        }
        let mut links = BTreeMap::new();
        for l in &scenario.links {
            links.insert(Link::new(l.a, l.b).expect("validated"), (l.rssi, l.per));
        }
        let mut truth = Truth { links, adj: Vec::new(), up, hops: Vec::new(), graph: DualGraph::new(n) };
        truth.rebuild(&cfg);
        let empty = Arc::new(CompactSchedule::empty(&cfg));
        let topo = MasterTopology::new(&cfg);
        let sets = build_activation_sets(&empty, topo.graph(), &cfg);
        let master = Master {
            topo,
            sets,
            listeners: BTreeSet::new(),
            established: Vec::new(),
            pending: Vec::new(),
            closing: Vec::new(),
            trigger: None,
            current: empty,
            current_start: 0,
            graphs: BTreeMap::new(),
            distribution: None,
            resend: false,
            ies: Vec::new(),
        };
        let nodes = (0..n)
            .map(|i| SimNode {
                up: truth.up[i],
                topo: NodeTopology::new(NodeId(i as u8), &cfg),
                active: None,
                incoming: None,
                resend_for: 0,
                relay: BTreeMap::new(),
                open_servers: BTreeSet::new(),
                activity: Activity::default(),
            })
            .collect();
        let mut sim = Simulation {
            cfg,
            opts,
            events: scenario.events.clone(),
            next_event: 0,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            nodes,
            truth,
            master,
            streams: BTreeMap::new(),
            log: SimEventLog::default(),
            tile: 0,
            gslot: 0,
            uplinks: 0,
            round: 0,
            schedules: 0,
            collisions: 0,
            convergecast_violations: 0,
            sync_time: None,
            formation: None,
            up_time: vec![Duration::ZERO; n],
            duration: scenario.duration,
        };
        for s in &scenario.streams {
            sim.add_auto_stream(*s);
        }
        Ok(sim)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn now(&self) -> Duration {
        self.cfg.tile_duration * self.tile as u32
    }

    pub fn tile(&self) -> u64 {
        self.tile
    }

    /// Completed round-robin uplink cycles.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn log(&self) -> &SimEventLog {
        &self.log
    }

    pub fn master_graph(&self) -> &DualGraph {
        self.master.topo.graph()
    }

    /// Graph the master would hold with complete, current information.
    pub fn truth_graph(&self) -> &DualGraph {
        &self.truth.graph
    }

    pub fn master_topology(&self) -> &MasterTopology {
        &self.master.topo
    }

    pub fn current_schedule(&self) -> &CompactSchedule {
        &self.master.current
    }

    /// Schedule the node is executing, if any.
    pub fn active_schedule_id(&self, node: NodeId) -> Option<u32> {
        self.nodes[node.index()].active.as_ref().map(|a| a.id)
    }

    pub fn is_up(&self, node: NodeId) -> bool {
        self.nodes[node.index()].up
    }

    pub fn is_synchronized(&self, node: NodeId) -> bool {
        let n = &self.nodes[node.index()];
        n.up && n.topo.is_synchronized()
    }

    pub fn node_topology(&self, node: NodeId) -> &NodeTopology {
        &self.nodes[node.index()].topo
    }

    pub fn formation_time(&self) -> Option<Duration> {
        self.formation
    }

    pub fn schedules(&self) -> u32 {
        self.schedules
    }

    pub fn stream_state(&self, id: StreamId) -> Option<StreamState> {
        self.streams.get(&id).map(|s| s.state)
    }

    fn round_tiles(&self) -> u64 {
        let per_sf = self.cfg.uplinks_per_control_superframe();
        (self.cfg.max_nodes as u64).div_ceil(per_sf) * self.cfg.control_superframe_len() as u64
    }

    fn level(&self, data: bool) -> bool {
        match self.opts.log {
            LogLevel::Off => false,
            LogLevel::Control => !data,
            LogLevel::Full => true,
        }
    }

    fn emit(
        &mut self,
        time: Duration,
        slot: SlotKind,
        actor: NodeId,
        kind: EventKind,
        detail: impl FnOnce() -> String,
    ) {
        let data = matches!(
            kind,
            EventKind::Transmit | EventKind::Receive | EventKind::Lost | EventKind::Collision | EventKind::Deliver
        );
        if self.level(data) {
            self.log.push(LogEntry { time, slot, actor, kind, detail: detail() });
        }
    }

    // ---- session API ----

    pub fn listen(&mut self, node: NodeId, port: u8) -> Result<(), SessionError> {
        self.require_synced(node)?;
        self.submit_sme(node, Sme::Listen { node, port });
        Ok(())
    }

    pub fn connect(
        &mut self,
        node: NodeId,
        dst: NodeId,
        port: u8,
        params: StreamParams,
    ) -> Result<StreamId, SessionError> {
        self.require_synced(node)?;
        let id = StreamId { src: node, dst, port };
        if let Some(s) = self.streams.get(&id) {
            if matches!(s.state, StreamState::Requested | StreamState::Established) {
                return Err(SessionError::AlreadyOpen(id));
            }
        }
        self.streams.insert(id, Self::entry(params, false));
        self.open(id);
        Ok(id)
    }

    /// Established streams towards `(node, port)`.
    pub fn accept(&self, node: NodeId, port: u8) -> Vec<StreamId> {
        let n = &self.nodes[node.index()];
        n.active
            .as_ref()
            .map(|a| a.streams.iter().filter(|s| s.dst == node && s.port == port).copied().collect())
            .unwrap_or_default()
    }

    fn direction_of(&self, node: NodeId, id: StreamId, sending: bool) -> Result<bool, SessionError> {
        let e = self.streams.get(&id).ok_or(SessionError::UnknownStream(id))?;
        let reverse = if node == id.src {
            !sending
        } else if node == id.dst {
            sending
        } else {
            return Err(SessionError::NotEndpoint { node, stream: id });
        };
        let allowed = match e.params.direction {
            Direction::Forward => !reverse,
            Direction::Reverse => reverse,
            Direction::Bidirectional => true,
        };
        if !allowed {
            return Err(SessionError::NotEndpoint { node, stream: id });
        }
        Ok(reverse)
    }

    /// Stages one packet for the next period of the stream.
    pub fn write(&mut self, node: NodeId, id: StreamId, payload: &[u8]) -> Result<(), SessionError> {
        let reverse = self.direction_of(node, id, true)?;
        let established = self.nodes[node.index()].active.as_ref().is_some_and(|a| a.streams.contains(&id));
        let e = self.streams.get_mut(&id).expect("checked");
        if !established || e.state == StreamState::Closed {
            return Err(SessionError::NotEstablished(id));
        }
        let d = &mut e.dirs[reverse as usize];
        if d.next.is_some() {
            return Err(SessionError::Busy(id));
        }
        let seq = d.seq;
        d.seq = d.seq.wrapping_add(1);
        d.next = Some(InFlight { seq, payload: payload.into(), first_tx: None, delivered: false });
        Ok(())
    }

    /// Packets delivered to `node` on the stream, in order.
    pub fn read(&mut self, node: NodeId, id: StreamId) -> Result<Vec<Vec<u8>>, SessionError> {
        let reverse = self.direction_of(node, id, false)?;
        let e = self.streams.get_mut(&id).expect("checked");
        Ok(e.dirs[reverse as usize].inbox.drain(..).collect())
    }

    pub fn close(&mut self, node: NodeId, id: StreamId) -> Result<(), SessionError> {
        if node != id.src && node != id.dst {
            return Err(SessionError::NotEndpoint { node, stream: id });
        }
        let e = self.streams.get_mut(&id).ok_or(SessionError::UnknownStream(id))?;
        e.state = StreamState::Closed;
        e.auto = false;
        if self.nodes[node.index()].up {
            self.submit_sme(node, Sme::Close { id });
        }
        Ok(())
    }

    fn require_synced(&self, node: NodeId) -> Result<(), SessionError> {
        let n = &self.nodes[node.index()];
        if !n.up {
            return Err(SessionError::NodeDown(node));
        }
        if !n.topo.is_synchronized() {
            return Err(SessionError::NotSynchronized(node));
        }
        Ok(())
    }

    fn entry(params: StreamParams, auto: bool) -> StreamEntry {
        StreamEntry {
            params,
            state: StreamState::Requested,
            auto,
            connected: false,
            retry_tile: 0,
            dirs: Default::default(),
        }
    }

    fn add_auto_stream(&mut self, s: StreamRequest) {
        self.streams.insert(s.id, Self::entry(s.params, true));
    }

    fn open(&mut self, id: StreamId) {
        let e = self.streams.get_mut(&id).expect("known stream");
        e.connected = true;
        e.state = StreamState::Requested;
        let params = e.params;
        self.submit_sme(id.src, Sme::Connect { id, params });
    }

    fn submit_sme(&mut self, node: NodeId, sme: Sme) {
        let now = self.now();
        self.emit(now, SlotKind::Tile, node, EventKind::Sme, || format!("submit {sme:?}"));
        if node.is_master() {
            self.master_sme(sme);
            self.note_delta(&LinkDelta::default());
        } else {
            self.nodes[node.index()].topo.enqueue_sme(sme);
        }
    }

    /// Drives streams opened by the scenario rather than through the API.
    fn auto_app(&mut self) {
        let t = self.tile;
        let ids: Vec<StreamId> = self.streams.iter().filter(|(_, e)| e.auto).map(|(id, _)| *id).collect();
        for id in ids {
            let (dst, port) = (id.dst, id.port);
            let dn = &mut self.nodes[dst.index()];
            if dn.up && dn.topo.is_synchronized() && dn.open_servers.insert((dst, port)) {
                self.submit_sme(dst, Sme::Listen { node: dst, port });
            }
            let e = &self.streams[&id];
            let sn = &self.nodes[id.src.index()];
            if !e.connected
                && t >= e.retry_tile
                && sn.up
                && sn.topo.is_synchronized()
                && sn.open_servers.contains(&(dst, port))
            {
                self.open(id);
            }
        }
    }

    // ---- master ----

    fn master_sme(&mut self, sme: Sme) {
        let m = &mut self.master;
        match sme {
            Sme::Listen { node, port } => {
                m.listeners.insert((node, port));
                m.ies.push((Ie::ServerOpened { node, port }, self.cfg.schedule_repeats));
            }
            Sme::Connect { id, params } => {
                let known = m.established.iter().chain(&m.pending).any(|(s, _)| *s == id);
                if !known {
                    m.closing.retain(|s| *s != id);
                    m.pending.push((id, params));
                }
            }
            Sme::Close { id } => {
                m.pending.retain(|(s, _)| *s != id);
                if m.established.iter().any(|(s, _)| *s == id) && !m.closing.contains(&id) {
                    m.closing.push(id);
                }
            }
            Sme::Resend { schedule_id, .. } => {
                if schedule_id == m.current.id {
                    m.resend = true;
                }
            }
        }
    }

    fn note_delta(&mut self, delta: &LinkDelta) {
        if self.master.trigger.is_none() {
            self.master.trigger = should_reschedule(&self.master.sets, delta, self.master.pending_smes());
        }
    }

    fn master_receive(&mut self, frame: &UplinkFrame) {
        let mut delta = match self.master.topo.ingest(frame, true) {
            Ok(d) => d,
            Err(e) => {
                let now = self.now();
                self.emit(now, SlotKind::Uplink, NodeId::MASTER, EventKind::Uplink, || format!("rejected: {e}"));
                return;
            }
        };
        let own = self.nodes[0].topo.own_record();
        delta.extend(self.master.topo.ingest_record(&own));
        if frame.sender.forwardee.is_none_or(|f| f.is_master()) {
            for sme in &frame.smes {
                self.master_sme(sme.clone());
            }
        }
        self.note_delta(&delta);
        self.check_formation();
    }

    fn check_formation(&mut self) {
        if self.formation.is_none() {
            if let Some(sync) = self.sync_time {
                if *self.master.topo.graph() == self.truth.graph {
                    let now = self.now();
                    self.formation = Some(now.saturating_sub(sync));
                    self.emit(now, SlotKind::Tile, NodeId::MASTER, EventKind::Formed, || {
                        format!("after {:.3}s", now.saturating_sub(sync).as_secs_f64())
                    });
                }
            }
        }
    }

    fn end_round(&mut self) {
        let round = self.round;
        self.round += 1;
        let now = self.now();
        for i in 0..self.nodes.len() {
            if !self.nodes[i].up {
                continue;
            }
            for lost in self.nodes[i].topo.end_round() {
                self.emit(now, SlotKind::Uplink, NodeId(i as u8), EventKind::NeighborLost, || {
                    format!("node={} round={round}", lost.0)
                });
            }
        }
        let own = self.nodes[0].topo.own_record();
        let mut delta = self.master.topo.ingest_record(&own);
        let (d2, removed) = self.master.topo.expire_stale();
        delta.extend(d2);
        for n in removed {
            self.emit(now, SlotKind::Uplink, NodeId::MASTER, EventKind::Expired, || {
                format!("node={} round={round}", n.0)
            });
        }
        self.note_delta(&delta);
        self.check_formation();
    }

    /// First tile strictly after `t` at which `floods` downlink floods have
    /// been sent, counting from the tile after `t`.
    fn last_flood_tile(&self, t: u64, floods: u32) -> u64 {
        let mut left = floods;
        let mut tile = t;
        while left > 0 {
            tile += 1;
            if self.cfg.tile_kind(tile) == TileKind::Downlink {
                left -= 1;
            }
        }
        tile
    }

    fn chunks(&self, s: &CompactSchedule, start: u64) -> Vec<Arc<Chunk>> {
        let per = (self.cfg.max_downlink_payload.saturating_sub(SCHEDULE_HEADER_BYTES) / ELEMENT_BYTES).max(1);
        let count = s.chunk_count(self.cfg.max_downlink_payload);
        (0..count)
            .map(|i| {
                let lo = (i * per).min(s.elements.len());
                let hi = ((i + 1) * per).min(s.elements.len());
                Arc::new(Chunk {
                    schedule_id: s.id,
                    index: i,
                    count,
                    tiles: s.tiles,
                    start,
                    elements: s.elements[lo..hi].to_vec(),
                })
            })
            .collect()
    }

    fn maybe_reschedule(&mut self) -> Result<(), SimError> {
        let t = self.tile;
        if self.master.distribution.is_some() || t < self.master.current_start {
            return Ok(());
        }
        if self.master.resend {
            self.master.resend = false;
            let chunks = self.chunks(&self.master.current.clone(), self.master.current_start);
            let total = chunks.len() as u32;
            self.master.distribution = Some(Distribution { chunks, sent: 0, total });
            let now = self.now();
            let id = self.master.current.id;
            self.emit(now, SlotKind::Tile, NodeId::MASTER, EventKind::Resend, || format!("schedule={id}"));
            return Ok(());
        }
        let Some(trigger) = self.master.trigger.take() else {
            return Ok(());
        };
        let cfg = self.cfg.clone();
        let g = self.master.topo.graph().clone();
        let m = &mut self.master;
        let closing = std::mem::take(&mut m.closing);
        let established: Vec<_> =
            std::mem::take(&mut m.established).into_iter().filter(|(id, _)| !closing.contains(id)).collect();
        let pending = std::mem::take(&mut m.pending);
        let mut b = ScheduleBuilder::new(&cfg, &g);
        let mut rejected = Vec::new();
        for (id, p) in established {
            if let Err(r) = b.try_add(id, p) {
                rejected.push((id, r.reason));
            }
        }
        for (id, p) in pending {
            if !m.listeners.contains(&(id.dst, id.port)) {
                rejected.push((id, RejectReason::NoListener));
            } else if let Err(r) = b.try_add(id, p) {
                rejected.push((id, r.reason));
            }
        }
        let next_id = m.current.id + 1;
        let outcome = b.finish(next_id);
        if let Some(v) = find_violation(&outcome.schedule, &g) {
            return Err(SimError::Divergence { id: next_id, detail: v.to_string() });
        }
        m.established = outcome.accepted;
        m.sets = outcome.activation;
        for (stream, reason) in &rejected {
            m.ies.push((Ie::Rejected { stream: *stream, reason: reason.clone() }, cfg.schedule_repeats));
        }
        let now = self.now();
        for (stream, reason) in rejected {
            self.emit(now, SlotKind::Tile, NodeId::MASTER, EventKind::Rejected, || format!("{stream} {reason}"));
        }
        let s = outcome.schedule;
        let cur = &self.master.current;
        if s.elements == cur.elements && s.tiles == cur.tiles {
            self.emit(now, SlotKind::Tile, NodeId::MASTER, EventKind::Reschedule, || {
                format!("unchanged trigger={trigger}")
            });
            return Ok(());
        }
        let chunks_needed = s.chunk_count(cfg.max_downlink_payload) as u32;
        let total = chunks_needed * cfg.schedule_repeats;
        let last = self.last_flood_tile(t, total);
        let (cs, ct) = (self.master.current_start, cur.tiles as u64);
        let start = cs + ((last + 1 - cs).div_ceil(ct)) * ct;
        let s = Arc::new(s);
        let chunks = self.chunks(&s, start);
        self.schedules += 1;
        self.emit(now, SlotKind::Tile, NodeId::MASTER, EventKind::Reschedule, || {
            format!(
                "schedule={} trigger={trigger} elements={} tiles={} chunks={} start_tile={start}",
                s.id,
                s.elements.len(),
                s.tiles,
                chunks.len()
            )
        });
        let m = &mut self.master;
        m.graphs.insert(s.id, g);
        if m.graphs.len() > 4 {
            let oldest = *m.graphs.keys().next().expect("non-empty");
            m.graphs.remove(&oldest);
        }
        m.distribution = Some(Distribution { chunks, sent: 0, total });
        m.current = s.clone();
        m.current_start = start;
        let parts = s.elements.clone();
        self.nodes[0].incoming = Some(Incoming { id: s.id, tiles: s.tiles, start, parts: vec![Some(parts)] });
        Ok(())
    }

    // ---- control ----

    fn apply_events(&mut self) {
        let now = self.now();
        while let Some(e) = self.events.get(self.next_event).filter(|e| e.at <= now).cloned() {
            self.next_event += 1;
            match e.event {
                ScenarioEvent::NodeUp(n) => {
                    let node = &mut self.nodes[n.index()];
                    if !node.up {
                        node.up = true;
                        node.topo.reset();
                        self.truth.up[n.index()] = true;
                        self.truth.rebuild(&self.cfg);
                    }
                    self.emit(now, SlotKind::Tile, n, EventKind::NodeUp, String::new);
                }
                ScenarioEvent::NodeDown(n) => {
                    if n.is_master() {
                        log::warn!("ignoring node_down for the master");
                        continue;
                    }
                    let node = &mut self.nodes[n.index()];
                    node.up = false;
                    node.topo.reset();
                    node.active = None;
                    node.incoming = None;
                    node.relay.clear();
                    node.open_servers.clear();
                    node.resend_for = 0;
                    self.truth.up[n.index()] = false;
                    self.truth.rebuild(&self.cfg);
                    for (id, s) in self.streams.iter_mut() {
                        if s.auto && id.src == n {
                            s.connected = false;
                        }
                    }
                    self.emit(now, SlotKind::Tile, n, EventKind::NodeDown, String::new);
                }
                ScenarioEvent::LinkSet { a, b, quality } => {
                    let l = Link::new(a, b).expect("validated");
                    match quality {
                        Some(q) => self.truth.links.insert(l, q),
                        None => self.truth.links.remove(&l),
                    };
                    self.truth.rebuild(&self.cfg);
                    self.emit(now, SlotKind::Tile, a, EventKind::LinkSet, || format!("{l} {quality:?}"));
                }
                ScenarioEvent::OpenStream { id, params } => {
                    let reopen = self.streams.get(&id).is_none_or(|s| s.state != StreamState::Established);
                    if reopen {
                        self.add_auto_stream(StreamRequest { id, params });
                    }
                }
                ScenarioEvent::CloseStream(id) => {
                    if self.streams.contains_key(&id) {
                        let _ = self.close(id.src, id);
                    }
                }
            }
        }
    }

    fn activate_schedules(&mut self) {
        let t = self.tile;
        let now = self.now();
        for i in 0..self.nodes.len() {
            let n = &self.nodes[i];
            let Some(inc) = &n.incoming else { continue };
            if !n.up || t < inc.start || !(t - inc.start).is_multiple_of(inc.tiles as u64) || !inc.complete() {
                continue;
            }
            let inc = self.nodes[i].incoming.take().expect("checked");
            let me = NodeId(i as u8);
            let elements: Vec<ScheduleElement> = inc.parts.into_iter().flatten().flatten().collect();
            let s = CompactSchedule::new(inc.id, inc.tiles, &self.cfg, elements);
            let expanded = match expand(&s, me) {
                Ok(x) => x,
                Err(e) => {
                    log::error!("node {me} cannot expand schedule {}: {e}", s.id);
                    continue;
                }
            };
            let mut outgoing: Vec<((StreamId, bool), u32)> = Vec::new();
            let mut streams = BTreeSet::new();
            for e in s.involving(me) {
                streams.insert(e.stream());
                if e.tx == me && e.chain.source() == me && !outgoing.iter().any(|(k, _)| *k == key_of(&e.chain)) {
                    outgoing.push((key_of(&e.chain), e.period));
                }
            }
            let layout = Arc::new(SuperframeLayout::new(&self.cfg, s.tiles));
            let node = &mut self.nodes[i];
            node.relay.clear();
            node.active = Some(ActiveSchedule {
                id: s.id,
                tiles: s.tiles,
                start: inc.start,
                layout,
                expanded,
                outgoing,
                streams: streams.clone(),
            });
            self.emit(now, SlotKind::Tile, me, EventKind::Activated, || {
                format!("schedule={} streams={}", s.id, streams.len())
            });
            for id in streams {
                if id.src != me {
                    continue;
                }
                if let Some(e) = self.streams.get_mut(&id) {
                    if e.state == StreamState::Requested {
                        e.state = StreamState::Established;
                        self.emit(now, SlotKind::Tile, me, EventKind::Established, || id.to_string());
                    }
                }
            }
        }
    }

    fn downlink(&mut self) {
        let t = self.tile;
        let now = self.now();
        let chunk = self.master.distribution.as_mut().map(|d| {
            let c = d.chunks[d.sent as usize % d.chunks.len()].clone();
            d.sent += 1;
            c
        });
        if self.master.distribution.as_ref().is_some_and(|d| d.sent >= d.total) {
            self.master.distribution = None;
        }
        let ies: Vec<Ie> = self.master.ies.iter().map(|(ie, _)| ie.clone()).collect();
        for (_, left) in &mut self.master.ies {
            *left -= 1;
        }
        self.master.ies.retain(|(_, left)| *left > 0);
        let (cur_id, cur_start) = (self.master.current.id, self.master.current_start);
        self.emit(now, SlotKind::Downlink, NodeId::MASTER, EventKind::Flood, || match &chunk {
            Some(c) => format!("schedule={} chunk={}/{} ies={}", c.schedule_id, c.index + 1, c.count, ies.len()),
            None => format!("ies={}", ies.len()),
        });
        self.nodes[0].activity.floods += 1;
        for i in 1..self.nodes.len() {
            let Some(hop) = self.truth.hops[i] else { continue };
            if !self.nodes[i].up {
                continue;
            }
            if self.cfg.flood_loss > 0.0 && self.rng.gen::<f64>() < self.cfg.flood_loss {
                continue;
            }
            let me = NodeId(i as u8);
            let node = &mut self.nodes[i];
            node.activity.floods += 1;
            if node.topo.on_downlink_flood(hop.min(u8::MAX as u32) as u8) {
                self.emit(now, SlotKind::Downlink, me, EventKind::Synchronized, || format!("hop={hop}"));
                self.check_sync();
            }
            if !self.nodes[i].topo.is_synchronized() {
                continue;
            }
            if let Some(c) = &chunk {
                self.receive_chunk(i, c);
            }
            for ie in &ies {
                self.receive_ie(me, ie);
            }
            let node = &self.nodes[i];
            let waiting = node.incoming.as_ref().is_some_and(|inc| inc.id == cur_id && inc.complete());
            if t >= cur_start && node.active_id() < cur_id && node.resend_for != cur_id && !waiting {
                self.nodes[i].resend_for = cur_id;
                self.emit(now, SlotKind::Downlink, me, EventKind::Resend, || format!("schedule={cur_id}"));
                self.submit_sme(me, Sme::Resend { node: me, schedule_id: cur_id });
            }
        }
        for ie in &ies {
            self.receive_ie(NodeId::MASTER, ie);
        }
    }

    fn check_sync(&mut self) {
        if self.sync_time.is_some() {
            return;
        }
        let all = self.truth.graph.present().iter().all(|n| self.nodes[n.index()].topo.is_synchronized());
        if all {
            self.sync_time = Some(self.now());
        }
    }

    fn receive_chunk(&mut self, i: usize, c: &Chunk) {
        let node = &mut self.nodes[i];
        if node.active_id() >= c.schedule_id {
            return;
        }
        if node.incoming.as_ref().is_none_or(|inc| inc.id != c.schedule_id) {
            node.incoming =
                Some(Incoming { id: c.schedule_id, tiles: c.tiles, start: c.start, parts: vec![None; c.count] });
        }
        let inc = node.incoming.as_mut().expect("just set");
        inc.parts[c.index] = Some(c.elements.clone());
    }

    fn receive_ie(&mut self, me: NodeId, ie: &Ie) {
        let now = self.now();
        match ie {
            Ie::ServerOpened { node, port } => {
                if self.nodes[me.index()].open_servers.insert((*node, *port)) && me == *node {
                    self.emit(now, SlotKind::Downlink, me, EventKind::Ie, || format!("listening port={port}"));
                }
            }
            Ie::Rejected { stream, reason } => {
                if stream.src != me {
                    return;
                }
                let retry = self.tile + self.round_tiles();
                if let Some(e) = self.streams.get_mut(stream) {
                    if e.connected && e.state != StreamState::Closed {
                        e.state = StreamState::Rejected;
                        e.connected = false;
                        e.retry_tile = retry;
                        self.emit(now, SlotKind::Downlink, me, EventKind::Ie, || format!("rejected {stream} {reason}"));
                    }
                }
            }
        }
    }

    fn uplink(&mut self, frame_index: u32) {
        let k = self.uplinks;
        self.uplinks += 1;
        let sender = NodeId((k % self.cfg.max_nodes as u64) as u8);
        let time = self.now() + self.cfg.uplink_control_duration * frame_index;
        let si = sender.index();
        if !sender.is_master() && self.nodes[si].up {
            if let Some(frame) = self.nodes[si].topo.build_uplink_frame() {
                let bad = frame.forwarded.iter().filter(|r| r.hop <= frame.sender.hop).count();
                self.convergecast_violations += bad as u64;
                self.nodes[si].activity.uplink_tx += 1;
                let round = self.round;
                let max_nodes = self.cfg.max_nodes;
                self.emit(time, SlotKind::Uplink, sender, EventKind::Uplink, || {
                    format!(
                        "round={round} hop={} fwd={} sme={} digest={:08x}",
                        frame.sender.hop,
                        frame.forwarded.len(),
                        frame.smes.len(),
                        digest(&frame.encode(max_nodes))
                    )
                });
                let listeners = self.truth.adj[si].clone();
                for v in listeners {
                    let node = &self.nodes[v.index()];
                    if !node.up || !(node.topo.is_synchronized()) {
                        continue;
                    }
                    let (rssi, per) = self.truth.link(sender, v).expect("adjacent");
                    if per > 0.0 && self.rng.gen::<f64>() < per {
                        continue;
                    }
                    let node = &mut self.nodes[v.index()];
                    node.activity.uplink_rx += 1;
                    node.topo.on_uplink_overheard(&frame, rssi);
                    if v.is_master() {
                        self.master_receive(&frame);
                    }
                }
            }
        }
        if (k + 1).is_multiple_of(self.cfg.max_nodes as u64) {
            self.end_round();
        }
    }

    // ---- data ----

    fn period_boundary(&mut self, key: (StreamId, bool)) {
        let Some(e) = self.streams.get_mut(&key.0) else { return };
        let auto = e.auto && e.state == StreamState::Established;
        let d = &mut e.dirs[key.1 as usize];
        if let Some(done) = d.current.take() {
            d.sent += 1;
            d.delivered += done.delivered as u64;
        }
        if auto && d.next.is_none() {
            let seq = d.seq;
            d.seq = d.seq.wrapping_add(1);
            let mut payload = vec![key.0.src.0, key.0.dst.0, key.0.port, key.1 as u8];
            payload.extend(seq.to_be_bytes());
            d.next = Some(InFlight { seq, payload: payload.into(), first_tx: None, delivered: false });
        }
        d.current = d.next.take();
    }

    fn deliver(&mut self, me: NodeId, c: ChainTag, p: &DataPacket, time: Duration) {
        let gslot = self.gslot;
        let Some(e) = self.streams.get_mut(&c.stream) else { return };
        let d = &mut e.dirs[c.reverse as usize];
        if d.last_rx.is_some_and(|l| !newer(p.seq, l)) {
            return;
        }
        d.last_rx = Some(p.seq);
        d.inbox.push_back(p.payload.to_vec());
        if let Some(cur) = d.current.as_mut().filter(|cur| cur.seq == p.seq) {
            cur.delivered = true;
        }
        let lat = gslot - p.first_tx;
        d.max_latency = Some(d.max_latency.map_or(lat, |m| m.max(lat)));
        self.emit(time, SlotKind::Data, me, EventKind::Deliver, || format!("{c} seq={} latency={lat}", p.seq));
    }

    fn data_slots(&mut self, kind: TileKind) -> Result<(), SimError> {
        let t = self.tile;
        let tile_start = self.now();
        let ctrl = self.cfg.control_region(kind);
        for s in 0..self.cfg.data_slots_per_tile(kind) {
            let time = tile_start + ctrl + self.cfg.data_slot_duration * s;
            let mut acts: Vec<(NodeId, Action, u32)> = Vec::new();
            let mut boundaries = Vec::new();
            for n in &self.nodes {
                let Some(a) = n.active.as_ref().filter(|_| n.up) else { continue };
                let idx = a.slot_index(t, s);
                for &(key, period) in &a.outgoing {
                    if (idx as u32).is_multiple_of(period) {
                        boundaries.push(key);
                    }
                }
                let action = a.expanded.actions[idx];
                if action != Action::Sleep {
                    acts.push((n.topo.id(), action, a.id));
                }
            }
            for key in boundaries {
                self.period_boundary(key);
            }
            if acts.is_empty() {
                self.gslot += 1;
                continue;
            }
            let mut txs: Vec<(NodeId, ChainTag, DataPacket, u32)> = Vec::new();
            for &(v, action, sid) in &acts {
                let pkt = match action {
                    Action::TransmitFromSession(c) => {
                        let gslot = self.gslot;
                        let e = self.streams.get_mut(&c.stream);
                        e.and_then(|e| e.dirs[c.reverse as usize].current.as_mut()).map(|cur| {
                            let first = *cur.first_tx.get_or_insert(gslot);
                            DataPacket { seq: cur.seq, payload: cur.payload.clone(), first_tx: first }
                        })
                    }
                    Action::ForwardBuffered(c) => self.nodes[v.index()].relay.remove(&c),
                    _ => continue,
                };
                if let Some(p) = pkt {
                    self.nodes[v.index()].activity.data_tx += 1;
                    let c = action.chain().expect("transmit action");
                    self.emit(time, SlotKind::Data, v, EventKind::Transmit, || format!("{c} seq={}", p.seq));
                    txs.push((v, c, p, sid));
                }
            }
            self.check_slot_safety(&acts)?;
            for &(v, action, _) in &acts {
                if !action.is_receive() {
                    continue;
                }
                self.nodes[v.index()].activity.data_rx += 1;
                let c = action.chain().expect("receive action");
                let Some((tx, _, p, _)) = txs.iter().find(|(_, tc, _, _)| *tc == c).cloned() else {
                    self.nodes[v.index()].relay.remove(&c);
                    continue;
                };
                let collided = txs.iter().any(|(o, _, _, _)| *o != tx && self.truth.link(*o, v).is_some());
                let ok = match self.truth.link(tx, v) {
                    None => false,
                    Some(_) if collided => {
                        self.collisions += 1;
                        self.emit(time, SlotKind::Data, v, EventKind::Collision, || format!("{c} from {tx}"));
                        false
                    }
                    Some((_, per)) => per == 0.0 || self.rng.gen::<f64>() >= per,
                };
                if !ok {
                    self.nodes[v.index()].relay.remove(&c);
                    self.emit(time, SlotKind::Data, v, EventKind::Lost, || format!("{c} from {tx} seq={}", p.seq));
                    continue;
                }
                self.emit(time, SlotKind::Data, v, EventKind::Receive, || format!("{c} from {tx} seq={}", p.seq));
                match action {
                    Action::ReceiveToBuffer(_) => {
                        self.nodes[v.index()].relay.insert(c, p);
                    }
                    _ => self.deliver(v, c, &p, time),
                }
            }
            self.gslot += 1;
        }
        Ok(())
    }

    /// Every pair of scheduled actions of one schedule sharing this slot must
    /// pass the slot predicate on the graph the schedule was built from.
    fn check_slot_safety(&self, acts: &[(NodeId, Action, u32)]) -> Result<(), SimError> {
        let elems: Vec<(ScheduleElement, u32)> = acts
            .iter()
            .filter(|(_, a, _)| a.is_transmit())
            .filter_map(|&(v, a, sid)| {
                let c = a.chain()?;
                let rx =
                    acts.iter().find(|(w, b, s)| *s == sid && *w != v && b.chain() == Some(c) && b.is_receive())?.0;
                let e = ScheduleElement { chain: c, tx: v, rx, offset: 0, period: 1 };
                Some((e, sid))
            })
            .collect();
        for (i, (a, sa)) in elems.iter().enumerate() {
            for (b, sb) in &elems[i + 1..] {
                if sa != sb {
                    continue;
                }
                let Some(g) = self.master.graphs.get(sa) else { continue };
                if conflicts_in_slot(a, b, g) {
                    return Err(SimError::Divergence { id: *sa, detail: format!("{a} and {b} share a slot") });
                }
            }
        }
        Ok(())
    }

    /// Advances the simulation by one tile.
    pub fn step_tile(&mut self) -> Result<(), SimError> {
        self.apply_events();
        self.auto_app();
        self.activate_schedules();
        let kind = self.cfg.tile_kind(self.tile);
        match kind {
            TileKind::Downlink => self.downlink(),
            TileKind::Uplink => {
                for f in 0..self.cfg.uplink_frames_per_tile {
                    self.uplink(f);
                }
            }
        }
        self.data_slots(kind)?;
        self.maybe_reschedule()?;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.up {
                self.up_time[i] += self.cfg.tile_duration;
            }
        }
        self.tile += 1;
        Ok(())
    }

    pub fn run_until(&mut self, end: Duration) -> Result<(), SimError> {
        while self.now() < end {
            self.step_tile()?;
        }
        Ok(())
    }

    pub fn run_for(&mut self, d: Duration) -> Result<(), SimError> {
        let end = self.now() + d;
        self.run_until(end)
    }

    pub fn metrics(&self) -> Metrics {
        let streams = self
            .streams
            .iter()
            .map(|(id, e)| StreamMetrics {
                id: *id,
                params: e.params,
                state: e.state,
                sent: e.dirs.iter().map(|d| d.sent).sum(),
                delivered: e.dirs.iter().map(|d| d.delivered).sum(),
                max_latency_slots: e.dirs.iter().filter_map(|d| d.max_latency).max(),
            })
            .collect();
        let node_current_ma = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.up_time[*i].is_zero())
            .map(|(i, n)| {
                let act = Activity { elapsed: self.up_time[i], ..n.activity };
                (NodeId(i as u8), act.average_current(&self.opts.power, &self.cfg))
            })
            .collect();
        Metrics {
            duration: self.now(),
            formation_time: self.formation,
            sync_time: self.sync_time,
            schedules: self.schedules,
            streams,
            node_current_ma,
            collisions: self.collisions,
            convergecast_violations: self.convergecast_violations,
        }
    }

    /// Runs to the scenario duration.
    pub fn finish(mut self) -> Result<(Metrics, SimEventLog), SimError> {
        let end = self.duration;
        self.run_until(end)?;
        Ok((self.metrics(), self.log))
    }
}

pub fn run(scenario: &Scenario) -> Result<(Metrics, SimEventLog), SimError> {
    Simulation::new(scenario)?.finish()
}

pub fn run_with(scenario: &Scenario, opts: SimOptions) -> Result<(Metrics, SimEventLog), SimError> {
    Simulation::with_options(scenario, opts)?.finish()
}

/// Time from the whole network being synchronized to the master holding
/// the full graph, on a scenario without packet loss.
pub fn measure_formation(scenario: &Scenario) -> Result<Duration, SimError> {
    if scenario.config.flood_loss > 0.0 || scenario.links.iter().any(|l| l.per > 0.0) {
        return Err(SimError::Lossy);
    }
    let opts = SimOptions { log: LogLevel::Off, ..Default::default() };
    let mut sim = Simulation::with_options(scenario, opts)?;
    while sim.now() < scenario.duration {
        sim.step_tile()?;
        if let Some(f) = sim.formation {
            return Ok(f);
        }
    }
    Err(SimError::NonConvergent(scenario.duration))
}
