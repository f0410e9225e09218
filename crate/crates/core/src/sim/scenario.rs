//! Scenario description and its plain-text file format.
//!
//! ```text
//! # comment
//! [config]
//! max_nodes = 16
//! tile_ms = 100
//! duration_s = 60
//! [nodes]
//! 0
//! 1
//! [links]
//! 0 1 -60 0.0          # u v rssi_dbm per
//! [events]
//! 30000 node_down 5    # t_ms kind args
//! [streams]
//! 1 0 1 10 3 spatial   # src dst port period redundancy spatial [uni|rev|bi]
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::time::Duration;

use crate::config::{HopGraph, NetworkConfig, TileKind};
use crate::graph::{DualGraph, LinkQuality};
use crate::ids::{NodeId, StreamId};
use crate::period::PeriodClass;
use crate::stream::{Direction, StreamParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    pub rssi: i16,
    /// Packet error rate in `[0, 1]`.
    pub per: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioEvent {
    NodeUp(NodeId),
    NodeDown(NodeId),
    /// Creates, updates or (with `None`) removes a link.
    LinkSet {
        a: NodeId,
        b: NodeId,
        quality: Option<(i16, f64)>,
    },
    OpenStream {
        id: StreamId,
        params: StreamParams,
    },
    CloseStream(StreamId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimedEvent {
    pub at: Duration,
    pub event: ScenarioEvent,
}

/// A stream opened by the built-in application as soon as both endpoints
/// can: the destination listens once synchronized and the source connects
/// once it learns that the listener is open.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamRequest {
    pub id: StreamId,
    pub params: StreamParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: NetworkConfig,
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkSpec>,
    pub events: Vec<TimedEvent>,
    pub streams: Vec<StreamRequest>,
    pub seed: u64,
    pub duration: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid config: {0}")]
    Config(#[from] crate::error::ConfigError),
    #[error("node {0} out of range")]
    NodeRange(NodeId),
    #[error("master node 0 must be present at start")]
    NoMaster,
    #[error("link {0}-{1}: {2}")]
    Link(NodeId, NodeId, String),
    #[error("events are not in time order")]
    EventOrder,
    #[error("stream {0}: {1}")]
    Stream(StreamId, String),
}

impl Scenario {
    pub fn new(config: NetworkConfig) -> Self {
        Scenario {
            config,
            nodes: vec![NodeId::MASTER],
            links: Vec::new(),
            events: Vec::new(),
            streams: Vec::new(),
            seed: 1,
            duration: Duration::from_secs(60),
        }
    }

    /// Links at time zero classified by the RSSI threshold, restricted to
    /// nodes the master can reach.
    pub fn initial_graph(&self) -> DualGraph {
        let cfg = &self.config;
        let mut g = DualGraph::new(cfg.max_nodes);
        for &n in &self.nodes {
            g.add_node(n);
        }
        for l in &self.links {
            let q = if l.rssi >= cfg.rssi_strong_threshold { LinkQuality::Strong } else { LinkQuality::Weak };
            g.set_link(l.a, l.b, Some(q));
        }
        let q = match cfg.hop_graph {
            HopGraph::Weak => LinkQuality::Weak,
            HopGraph::Strong => LinkQuality::Strong,
        };
        let hops = g.bfs_distances(NodeId::MASTER, q);
        for n in g.present().clone().iter() {
            if hops[n.index()].is_none() {
                g.remove_node(n);
            }
        }
        g
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.config.validate()?;
        let max = self.config.max_nodes;
        let check = |n: NodeId| if n.index() < max { Ok(()) } else { Err(ScenarioError::NodeRange(n)) };
        if !self.nodes.contains(&NodeId::MASTER) {
            return Err(ScenarioError::NoMaster);
        }
        for &n in &self.nodes {
            check(n)?;
        }
        for l in &self.links {
            check(l.a)?;
            check(l.b)?;
            if l.a == l.b {
                return Err(ScenarioError::Link(l.a, l.b, "self link".into()));
            }
            if !(0.0..=1.0).contains(&l.per) {
                return Err(ScenarioError::Link(l.a, l.b, format!("per {} outside [0, 1]", l.per)));
            }
        }
        if self.events.windows(2).any(|w| w[0].at > w[1].at) {
            return Err(ScenarioError::EventOrder);
        }
        for e in &self.events {
            match &e.event {
                ScenarioEvent::NodeUp(n) | ScenarioEvent::NodeDown(n) => check(*n)?,
                ScenarioEvent::LinkSet { a, b, quality } => {
                    check(*a)?;
                    check(*b)?;
                    if a == b || quality.is_some_and(|(_, per)| !(0.0..=1.0).contains(&per)) {
                        return Err(ScenarioError::Link(*a, *b, "invalid link_set".into()));
                    }
                }
                ScenarioEvent::OpenStream { id, .. } | ScenarioEvent::CloseStream(id) => {
                    check(id.src)?;
                    check(id.dst)?;
                }
            }
        }
        for s in &self.streams {
            check(s.id.src)?;
            check(s.id.dst)?;
            if s.id.src == s.id.dst {
                return Err(ScenarioError::Stream(s.id, "source equals destination".into()));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Scenario, ParseError> {
        Parser::default().parse(text)
    }

    /// Canonical text form; parses back to an equal scenario.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let c = &self.config;
        let ms = |d: Duration| d.as_secs_f64() * 1000.0;
        let mut o = String::from("[config]\n");
        let sf: String = c
            .control_superframe
            .iter()
            .map(|k| match k {
                TileKind::Downlink => 'D',
                TileKind::Uplink => 'U',
            })
            .collect();
        for (k, v) in [
            ("max_nodes", c.max_nodes.to_string()),
            ("tile_ms", ms(c.tile_duration).to_string()),
            ("slot_ms", ms(c.data_slot_duration).to_string()),
            ("downlink_control_ms", ms(c.downlink_control_duration).to_string()),
            ("uplink_control_ms", ms(c.uplink_control_duration).to_string()),
            ("uplink_frames_per_tile", c.uplink_frames_per_tile.to_string()),
            ("control_superframe", sf),
            ("rssi_strong_threshold", c.rssi_strong_threshold.to_string()),
            ("topology_timeout_rounds", c.topology_timeout_rounds.to_string()),
            ("schedule_repeats", c.schedule_repeats.to_string()),
            ("dfs_depth_margin", c.dfs_depth_margin.to_string()),
            ("max_uplink_payload", c.max_uplink_payload.to_string()),
            ("max_downlink_payload", c.max_downlink_payload.to_string()),
            ("hop_graph", if c.hop_graph == HopGraph::Weak { "weak" } else { "strong" }.to_string()),
            ("flood_loss", c.flood_loss.to_string()),
            ("duration_ms", ms(self.duration).to_string()),
            ("seed", self.seed.to_string()),
        ] {
            writeln!(o, "{k} = {v}").unwrap();
        }
        o.push_str("[nodes]\n");
        for n in &self.nodes {
            writeln!(o, "{}", n.0).unwrap();
        }
        o.push_str("[links]\n");
        for l in &self.links {
            writeln!(o, "{} {} {} {}", l.a.0, l.b.0, l.rssi, l.per).unwrap();
        }
        o.push_str("[events]\n");
        for e in &self.events {
            let t = ms(e.at);
            match &e.event {
                ScenarioEvent::NodeUp(n) => writeln!(o, "{t} node_up {}", n.0),
                ScenarioEvent::NodeDown(n) => writeln!(o, "{t} node_down {}", n.0),
                ScenarioEvent::LinkSet { a, b, quality: Some((r, p)) } => {
                    writeln!(o, "{t} link_set {} {} {r} {p}", a.0, b.0)
                }
                ScenarioEvent::LinkSet { a, b, quality: None } => writeln!(o, "{t} link_down {} {}", a.0, b.0),
                ScenarioEvent::OpenStream { id, params } => {
                    writeln!(o, "{t} open_stream {}", stream_fields(id, params))
                }
                ScenarioEvent::CloseStream(id) => writeln!(o, "{t} close_stream {} {} {}", id.src.0, id.dst.0, id.port),
            }
            .unwrap();
        }
        o.push_str("[streams]\n");
        for s in &self.streams {
            writeln!(o, "{}", stream_fields(&s.id, &s.params)).unwrap();
        }
        o
    }
}

fn stream_fields(id: &StreamId, p: &StreamParams) -> String {
    let dir = match p.direction {
        Direction::Forward => "uni",
        Direction::Reverse => "rev",
        Direction::Bidirectional => "bi",
    };
    format!("{} {} {} {} {} {} {}", id.src.0, id.dst.0, id.port, p.period.tiles(), p.redundancy, p.spatial as u8, dir)
}

#[derive(Default)]
struct Parser {
    line: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Config,
    Nodes,
    Links,
    Events,
    Streams,
}

impl Parser {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { line: self.line, message: message.into() })
    }

    fn num<T: std::str::FromStr>(&self, tok: Option<&str>, what: &str) -> Result<T, ParseError> {
        match tok {
            None => self.err(format!("missing {what}")),
            Some(t) => t.parse().or_else(|_| self.err(format!("bad {what} `{t}`"))),
        }
    }

    fn node(&self, tok: Option<&str>) -> Result<NodeId, ParseError> {
        self.num::<u8>(tok, "node id").map(NodeId)
    }

    fn ms(&self, v: &str, scale: f64) -> Result<Duration, ParseError> {
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() && x >= 0.0 => Ok(Duration::from_nanos((x * scale * 1e6).round() as u64)),
            _ => self.err(format!("bad duration `{v}`")),
        }
    }

    fn stream<'a>(&self, toks: &mut impl Iterator<Item = &'a str>) -> Result<(StreamId, StreamParams), ParseError> {
        let src = self.node(toks.next())?;
        let dst = self.node(toks.next())?;
        let port: u8 = self.num(toks.next(), "port")?;
        let period: u32 = self.num(toks.next(), "period")?;
        let period = PeriodClass::new(period).or_else(|e| self.err(e.to_string()))?;
        let redundancy: u8 = self.num(toks.next(), "redundancy")?;
        let spatial = match toks.next() {
            None => false,
            Some("1" | "true" | "yes" | "spatial") => true,
            Some("0" | "false" | "no" | "-") => false,
            Some(t) => return self.err(format!("bad spatial flag `{t}`")),
        };
        let direction = match toks.next() {
            None | Some("uni") => Direction::Forward,
            Some("rev") => Direction::Reverse,
            Some("bi") => Direction::Bidirectional,
            Some(t) => return self.err(format!("bad direction `{t}`")),
        };
        let params = StreamParams::new(period, direction, redundancy, spatial).or_else(|e| self.err(e.to_string()))?;
        Ok((StreamId { src, dst, port }, params))
    }

    fn config(&self, s: &mut Scenario, key: &str, v: &str) -> Result<(), ParseError> {
        let c = &mut s.config;
        match key {
            "max_nodes" => c.max_nodes = self.num(Some(v), key)?,
            "tile_ms" => c.tile_duration = self.ms(v, 1.0)?,
            "slot_ms" => c.data_slot_duration = self.ms(v, 1.0)?,
            "downlink_control_ms" => c.downlink_control_duration = self.ms(v, 1.0)?,
            "uplink_control_ms" => c.uplink_control_duration = self.ms(v, 1.0)?,
            "uplink_frames_per_tile" => c.uplink_frames_per_tile = self.num(Some(v), key)?,
            "control_superframe" => {
                c.control_superframe = v
                    .chars()
                    .map(|ch| match ch {
                        'D' | 'd' => Ok(TileKind::Downlink),
                        'U' | 'u' => Ok(TileKind::Uplink),
                        _ => self.err(format!("bad tile kind `{ch}`")),
                    })
                    .collect::<Result<_, _>>()?
            }
            "rssi_strong_threshold" => c.rssi_strong_threshold = self.num(Some(v), key)?,
            "topology_timeout_rounds" => c.topology_timeout_rounds = self.num(Some(v), key)?,
            "schedule_repeats" => c.schedule_repeats = self.num(Some(v), key)?,
            "dfs_depth_margin" => c.dfs_depth_margin = self.num(Some(v), key)?,
            "max_uplink_payload" => c.max_uplink_payload = self.num(Some(v), key)?,
            "max_downlink_payload" => c.max_downlink_payload = self.num(Some(v), key)?,
            "hop_graph" => {
                c.hop_graph = match v {
                    "weak" => HopGraph::Weak,
                    "strong" => HopGraph::Strong,
                    _ => return self.err(format!("bad hop_graph `{v}`")),
                }
            }
            "flood_loss" => c.flood_loss = self.num(Some(v), key)?,
            "duration_ms" => s.duration = self.ms(v, 1.0)?,
            "duration_s" => s.duration = self.ms(v, 1000.0)?,
            "seed" => s.seed = self.num(Some(v), key)?,
            _ => return self.err(format!("unknown config key `{key}`")),
        }
        Ok(())
    }

    fn parse(mut self, text: &str) -> Result<Scenario, ParseError> {
        let mut s = Scenario::new(NetworkConfig::default());
        s.nodes.clear();
        let mut section = Section::None;
        let mut explicit_nodes = false;
        for (i, raw) in text.lines().enumerate() {
            self.line = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = match name.trim() {
                    "config" => Section::Config,
                    "nodes" => {
                        explicit_nodes = true;
                        Section::Nodes
                    }
                    "links" => Section::Links,
                    "events" => Section::Events,
                    "streams" => Section::Streams,
                    other => return self.err(format!("unknown section `{other}`")),
                };
                continue;
            }
            let mut toks = line.split_whitespace();
            match section {
                Section::None => return self.err("content before first section"),
                Section::Config => {
                    let Some((k, v)) = line.split_once('=') else {
                        return self.err("expected key = value");
                    };
                    self.config(&mut s, k.trim(), v.trim())?;
                }
                Section::Nodes => {
                    let n = self.node(toks.next())?;
                    if !s.nodes.contains(&n) {
                        s.nodes.push(n);
                    }
                }
                Section::Links => {
                    let a = self.node(toks.next())?;
                    let b = self.node(toks.next())?;
                    let rssi = self.num(toks.next(), "rssi")?;
                    let per = self.num(toks.next(), "per")?;
                    s.links.push(LinkSpec { a, b, rssi, per });
                }
                Section::Events => {
                    let at = self.ms(toks.next().unwrap_or(""), 1.0)?;
                    let event = match toks.next() {
                        Some("node_up") => ScenarioEvent::NodeUp(self.node(toks.next())?),
                        Some("node_down") => ScenarioEvent::NodeDown(self.node(toks.next())?),
                        Some("link_set") => {
                            let a = self.node(toks.next())?;
                            let b = self.node(toks.next())?;
                            let rssi = self.num(toks.next(), "rssi")?;
                            let per = self.num(toks.next(), "per")?;
                            ScenarioEvent::LinkSet { a, b, quality: Some((rssi, per)) }
                        }
                        Some("link_down") => {
                            let a = self.node(toks.next())?;
                            let b = self.node(toks.next())?;
                            ScenarioEvent::LinkSet { a, b, quality: None }
                        }
                        Some("open_stream") => {
                            let (id, params) = self.stream(&mut toks)?;
                            ScenarioEvent::OpenStream { id, params }
                        }
                        Some("close_stream") => {
                            let src = self.node(toks.next())?;
                            let dst = self.node(toks.next())?;
                            let port = self.num(toks.next(), "port")?;
                            ScenarioEvent::CloseStream(StreamId { src, dst, port })
                        }
                        Some(k) => return self.err(format!("unknown event `{k}`")),
                        None => return self.err("missing event kind"),
                    };
                    s.events.push(TimedEvent { at, event });
                }
                Section::Streams => {
                    let (id, params) = self.stream(&mut toks)?;
                    s.streams.push(StreamRequest { id, params });
                }
            }
            if section != Section::Config && toks.next().is_some() {
                return self.err("trailing tokens");
            }
        }
        if !explicit_nodes {
            let mut set: BTreeSet<NodeId> = s.links.iter().flat_map(|l| [l.a, l.b]).collect();
            set.insert(NodeId::MASTER);
            s.nodes = set.into_iter().collect();
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "
# two nodes
[config]
max_nodes = 8
topology_timeout_rounds = 3
duration_s = 12
seed = 9
[links]
0 1 -60 0.0
1 2 -85 0.25   # weak
[events]
1500 node_down 2
2000 link_set 0 2 -70 0.1
2500 open_stream 2 0 3 10 2 spatial bi
3000 close_stream 2 0 3
[streams]
1 0 1 2 1 0
";

    #[test]
    fn parses_all_sections() {
        let s = Scenario::parse(TEXT).unwrap();
        assert_eq!(s.config.max_nodes, 8);
        assert_eq!(s.config.topology_timeout_rounds, 3);
        assert_eq!(s.duration, Duration::from_secs(12));
        assert_eq!(s.seed, 9);
        assert_eq!(s.nodes, vec![NodeId(0), NodeId(1), NodeId(2)]);
        assert_eq!(s.links[1], LinkSpec { a: NodeId(1), b: NodeId(2), rssi: -85, per: 0.25 });
        assert_eq!(s.events.len(), 4);
        assert!(
            matches!(s.events[2].event, ScenarioEvent::OpenStream { params, .. } if params.direction == Direction::Bidirectional && params.spatial)
        );
        assert_eq!(s.streams[0].id, StreamId::new(1, 0, 1));
        s.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let s = Scenario::parse(TEXT).unwrap();
        assert_eq!(Scenario::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Scenario::parse("[config]\nmax_nodes = 8\nbogus = 1\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = Scenario::parse("[links]\n0 1 x 0\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = Scenario::parse("[streams]\n1 0 1 3 1 0\n").unwrap_err();
        assert!(e.message.contains("progression"), "{}", e.message);
    }

    #[test]
    fn validation_rejects_bad_per_and_order() {
        let mut s = Scenario::parse(TEXT).unwrap();
        s.links[0].per = 1.5;
        assert!(matches!(s.validate(), Err(ScenarioError::Link(..))));
        let mut s = Scenario::parse(TEXT).unwrap();
        s.events.swap(0, 1);
        assert_eq!(s.validate(), Err(ScenarioError::EventOrder));
    }
}
