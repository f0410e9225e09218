//! Network-wide protocol parameters and time arithmetic.
//!
//! Time is organised in tiles of equal duration. Each tile opens with a
//! control region (one flooded downlink frame, or `uplink_frames_per_tile`
//! back-to-back uplink frames) followed by as many data slots as fit. Data
//! slots are indexed contiguously across the tiles of a data superframe.

use std::time::Duration;

use crate::error::{ConfigError, PeriodError, SlotError};
use crate::period::{self, PeriodClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TileKind {
    Downlink,
    Uplink,
}

impl TileKind {
    pub fn name(self) -> &'static str {
        match self {
            TileKind::Downlink => "downlink",
            TileKind::Uplink => "uplink",
        }
    }
}

/// Which graph the master's downlink flood propagates over when nodes derive
/// their hop count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HopGraph {
    Weak,
    Strong,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub max_nodes: usize,
    pub tile_duration: Duration,
    pub data_slot_duration: Duration,
    pub downlink_control_duration: Duration,
    pub uplink_control_duration: Duration,
    pub uplink_frames_per_tile: u32,
    pub control_superframe: Vec<TileKind>,
    pub rssi_strong_threshold: i16,
    pub topology_timeout_rounds: u32,
    pub schedule_repeats: u32,
    pub dfs_depth_margin: u32,
    pub max_uplink_payload: usize,
    pub max_downlink_payload: usize,
    pub hop_graph: HopGraph,
    /// Probability that a node misses a given downlink flood. Zero by default.
    pub flood_loss: f64,
}

impl Default for NetworkConfig {
    /// 100 ms tiles, 6 ms data slots and a downlink/uplink control superframe
    /// in which control takes 22% of the airtime.
    fn default() -> Self {
        NetworkConfig {
            max_nodes: 16,
            tile_duration: Duration::from_millis(100),
            data_slot_duration: Duration::from_millis(6),
            downlink_control_duration: Duration::from_millis(36),
            uplink_control_duration: Duration::from_millis(8),
            uplink_frames_per_tile: 1,
            control_superframe: vec![TileKind::Downlink, TileKind::Uplink],
            rssi_strong_threshold: -80,
            topology_timeout_rounds: 4,
            schedule_repeats: 3,
            dfs_depth_margin: 2,
            max_uplink_payload: 125,
            max_downlink_payload: 125,
            hop_graph: HopGraph::Weak,
            flood_loss: 0.0,
        }
    }
}

impl NetworkConfig {
    /// Rejects every inconsistent configuration; nothing is silently corrected.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_nodes == 0 || self.max_nodes > crate::ids::MAX_SUPPORTED_NODES {
            return Err(ConfigError::MaxNodes(self.max_nodes));
        }
        for (name, d) in [
            ("tile_duration", self.tile_duration),
            ("data_slot_duration", self.data_slot_duration),
            ("downlink_control_duration", self.downlink_control_duration),
            ("uplink_control_duration", self.uplink_control_duration),
        ] {
            if d.is_zero() {
                return Err(ConfigError::NonPositive(name));
            }
        }
        for (name, v) in [
            ("uplink_frames_per_tile", self.uplink_frames_per_tile as usize),
            ("topology_timeout_rounds", self.topology_timeout_rounds as usize),
            ("schedule_repeats", self.schedule_repeats as usize),
            ("max_uplink_payload", self.max_uplink_payload),
            ("max_downlink_payload", self.max_downlink_payload),
        ] {
            if v == 0 {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if !self.control_superframe.contains(&TileKind::Downlink)
            || !self.control_superframe.contains(&TileKind::Uplink)
        {
            return Err(ConfigError::Superframe);
        }
        for kind in [TileKind::Downlink, TileKind::Uplink] {
            if self.raw_data_slots(kind) == 0 {
                return Err(ConfigError::NoDataSlots { kind: kind.name() });
            }
        }
        let needed = crate::topology::wire::UPLINK_HEADER_BYTES + self.record_bytes();
        if self.max_uplink_payload < needed {
            return Err(ConfigError::PayloadTooSmall { payload: self.max_uplink_payload, needed });
        }
        if !(0.0..=1.0).contains(&self.flood_loss) {
            return Err(ConfigError::Probability { field: "flood_loss", value: self.flood_loss.to_string() });
        }
        Ok(())
    }

    pub fn control_region(&self, kind: TileKind) -> Duration {
        match kind {
            TileKind::Downlink => self.downlink_control_duration,
            TileKind::Uplink => self.uplink_control_duration * self.uplink_frames_per_tile,
        }
    }

    fn raw_data_slots(&self, kind: TileKind) -> u32 {
        let ctrl = self.control_region(kind);
        if ctrl >= self.tile_duration {
            return 0;
        }
        let free = (self.tile_duration - ctrl).as_nanos();
        (free / self.data_slot_duration.as_nanos()) as u32
    }

    /// Data slots that fit after the control region of a tile of `kind`.
    pub fn data_slots_per_tile(&self, kind: TileKind) -> u32 {
        self.raw_data_slots(kind)
    }

    pub fn tile_kind(&self, tile: u64) -> TileKind {
        self.control_superframe[(tile % self.control_superframe.len() as u64) as usize]
    }

    pub fn control_superframe_len(&self) -> usize {
        self.control_superframe.len()
    }

    /// Data slots in one control superframe.
    pub fn control_superframe_slots(&self) -> u32 {
        self.control_superframe.iter().map(|&k| self.data_slots_per_tile(k)).sum()
    }

    /// Fraction of airtime spent on control frames over one control superframe.
    pub fn control_share(&self) -> f64 {
        let ctrl: Duration = self.control_superframe.iter().map(|&k| self.control_region(k)).sum();
        ctrl.as_secs_f64() / (self.tile_duration.as_secs_f64() * self.control_superframe.len() as f64)
    }

    fn uniform_tiles(&self) -> bool {
        self.data_slots_per_tile(TileKind::Downlink) == self.data_slots_per_tile(TileKind::Uplink)
    }

    /// Length of a period in data slots. Only defined when every window of
    /// that many tiles holds the same number of data slots: either all tile
    /// kinds carry equally many slots, or the period spans whole control
    /// superframes.
    pub fn period_slots(&self, period: PeriodClass) -> Result<u32, PeriodError> {
        let len = self.control_superframe.len() as u32;
        if self.uniform_tiles() {
            return Ok(period.tiles() * self.data_slots_per_tile(TileKind::Uplink));
        }
        if !period.tiles().is_multiple_of(len) {
            return Err(PeriodError::Misaligned { tiles: period.tiles(), superframe: len as usize });
        }
        Ok(period.tiles() / len * self.control_superframe_slots())
    }

    /// Data superframe length in tiles: lcm of the periods, extended to a
    /// whole number of control superframes.
    pub fn superframe_duration<I>(&self, periods: I) -> Result<u32, PeriodError>
    where
        I: IntoIterator<Item = PeriodClass>,
    {
        let h = period::hyperperiod(periods).ok_or(PeriodError::Empty)?;
        Ok(period::lcm(h, self.control_superframe.len() as u64) as u32)
    }

    /// Bytes of one topology record on the wire.
    pub fn record_bytes(&self) -> usize {
        3 + 2 * self.mask_bytes()
    }

    pub fn mask_bytes(&self) -> usize {
        self.max_nodes.div_ceil(8)
    }

    /// Uplink frames per control superframe.
    pub fn uplinks_per_control_superframe(&self) -> u64 {
        self.control_superframe.iter().filter(|&&k| k == TileKind::Uplink).count() as u64
            * self.uplink_frames_per_tile as u64
    }

    /// Wall-clock length of one full round-robin uplink cycle.
    pub fn round_duration(&self) -> Duration {
        let per_sf = self.uplinks_per_control_superframe();
        let sf = self.tile_duration * self.control_superframe.len() as u32;
        sf.mul_f64(self.max_nodes as f64 / per_sf as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileLayout {
    pub kind: TileKind,
    pub control_slots: u32,
    pub data_slots: u32,
    /// Absolute index of this tile's first data slot within the superframe.
    pub base: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotTime {
    pub tile: u32,
    pub slot_in_tile: u32,
    /// Offset of the slot start from the tile start.
    pub offset: Duration,
    /// Offset of the slot start from the superframe start.
    pub time: Duration,
}

/// Data-slot layout of a data superframe starting at a control-superframe
/// boundary.
#[derive(Clone, Debug)]
pub struct SuperframeLayout {
    tiles: Vec<TileLayout>,
    total: u32,
    tile_duration: Duration,
    slot_duration: Duration,
    dl_ctrl: Duration,
    ul_ctrl: Duration,
}

impl SuperframeLayout {
    pub fn new(config: &NetworkConfig, tiles: u32) -> Self {
        let mut base = 0;
        let layouts = (0..tiles as u64)
            .map(|t| {
                let kind = config.tile_kind(t);
                let data_slots = config.data_slots_per_tile(kind);
                let l = TileLayout {
                    kind,
                    control_slots: match kind {
                        TileKind::Downlink => 1,
                        TileKind::Uplink => config.uplink_frames_per_tile,
                    },
                    data_slots,
                    base,
                };
                base += data_slots;
                l
            })
            .collect();
        SuperframeLayout {
            tiles: layouts,
            total: base,
            tile_duration: config.tile_duration,
            slot_duration: config.data_slot_duration,
            dl_ctrl: config.control_region(TileKind::Downlink),
            ul_ctrl: config.control_region(TileKind::Uplink),
        }
    }

    pub fn tiles(&self) -> &[TileLayout] {
        &self.tiles
    }

    pub fn total_slots(&self) -> u32 {
        self.total
    }

    pub fn slot_to_time(&self, index: u32) -> Result<SlotTime, SlotError> {
        if index >= self.total {
            return Err(SlotError::OutOfRange { index, len: self.total });
        }
        let tile = self.tiles.partition_point(|t| t.base + t.data_slots <= index);
        let layout = &self.tiles[tile];
        let slot_in_tile = index - layout.base;
        let ctrl = match layout.kind {
            TileKind::Downlink => self.dl_ctrl,
            TileKind::Uplink => self.ul_ctrl,
        };
        let offset = ctrl + self.slot_duration * slot_in_tile;
        Ok(SlotTime { tile: tile as u32, slot_in_tile, offset, time: self.tile_duration * tile as u32 + offset })
    }

    pub fn time_to_slot(&self, tile: u32, slot_in_tile: u32) -> Result<u32, SlotError> {
        let layout = self
            .tiles
            .get(tile as usize)
            .filter(|l| slot_in_tile < l.data_slots)
            .ok_or(SlotError::BadPosition { tile, slot: slot_in_tile })?;
        Ok(layout.base + slot_in_tile)
    }
}
