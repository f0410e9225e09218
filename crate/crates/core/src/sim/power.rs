//! Average current from per-mode radio activity.

use std::time::Duration;

use crate::config::{NetworkConfig, TileKind};
use crate::scheduler::ExpandedSchedule;

/// Radio currents in mA.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerModel {
    pub tx_ma: f64,
    pub rx_ma: f64,
    pub flood_ma: f64,
    pub sleep_ma: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel { tx_ma: 25.8, rx_ma: 18.5, flood_ma: 22.0, sleep_ma: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PowerError {
    #[error("current {0} is negative or not finite")]
    Current(f64),
    #[error("sleep current exceeds an active current")]
    Sleep,
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), PowerError> {
        let all = [self.tx_ma, self.rx_ma, self.flood_ma, self.sleep_ma];
        if let Some(&c) = all.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(PowerError::Current(c));
        }
        if self.sleep_ma > self.tx_ma.min(self.rx_ma).min(self.flood_ma) {
            return Err(PowerError::Sleep);
        }
        Ok(())
    }
}

/// Time a node spent in each radio mode over `elapsed`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Activity {
    pub data_tx: u64,
    pub data_rx: u64,
    pub uplink_tx: u64,
    pub uplink_rx: u64,
    pub floods: u64,
    pub elapsed: Duration,
}

impl Activity {
    /// Average current in mA; time not spent in an active mode is sleep.
    pub fn average_current(&self, model: &PowerModel, config: &NetworkConfig) -> f64 {
        let total = self.elapsed.as_secs_f64();
        if total == 0.0 {
            return model.sleep_ma;
        }
        let slot = config.data_slot_duration.as_secs_f64();
        let ul = config.uplink_control_duration.as_secs_f64();
        let dl = config.downlink_control_duration.as_secs_f64();
        let s = model.sleep_ma;
        let charge = (model.tx_ma - s) * (self.data_tx as f64 * slot + self.uplink_tx as f64 * ul)
            + (model.rx_ma - s) * (self.data_rx as f64 * slot + self.uplink_rx as f64 * ul)
            + (model.flood_ma - s) * self.floods as f64 * dl;
        s + charge / total
    }
}

/// What a node does in control slots, per round-robin cycle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopologyActivity {
    /// Neighbours whose uplink frames the node overhears.
    pub neighbors: usize,
    /// The master never sends uplink frames.
    pub is_master: bool,
}

/// Closed-form average current over one data superframe of `tiles` tiles.
pub fn estimate_power(
    expanded: &ExpandedSchedule,
    tiles: u32,
    topo: TopologyActivity,
    model: &PowerModel,
    config: &NetworkConfig,
) -> f64 {
    let downlinks = (0..tiles as u64).filter(|&t| config.tile_kind(t) == TileKind::Downlink).count() as u64;
    let uplink_frames = (tiles as u64 - downlinks) * config.uplink_frames_per_tile as u64;
    let share = uplink_frames as f64 / config.max_nodes as f64;
    let own = if topo.is_master { 0.0 } else { share };
    let slot = config.data_slot_duration.as_secs_f64();
    let ul = config.uplink_control_duration.as_secs_f64();
    let dl = config.downlink_control_duration.as_secs_f64();
    let total = config.tile_duration.as_secs_f64() * tiles as f64;
    let s = model.sleep_ma;
    let charge = (model.tx_ma - s) * (expanded.transmit_slots() as f64 * slot + own * ul)
        + (model.rx_ma - s) * (expanded.receive_slots() as f64 * slot + share * topo.neighbors as f64 * ul)
        + (model.flood_ma - s) * downlinks as f64 * dl;
    s + charge / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{NodeId, StreamId};
    use crate::scheduler::Action;
    use crate::stream::ChainTag;

    fn sched(tx: usize, rx: usize, slots: usize) -> ExpandedSchedule {
        let c = ChainTag { stream: StreamId::new(1, 0, 0), reverse: false, copy: 0 };
        let mut actions = vec![Action::Sleep; slots];
        for a in actions.iter_mut().take(tx) {
            *a = Action::TransmitFromSession(c);
        }
        for a in actions.iter_mut().skip(tx).take(rx) {
            *a = Action::ReceiveToSession(c);
        }
        ExpandedSchedule { node: NodeId(1), schedule_id: 1, actions, buffers: vec![] }
    }

    fn quiet(model: &PowerModel) -> PowerModel {
        PowerModel { flood_ma: model.sleep_ma, ..*model }
    }

    #[test]
    fn idle_node_draws_sleep_current() {
        let cfg = NetworkConfig::default();
        let m = quiet(&PowerModel::default());
        let topo = TopologyActivity { neighbors: 0, is_master: true };
        let i = estimate_power(&sched(0, 0, 25), 2, topo, &m, &cfg);
        assert_eq!(i, m.sleep_ma);
    }

    #[test]
    fn data_share_doubles_with_slots() {
        let cfg = NetworkConfig::default();
        let m = PowerModel::default();
        let topo = TopologyActivity { neighbors: 3, is_master: false };
        let base = estimate_power(&sched(0, 0, 25), 2, topo, &m, &cfg);
        let one = estimate_power(&sched(2, 3, 25), 2, topo, &m, &cfg) - base;
        let two = estimate_power(&sched(4, 6, 25), 2, topo, &m, &cfg) - base;
        assert!(one > 0.0);
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_activity_counters() {
        let cfg = NetworkConfig::default();
        let m = PowerModel::default();
        let e = sched(3, 2, 25);
        let topo = TopologyActivity { neighbors: 16, is_master: false };
        // 16 rounds of 16 uplinks: each node sends once and hears 16 frames per round.
        let tiles = 2 * 16 * 16;
        let act = Activity {
            data_tx: 3 * 16 * 16,
            data_rx: 2 * 16 * 16,
            uplink_tx: 16,
            uplink_rx: 16 * 16,
            floods: 16 * 16,
            elapsed: cfg.tile_duration * tiles,
        };
        let a = act.average_current(&m, &cfg);
        let b = estimate_power(&e, 2, topo, &m, &cfg);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn validation() {
        PowerModel::default().validate().unwrap();
        let bad = PowerModel { sleep_ma: 30.0, ..Default::default() };
        assert_eq!(bad.validate(), Err(PowerError::Sleep));
        let neg = PowerModel { rx_ma: -1.0, ..Default::default() };
        assert!(matches!(neg.validate(), Err(PowerError::Current(_))));
    }
}
