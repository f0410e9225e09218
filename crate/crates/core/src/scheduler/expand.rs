//! Per-node expansion of a compact schedule into a slot action table.

use super::CompactSchedule;
use crate::error::ScheduleError;
use crate::ids::NodeId;
use crate::stream::ChainTag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Sleep,
    TransmitFromSession(ChainTag),
    ReceiveToBuffer(ChainTag),
    ForwardBuffered(ChainTag),
    ReceiveToSession(ChainTag),
}

impl Action {
    pub fn chain(&self) -> Option<ChainTag> {
        match *self {
            Action::Sleep => None,
            Action::TransmitFromSession(c)
            | Action::ReceiveToBuffer(c)
            | Action::ForwardBuffered(c)
            | Action::ReceiveToSession(c) => Some(c),
        }
    }

    pub fn is_transmit(&self) -> bool {
        matches!(self, Action::TransmitFromSession(_) | Action::ForwardBuffered(_))
    }

    pub fn is_receive(&self) -> bool {
        matches!(self, Action::ReceiveToBuffer(_) | Action::ReceiveToSession(_))
    }
}

/// One node's view of a schedule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpandedSchedule {
    pub node: NodeId,
    pub schedule_id: u32,
    pub actions: Vec<Action>,
    /// Chains relayed by this node, one forwarding buffer each.
    pub buffers: Vec<ChainTag>,
}

impl ExpandedSchedule {
    pub fn transmit_slots(&self) -> usize {
        self.actions.iter().filter(|a| a.is_transmit()).count()
    }

    pub fn receive_slots(&self) -> usize {
        self.actions.iter().filter(|a| a.is_receive()).count()
    }
}

pub fn expand(s: &CompactSchedule, me: NodeId) -> Result<ExpandedSchedule, ScheduleError> {
    let mut actions = vec![Action::Sleep; s.slots as usize];
    let mut buffers = Vec::new();
    for e in s.involving(me) {
        if e.period == 0 || !s.slots.is_multiple_of(e.period) {
            return Err(ScheduleError::PeriodMismatch { period: e.period, superframe: s.slots });
        }
        if e.offset >= e.period {
            return Err(ScheduleError::OffsetRange { offset: e.offset, period: e.period });
        }
        let c = e.chain;
        let action = if e.tx == me {
            if c.source() == me {
                Action::TransmitFromSession(c)
            } else {
                Action::ForwardBuffered(c)
            }
        } else if c.sink() == me {
            Action::ReceiveToSession(c)
        } else {
            if !buffers.contains(&c) {
                buffers.push(c);
            }
            Action::ReceiveToBuffer(c)
        };
        for slot in (e.offset..s.slots).step_by(e.period as usize) {
            let cell = &mut actions[slot as usize];
            if *cell != Action::Sleep {
                return Err(ScheduleError::Clash { node: me, slot });
            }
            *cell = action;
        }
    }
    Ok(ExpandedSchedule { node: me, schedule_id: s.id, actions, buffers })
}
