use crate::ids::{Addr, Layer, NodeId, SessionId, SimTime};
use crate::protocol::MsgKind;

/// Optional record of what happened during a run, for inspection in tests.
/// Baseline metadata pushes are summarized per interval instead of being
/// listed one by one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Sent { time: SimTime, from: Addr, to: Addr, kind: MsgKind, session: Option<SessionId> },
    Dropped { time: SimTime, from: Addr, to: NodeId, kind: MsgKind },
    NodeFailed {
        time: SimTime,
        node: NodeId,
        layer: Layer,
        /// Live members of the victim's pool at death, the victim included.
        pool_live: usize,
        supervisor_alive: bool,
        /// Live CNL nodes at death, the victim included when it is one.
        live_cnls: usize,
    },
    Detected { time: SimTime, node: NodeId, by: NodeId, pool_size: Option<usize> },
    BaselineInterval { time: SimTime, live: usize, pushes: u64, failures_pending: bool },
}

impl Trace {
    pub fn sent(&self) -> impl Iterator<Item = (MsgKind, Option<SessionId>)> + '_ {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Sent { kind, session, .. } => Some((*kind, *session)),
            _ => None,
        })
    }
}
