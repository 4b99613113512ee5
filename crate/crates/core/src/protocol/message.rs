use std::collections::BTreeSet;
use std::sync::Arc;

use crate::geo::{CellId, GeoCoordinate};
use crate::ids::{Addr, ClientId, NodeId, SessionId, SimTime, TaskId};
use crate::metadata::{Delta, Digest, FieldName, NodeMetadata};

/// A unit of client work. Parameters are drawn once when the client issues it.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub required_capacity: f64,
    pub duration: SimTime,
    pub origin_client: ClientId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    GossipSyn { session: SessionId, digest: Digest },
    GossipAck { session: SessionId, requests: BTreeSet<(NodeId, FieldName)>, fresher: Vec<Delta> },
    GossipAck2 { session: SessionId, deltas: Vec<Delta> },
    /// Full-record push used by both baselines.
    MetadataPush { record: Arc<NodeMetadata> },
    /// `avoid` lists contacts that stopped answering this client.
    TaskRequest { task: Task, position: GeoCoordinate, avoid: Vec<NodeId> },
    TaskReply { task: TaskId, accepted: bool, closest: Addr },
    RedirectRequest { task: Task },
    RedirectReply { task: TaskId, accepted: bool },
    Escalation { task: Task, origin: NodeId },
    ContactLookup { client: ClientId, position: GeoCoordinate },
    ContactUpdate { closest: Addr },
    FailureReport { suspect: NodeId, reporter: NodeId },
    Probe,
    ProbeReply,
    MemberRemoved { node: NodeId },
    SupervisorChange { supervisor: NodeId },
    TakeOver { pools: Vec<CellId> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MsgKind {
    GossipSyn,
    GossipAck,
    GossipAck2,
    MetadataPush,
    TaskRequest,
    TaskReply,
    RedirectRequest,
    RedirectReply,
    Escalation,
    ContactLookup,
    ContactUpdate,
    FailureReport,
    Probe,
    ProbeReply,
    MemberRemoved,
    SupervisorChange,
    TakeOver,
}

impl MsgKind {
    /// Metadata exchange traffic: gossip triples and baseline pushes.
    pub fn is_metadata(self) -> bool {
        matches!(self, MsgKind::GossipSyn | MsgKind::GossipAck | MsgKind::GossipAck2 | MsgKind::MetadataPush)
    }

    pub fn is_gossip(self) -> bool {
        matches!(self, MsgKind::GossipSyn | MsgKind::GossipAck | MsgKind::GossipAck2)
    }
}

impl Message {
    pub fn kind(&self) -> MsgKind {
        match self {
            Message::GossipSyn { .. } => MsgKind::GossipSyn,
            Message::GossipAck { .. } => MsgKind::GossipAck,
            Message::GossipAck2 { .. } => MsgKind::GossipAck2,
            Message::MetadataPush { .. } => MsgKind::MetadataPush,
            Message::TaskRequest { .. } => MsgKind::TaskRequest,
            Message::TaskReply { .. } => MsgKind::TaskReply,
            Message::RedirectRequest { .. } => MsgKind::RedirectRequest,
            Message::RedirectReply { .. } => MsgKind::RedirectReply,
            Message::Escalation { .. } => MsgKind::Escalation,
            Message::ContactLookup { .. } => MsgKind::ContactLookup,
            Message::ContactUpdate { .. } => MsgKind::ContactUpdate,
            Message::FailureReport { .. } => MsgKind::FailureReport,
            Message::Probe => MsgKind::Probe,
            Message::ProbeReply => MsgKind::ProbeReply,
            Message::MemberRemoved { .. } => MsgKind::MemberRemoved,
            Message::SupervisorChange { .. } => MsgKind::SupervisorChange,
            Message::TakeOver { .. } => MsgKind::TakeOver,
        }
    }

    pub fn session(&self) -> Option<SessionId> {
        match self {
            Message::GossipSyn { session, .. } | Message::GossipAck { session, .. } | Message::GossipAck2 { session, .. } => {
                Some(*session)
            }
            _ => None,
        }
    }

    /// Task whose ownership moves with this message.
    pub fn carried_task(&self) -> Option<TaskId> {
        match self {
            Message::TaskRequest { task, .. } | Message::Escalation { task, .. } => Some(task.id),
            _ => None,
        }
    }
}
