//! Node behaviour. Handlers are transitions over one [`NodeRuntime`]: they
//! read the incoming event, mutate the node, and push sends, timers and
//! notes into a [`Ctx`] for the event loop to carry out.
//!
//! The CNL and cloud registries live in the shared [`Topology`]; handlers
//! running on a CNL or on the cloud read and update it through the context.

mod client;
mod gossip;
mod message;
mod supervisor;
mod task;

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

pub use client::{client_step, Client, ClientStep};
pub use gossip::{gossip_tick, publish_local_state};
pub use message::{Message, MsgKind, Task};
pub use supervisor::{announce_recovery, cnl_failure_recovery, Recovery, Supervision};
pub use task::{bootstrap, handle_task, TaskOutcome};

use crate::geo::{CellId, GeoCoordinate, HexCell};
use crate::ids::{Addr, Layer, NodeId, SessionId, SimTime, TaskId};
use crate::metadata::MetadataStore;
use crate::sim::config::{Range, ScenarioConfig, Variant};
use crate::topology::Topology;

/// Config values in the units the handlers use.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub variant: Variant,
    pub gossip_interval: SimTime,
    pub fanout: usize,
    pub reply_deadline: SimTime,
    pub report_window: SimTime,
    pub probe_timeout: SimTime,
    pub min_reporters: usize,
    pub redirect_attempts: usize,
    pub redirect_timeout: SimTime,
    pub task_capacity: Range,
    pub task_duration: Range,
    pub client_step: Range,
    pub max_move: f64,
    /// Edge/client hop, hop touching a CNL, hop touching the cloud.
    pub latency: [SimTime; 3],
    pub message_cost: SimTime,
    /// Baseline nodes drop a peer unheard for this long.
    pub detect_after: SimTime,
    /// No local metadata writes from this time on.
    pub freeze_writes_at: Option<SimTime>,
}

impl Params {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let n = &cfg.network;
        Self {
            variant: cfg.variant,
            gossip_interval: SimTime::from_secs(cfg.gossip.interval_s),
            fanout: cfg.gossip.fanout,
            reply_deadline: SimTime::from_secs(cfg.gossip.reply_deadline_s),
            report_window: SimTime::from_secs(cfg.failure_detection.report_window_s),
            probe_timeout: SimTime::from_secs(cfg.failure_detection.probe_timeout_s),
            min_reporters: cfg.failure_detection.min_reporters,
            redirect_attempts: cfg.tasks.redirect_attempts,
            redirect_timeout: SimTime::from_secs(cfg.tasks.redirect_timeout_s),
            task_capacity: cfg.tasks.capacity,
            task_duration: cfg.tasks.duration_s,
            client_step: cfg.clients.step_interval_s,
            max_move: cfg.clients.max_move,
            latency: [n.intra_pool_latency_s, n.pool_cnl_latency_s, n.cnl_cloud_latency_s].map(SimTime::from_secs),
            message_cost: SimTime::from_secs(n.message_cost_s),
            detect_after: SimTime::from_secs(1.5 * cfg.gossip.interval_s),
            freeze_writes_at: None,
        }
    }

    pub fn writes_frozen(&self, now: SimTime) -> bool {
        self.freeze_writes_at.is_some_and(|t| now >= t)
    }
}

/// Task processing deferred behind the node's message backlog.
#[derive(Debug, Clone, PartialEq)]
pub enum Work {
    FromClient(Task),
    Escalated { task: Task, from: NodeId },
}

impl Work {
    pub fn task(&self) -> &Task {
        match self {
            Work::FromClient(t) | Work::Escalated { task: t, .. } => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Timer {
    GossipTick,
    SessionDeadline(SessionId),
    ProbeTimeout(NodeId),
    RedirectTimeout { task: TaskId, attempt: usize },
    TaskFinish(TaskId),
    Process(Work),
}

/// Things the event loop counts or records.
#[derive(Debug, Clone, PartialEq)]
pub enum Note {
    TaskAccepted { task: TaskId, node: NodeId },
    TaskCompleted { task: TaskId, node: NodeId },
    Redirected { task: TaskId, from: NodeId, to: NodeId },
    Escalated { task: TaskId, from: NodeId, to: NodeId },
    SessionStarted { session: SessionId, initiator: NodeId, partner: NodeId },
    SessionCompleted { session: SessionId },
    SessionExpired { session: SessionId },
    /// `pool_size` counts the pool including the removed node.
    FailureDetected { node: NodeId, by: NodeId, pool_size: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Send { from: Addr, to: Addr, msg: Message },
    Timer { node: NodeId, at: SimTime, timer: Timer },
    Note(Note),
    /// The cloud confirmed a CNL death; its pools need new supervisors.
    CnlFailed(NodeId),
}

pub struct Ctx<'a> {
    pub now: SimTime,
    pub params: &'a Params,
    pub topology: &'a mut Topology,
    pub rng: &'a mut ChaCha8Rng,
    pub out: &'a mut Vec<Output>,
}

impl Ctx<'_> {
    pub fn send(&mut self, from: NodeId, to: impl Into<Addr>, msg: Message) {
        self.out.push(Output::Send { from: from.into(), to: to.into(), msg });
    }

    pub fn timer(&mut self, node: NodeId, after: SimTime, timer: Timer) {
        self.out.push(Output::Timer { node, at: self.now + after, timer });
    }

    pub fn note(&mut self, note: Note) {
        self.out.push(Output::Note(note));
    }
}

/// An in-progress redirect: peers are queried one at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct RedirectState {
    pub task: Task,
    pub candidates: Vec<NodeId>,
    pub attempt: usize,
}

#[derive(Debug, Clone)]
pub struct NodeRuntime {
    pub id: NodeId,
    pub layer: Layer,
    pub position: GeoCoordinate,
    pub capacity_total: f64,
    pub capacity_available: f64,
    pub store: MetadataStore,
    /// Pool members for edge nodes, the other CNLs for CNL nodes. Children
    /// in the hierarchical baseline, everyone in the broadcast baseline.
    pub peers: BTreeSet<NodeId>,
    /// Pool supervisor, the cloud for CNLs, the tree parent in the
    /// hierarchical baseline.
    pub supervisor: Option<NodeId>,
    pub pool_cell: Option<HexCell>,
    pub pending_gossip: BTreeMap<SessionId, NodeId>,
    pub alive: bool,
    pub running: BTreeMap<TaskId, f64>,
    pub redirects: BTreeMap<TaskId, RedirectState>,
    pub supervision: Supervision,
    /// Baselines: when each peer was last heard from.
    pub last_heard: BTreeMap<NodeId, SimTime>,
    /// Time the node's message backlog clears.
    pub cpu_free_at: SimTime,
    /// Metadata messages sent plus received.
    pub messages: u64,
    next_session: u32,
    published_pools: Option<crate::metadata::PoolDirectory>,
}

impl NodeRuntime {
    pub fn new(id: NodeId, layer: Layer, position: GeoCoordinate, capacity: f64, store: MetadataStore) -> Self {
        Self {
            id,
            layer,
            position,
            capacity_total: capacity,
            capacity_available: capacity,
            store,
            peers: BTreeSet::new(),
            supervisor: None,
            pool_cell: None,
            pending_gossip: BTreeMap::new(),
            alive: true,
            running: BTreeMap::new(),
            redirects: BTreeMap::new(),
            supervision: Supervision::default(),
            last_heard: BTreeMap::new(),
            cpu_free_at: SimTime::ZERO,
            messages: 0,
            next_session: 0,
            published_pools: None,
        }
    }

    fn new_session(&mut self) -> SessionId {
        self.next_session += 1;
        SessionId(((self.id.0 as u64) << 32) | self.next_session as u64)
    }

    /// Capacity held by running tasks.
    pub fn capacity_in_use(&self) -> f64 {
        self.running.values().sum()
    }

    fn refresh_available(&mut self) {
        self.capacity_available = self.capacity_total - self.capacity_in_use();
    }

    fn knows(&self, n: NodeId) -> bool {
        n == self.id || self.peers.contains(&n)
    }

    fn forget(&mut self, n: NodeId) {
        self.peers.remove(&n);
        self.store.remove_record(n);
        self.last_heard.remove(&n);
    }
}

/// Dispatches one delivered message.
pub fn on_message(node: &mut NodeRuntime, from: Addr, msg: Message, ctx: &mut Ctx) {
    let sender = match from {
        Addr::Node(n) => Some(n),
        Addr::Client(_) => None,
    };
    match (msg, from) {
        (Message::GossipSyn { session, digest }, Addr::Node(f)) => gossip::on_syn(node, f, session, &digest, ctx),
        (Message::GossipAck { session, requests, fresher }, Addr::Node(f)) => {
            gossip::on_ack(node, f, session, &requests, &fresher, ctx)
        }
        (Message::GossipAck2 { deltas, .. }, _) => gossip::on_ack2(node, &deltas),
        (Message::MetadataPush { record }, Addr::Node(f)) => crate::baselines::on_push(node, f, &record, ctx),
        (Message::TaskRequest { task, position, avoid }, Addr::Client(c)) => {
            task::on_task_request(node, c, task, position, &avoid, ctx)
        }
        (Message::Escalation { task, .. }, Addr::Node(f)) => task::enqueue(node, Work::Escalated { task, from: f }, ctx),
        (Message::RedirectRequest { task }, Addr::Node(f)) => task::on_redirect_request(node, f, task, ctx),
        (Message::RedirectReply { task, accepted }, Addr::Node(f)) => task::on_redirect_reply(node, f, task, accepted, ctx),
        (Message::ContactLookup { client, position }, _) => task::on_contact_lookup(node, client, position, ctx),
        (Message::FailureReport { suspect, reporter }, _) => supervisor::on_failure_report(node, suspect, reporter, ctx),
        (Message::Probe, Addr::Node(f)) => ctx.send(node.id, f, Message::ProbeReply),
        (Message::ProbeReply, Addr::Node(f)) => supervisor::on_probe_reply(node, f),
        (Message::MemberRemoved { node: gone }, _) => node.forget(gone),
        (Message::SupervisorChange { supervisor }, _) => node.supervisor = Some(supervisor),
        (Message::TakeOver { pools }, _) => supervisor::on_take_over(node, &pools, ctx),
        (msg, _) => debug_assert!(false, "node {} cannot handle {:?} from {:?}", node.id, msg.kind(), sender),
    }
}

pub fn on_timer(node: &mut NodeRuntime, timer: Timer, ctx: &mut Ctx) {
    match timer {
        Timer::GossipTick => gossip_tick(node, ctx),
        Timer::SessionDeadline(s) => gossip::on_deadline(node, s, ctx),
        Timer::ProbeTimeout(suspect) => supervisor::on_probe_timeout(node, suspect, ctx),
        Timer::RedirectTimeout { task, attempt } => task::on_redirect_timeout(node, task, attempt, ctx),
        Timer::TaskFinish(t) => task::on_finish(node, t, ctx),
        Timer::Process(work) => task::process(node, work, ctx),
    }
}

/// Pools a CNL node advertises, with a flag for whether it changed since the
/// last publication.
pub(crate) fn directory_changed(node: &mut NodeRuntime, topology: &Topology) -> Option<crate::metadata::PoolDirectory> {
    let dir = topology.directory_of(node.id);
    if node.published_pools.as_ref() == Some(&dir) {
        return None;
    }
    node.published_pools = Some(dir.clone());
    Some(dir)
}

/// Pool cells listed in a CNL record's gossiped directory.
pub(crate) fn advertised_cells(store: &MetadataStore, cnl: NodeId) -> Option<BTreeSet<CellId>> {
    let rec = store.record(cnl)?;
    let dir = rec.get(crate::metadata::SUPERVISED_POOLS)?.value.as_pools()?;
    Some(dir.keys().copied().collect())
}
