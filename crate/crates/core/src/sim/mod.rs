//! The discrete-event engine: registration, the event loop, task
//! bookkeeping and the metrics of one run.
//!
//! Events run in `(time, seq)` order, `seq` being assigned when an event is
//! scheduled. Time is logical: a 900 s run takes well under a second of wall
//! time at desk scale.

pub mod config;
pub mod scenario;
pub mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines;
use crate::geo::{GeoCoordinate, HexGrid};
use crate::ids::{Addr, ClientId, Layer, NodeId, SimTime, TaskId};
use crate::metadata::{MetadataStore, Value, AVAILABLE_CAPACITY, SUPERVISED_POOLS};
use crate::metrics::{MetricsReport, NodeRow};
use crate::protocol::{self, Client, Ctx, Message, MsgKind, NodeRuntime, Note, Output, Params, Timer};
use crate::topology::{Topology, TopologyError};
use config::{ConfigError, ScenarioConfig, Variant};
use scenario::{rng_for, stream, Deployment};
use trace::{Trace, TraceEvent};

pub use scenario::{failure_schedule, generate_scenario};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario generation failed: {0}")]
    Placement(String),
    #[error("registration failed: {0}")]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub trace: bool,
    /// Nodes stop writing their own metadata from this time on.
    pub freeze_writes_at: Option<f64>,
    /// Clients stop issuing tasks from this time on.
    pub clients_stop_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trace: Option<Trace>,
}

#[derive(Debug)]
enum Event {
    Deliver { from: Addr, to: Addr, msg: Message },
    Timer { node: NodeId, timer: Timer },
    ClientStep(ClientId),
    Fail(NodeId),
    BaselineTick,
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskState {
    Held,
    Running,
    Completed,
}

pub struct Simulation {
    params: Params,
    nodes: Vec<NodeRuntime>,
    clients: Vec<Client>,
    topology: Topology,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    now: SimTime,
    end: SimTime,
    clients_stop: Option<SimTime>,
    rng: ChaCha8Rng,
    tasks: HashMap<TaskId, (NodeId, TaskState)>,
    report: MetricsReport,
    detected: BTreeSet<NodeId>,
    trace: Option<Trace>,
    out: Vec<Output>,
    tick_pushes: u64,
}

fn tier(layer: Layer) -> usize {
    match layer {
        Layer::Edge => 0,
        Layer::Cnl => 1,
        Layer::Cloud => 2,
    }
}

impl Simulation {
    /// Registers the cloud, the CNL nodes, the edge nodes and the clients, in
    /// that order, and schedules the first events.
    pub fn new(dep: &Deployment, cfg: &ScenarioConfig, opts: RunOptions) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut params = Params::from_config(cfg);
        params.freeze_writes_at = opts.freeze_writes_at.map(SimTime::from_secs);
        let variant = cfg.variant;
        let mut topology = Topology::new(HexGrid::new(cfg.pools.base_size), cfg.max_members(), dep.cloud);
        let mut report = MetricsReport::default();
        for c in &dep.cnls {
            topology.register_cnl_node(c.position);
            report.registrations += 1;
        }
        for e in &dep.edges {
            topology.register_edge_node(e.position)?;
            report.registrations += 1;
        }

        let extra: Vec<&str> = cfg.metadata.extra_dynamic_fields.iter().map(String::as_str).collect();
        let mut nodes = Vec::with_capacity(dep.node_count());
        let placed = std::iter::once((Layer::Cloud, dep.cloud, f64::INFINITY))
            .chain(dep.cnls.iter().map(|c| (Layer::Cnl, c.position, c.capacity)))
            .chain(dep.edges.iter().map(|e| (Layer::Edge, e.position, e.capacity)));
        for (i, (layer, pos, cap)) in placed.enumerate() {
            let id = NodeId(i as u32);
            let mut fields = vec![AVAILABLE_CAPACITY];
            if layer == Layer::Cnl && variant == Variant::Hfcs {
                fields.push(SUPERVISED_POOLS);
            }
            fields.extend(&extra);
            let mut store = MetadataStore::new(id, pos, 0.0, fields);
            for f in &extra {
                store.write_local(f, Value::Scalar(0.0)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
            nodes.push(NodeRuntime::new(id, layer, pos, cap, store));
        }

        let cloud = topology.cloud();
        let cnl_ids: Vec<NodeId> = (0..dep.cnls.len()).map(|i| dep.cnl_id(i)).collect();
        match variant {
            Variant::Hfcs => {
                for n in nodes.iter_mut() {
                    match n.layer {
                        Layer::Cloud => {}
                        Layer::Cnl => {
                            n.peers = cnl_ids.iter().copied().filter(|c| *c != n.id).collect();
                            n.supervisor = Some(cloud);
                        }
                        Layer::Edge => {
                            let pool = topology.pool_of(n.id).expect("registered edge node has a pool");
                            n.peers = pool.members.iter().copied().filter(|m| *m != n.id).collect();
                            n.supervisor = Some(pool.supervisor);
                            n.pool_cell = Some(pool.cell);
                        }
                    }
                }
            }
            Variant::Hierarchical => {
                let cnls: Vec<(NodeId, GeoCoordinate)> = cnl_ids.iter().map(|c| (*c, nodes[c.0 as usize].position)).collect();
                for i in 0..nodes.len() {
                    let parent = baselines::hierarchical_parent(nodes[i].layer, nodes[i].position, &cnls, cloud);
                    nodes[i].supervisor = parent;
                    if let Some(p) = parent {
                        let child = nodes[i].id;
                        nodes[p.0 as usize].peers.insert(child);
                        nodes[p.0 as usize].last_heard.insert(child, SimTime::ZERO);
                    }
                }
            }
            Variant::Broadcast => {
                let all: Vec<NodeId> = nodes.iter().map(|n| n.id).collect();
                for n in nodes.iter_mut() {
                    n.peers = all.iter().copied().filter(|p| *p != n.id).collect();
                    n.last_heard = n.peers.iter().map(|p| (*p, SimTime::ZERO)).collect();
                }
            }
        }

        let mut sim = Simulation {
            params,
            nodes,
            clients: Vec::with_capacity(dep.clients.len()),
            topology,
            queue: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            end: SimTime::from_secs(cfg.duration_s),
            clients_stop: opts.clients_stop_at.map(SimTime::from_secs),
            rng: rng_for(cfg.seed, stream::GOSSIP),
            tasks: HashMap::new(),
            report,
            detected: BTreeSet::new(),
            trace: opts.trace.then(Trace::default),
            out: Vec::new(),
            tick_pushes: 0,
        };

        for i in 0..sim.nodes.len() {
            sim.with_ctx(i, protocol::publish_local_state);
        }
        sim.out.clear();

        for (t, victim) in failure_schedule(cfg, dep, cfg.seed) {
            sim.schedule(t, Event::Fail(victim));
        }
        match variant {
            Variant::Hfcs => {
                let interval = sim.params.gossip_interval.as_secs();
                for i in 1..sim.nodes.len() {
                    let first = SimTime::from_secs(sim.rng.random_range(0.0..interval));
                    sim.schedule(first, Event::Timer { node: NodeId(i as u32), timer: Timer::GossipTick });
                }
            }
            Variant::Hierarchical | Variant::Broadcast => sim.schedule(sim.params.gossip_interval, Event::BaselineTick),
        }
        let none = BTreeSet::new();
        for (i, pos) in dep.clients.iter().enumerate() {
            let id = ClientId(i as u32);
            let contact = protocol::bootstrap(&sim.topology, variant, *pos, &none);
            let mut c = Client::new(id, *pos, contact, rng_for(cfg.seed, stream::CLIENT_BASE + i as u64));
            let first = c.first_step(&sim.params);
            sim.clients.push(c);
            sim.report.registrations += 1;
            sim.schedule(first, Event::ClientStep(id));
        }
        Ok(sim)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn nodes(&self) -> &[NodeRuntime] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeRuntime {
        &self.nodes[id.0 as usize]
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }

    /// Tasks not yet completed, with their current holder and whether they
    /// are running there.
    pub fn open_tasks(&self) -> Vec<(TaskId, NodeId, bool)> {
        let mut v: Vec<_> = self
            .tasks
            .iter()
            .filter(|(_, (_, s))| *s != TaskState::Completed)
            .map(|(t, (h, s))| (*t, *h, *s == TaskState::Running))
            .collect();
        v.sort_unstable_by_key(|(t, _, _)| *t);
        v
    }

    fn schedule(&mut self, time: SimTime, event: Event) {
        debug_assert!(time >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.queue.push(Scheduled { time, seq: self.seq, event });
    }

    /// Processes every event before `t` (and before the end of the run).
    pub fn run_until(&mut self, t: SimTime) {
        let stop = t.min(self.end);
        while self.queue.peek().is_some_and(|s| s.time < stop) {
            let s = self.queue.pop().unwrap();
            self.now = s.time;
            self.dispatch(s.event);
        }
        self.now = self.now.max(stop);
    }

    /// Runs to the end and reports.
    pub fn finish(mut self) -> RunOutput {
        self.run_until(self.end);
        self.settle_gossip();
        let mut report = std::mem::take(&mut self.report);
        for (holder, state) in self.tasks.values() {
            match state {
                TaskState::Completed => {}
                _ if !self.nodes[holder.0 as usize].alive => report.lost_tasks += 1,
                _ => report.in_flight_tasks += 1,
            }
        }
        report.client_rebootstraps = self.clients.iter().map(|c| c.rebootstraps).sum();
        report.nodes = self
            .nodes
            .iter()
            .map(|n| NodeRow { id: n.id.0, layer: n.layer, lon: n.position.lon, lat: n.position.lat, messages: n.messages })
            .collect();
        RunOutput { report, trace: self.trace }
    }

    /// Lets gossip exchanges already on the wire at the end play out, so
    /// every session closes as either completed or unanswered. Nothing else
    /// runs past the end.
    fn settle_gossip(&mut self) {
        while let Some(s) = self.queue.pop() {
            if let Event::Deliver { msg, .. } = &s.event {
                if msg.kind().is_gossip() {
                    self.now = s.time;
                    self.dispatch(s.event);
                }
            }
        }
        let open: usize = self.nodes.iter().filter(|n| n.alive).map(|n| n.pending_gossip.len()).sum();
        self.report.unanswered_syns += open as u64;
    }

    fn with_ctx(&mut self, i: usize, f: impl FnOnce(&mut NodeRuntime, &mut Ctx)) {
        let Simulation { nodes, topology, rng, out, params, now, .. } = self;
        let mut ctx = Ctx { now: *now, params, topology, rng, out };
        f(&mut nodes[i], &mut ctx);
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::Deliver { from, to, msg } => self.deliver(from, to, msg),
            Event::Timer { node, timer } => {
                let i = node.0 as usize;
                if self.nodes[i].alive {
                    self.with_ctx(i, |n, ctx| protocol::on_timer(n, timer, ctx));
                }
            }
            Event::ClientStep(c) => self.client_step(c),
            Event::Fail(n) => self.fail(n),
            Event::BaselineTick => self.baseline_tick(),
        }
        self.apply();
    }

    fn deliver(&mut self, from: Addr, to: Addr, msg: Message) {
        let n = match to {
            Addr::Client(c) => {
                self.clients[c.0 as usize].on_message(&msg);
                return;
            }
            Addr::Node(n) => n.0 as usize,
        };
        let kind = msg.kind();
        if !self.nodes[n].alive {
            if let Some(t) = &mut self.trace {
                t.events.push(TraceEvent::Dropped { time: self.now, from, to: NodeId(n as u32), kind });
            }
            return;
        }
        self.charge(n, kind);
        self.with_ctx(n, |node, ctx| protocol::on_message(node, from, msg, ctx));
    }

    /// Metadata traffic occupies the node: tasks queue behind it.
    fn charge(&mut self, n: usize, kind: MsgKind) {
        if !kind.is_metadata() {
            return;
        }
        let cost = self.params.message_cost;
        let node = &mut self.nodes[n];
        if node.layer != Layer::Cloud {
            node.cpu_free_at = node.cpu_free_at.max(self.now) + cost;
        }
        node.messages += 1;
    }

    fn latency(&self, a: Addr, b: Addr) -> SimTime {
        let t = |x: Addr| match x {
            Addr::Client(_) => 0,
            Addr::Node(n) => tier(self.nodes[n.0 as usize].layer),
        };
        self.params.latency[t(a).max(t(b))]
    }

    fn send(&mut self, from: Addr, to: Addr, msg: Message) {
        let kind = msg.kind();
        if let Addr::Node(f) = from {
            self.charge(f.0 as usize, kind);
        }
        if kind.is_metadata() {
            self.report.metadata_messages += 1;
        }
        if kind.is_gossip() {
            self.report.gossip_messages += 1;
        }
        if kind == MsgKind::MetadataPush {
            self.tick_pushes += 1;
        } else if let Some(t) = &mut self.trace {
            t.events.push(TraceEvent::Sent { time: self.now, from, to, kind, session: msg.session() });
        }
        if let (Some(task), Addr::Node(holder)) = (msg.carried_task(), to) {
            self.tasks.insert(task, (holder, TaskState::Held));
        }
        let at = self.now + self.latency(from, to);
        self.schedule(at, Event::Deliver { from, to, msg });
    }

    fn apply(&mut self) {
        while !self.out.is_empty() {
            for o in std::mem::take(&mut self.out) {
                match o {
                    Output::Send { from, to, msg } => self.send(from, to, msg),
                    Output::Timer { node, at, timer } => self.schedule(at, Event::Timer { node, timer }),
                    Output::Note(n) => self.note(n),
                    Output::CnlFailed(c) => self.recover(c),
                }
            }
        }
    }

    fn note(&mut self, note: Note) {
        let r = &mut self.report;
        match note {
            Note::TaskAccepted { task, node } => {
                self.tasks.insert(task, (node, TaskState::Running));
            }
            Note::TaskCompleted { task, node } => {
                self.tasks.insert(task, (node, TaskState::Completed));
                r.completed_tasks += 1;
            }
            Note::Redirected { .. } => r.redirected_tasks += 1,
            Note::Escalated { .. } => r.escalated_tasks += 1,
            Note::SessionStarted { .. } => r.gossip_sessions += 1,
            Note::SessionCompleted { .. } => r.gossip_sessions_completed += 1,
            Note::SessionExpired { .. } => r.unanswered_syns += 1,
            Note::FailureDetected { node, by, pool_size } => {
                if !self.detected.insert(node) {
                    return;
                }
                r.failures_detected += 1;
                if let Some(t) = &mut self.trace {
                    t.events.push(TraceEvent::Detected { time: self.now, node, by, pool_size });
                }
                // Baselines keep the cloud's bootstrap registry in step with
                // what their nodes detect.
                if self.params.variant != Variant::Hfcs {
                    match self.nodes[node.0 as usize].layer {
                        Layer::Edge => {
                            self.topology.remove_edge_node(node);
                        }
                        Layer::Cnl => {
                            self.topology.remove_cnl(node);
                        }
                        Layer::Cloud => {}
                    }
                }
            }
        }
    }

    fn recover(&mut self, failed: NodeId) {
        let nodes = &self.nodes;
        let rec = protocol::cnl_failure_recovery(&mut self.topology, failed, |cnl, cell| {
            protocol::advertised_cells(&nodes[cnl.0 as usize].store, failed).is_some_and(|c| c.contains(&cell))
        });
        self.report.lost_pools += rec.lost.len() as u64;
        let cloud = self.topology.cloud().0 as usize;
        self.with_ctx(cloud, |n, ctx| protocol::announce_recovery(n, &rec, ctx));
    }

    fn client_step(&mut self, c: ClientId) {
        if self.clients_stop.is_some_and(|t| self.now >= t) {
            return;
        }
        let cloud = self.topology.cloud();
        let step = protocol::client_step(&mut self.clients[c.0 as usize], cloud, &self.params);
        self.report.tasks_issued += 1;
        self.send(Addr::Client(c), step.to, step.msg);
        let next = self.now + step.next_in;
        self.schedule(next, Event::ClientStep(c));
    }

    fn fail(&mut self, n: NodeId) {
        let i = n.0 as usize;
        if !self.nodes[i].alive {
            return;
        }
        let alive = |id: &NodeId| self.nodes[id.0 as usize].alive;
        let pool_live = self.topology.pool_of(n).map_or(1, |p| p.members.iter().filter(|m| alive(m)).count());
        let supervisor_alive = self.nodes[i].supervisor.is_some_and(|s| alive(&s));
        let live_cnls = self.nodes.iter().filter(|x| x.layer == Layer::Cnl && x.alive).count();
        self.nodes[i].alive = false;
        self.report.failures_triggered += 1;
        if let Some(t) = &mut self.trace {
            let layer = self.nodes[i].layer;
            t.events.push(TraceEvent::NodeFailed { time: self.now, node: n, layer, pool_live, supervisor_alive, live_cnls });
        }
    }

    fn baseline_tick(&mut self) {
        self.tick_pushes = 0;
        for i in 0..self.nodes.len() {
            if self.nodes[i].alive {
                self.with_ctx(i, baselines::baseline_tick);
                self.apply();
            }
        }
        if let Some(t) = &mut self.trace {
            let nodes = &self.nodes;
            let live = nodes.iter().filter(|n| n.alive).count();
            let failures_pending =
                nodes.iter().filter(|n| n.alive).any(|n| n.peers.iter().any(|p| !nodes[p.0 as usize].alive));
            t.events.push(TraceEvent::BaselineInterval { time: self.now, live, pushes: self.tick_pushes, failures_pending });
        }
        let next = self.now + self.params.gossip_interval;
        self.schedule(next, Event::BaselineTick);
    }
}

/// Runs one deployment under `cfg` and returns its metrics.
pub fn run(dep: &Deployment, cfg: &ScenarioConfig) -> Result<MetricsReport, SimError> {
    Ok(Simulation::new(dep, cfg, RunOptions::default())?.finish().report)
}

/// Generates the deployment for `cfg.seed` and runs it.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsReport, SimError> {
    let dep = generate_scenario(cfg, cfg.seed)?;
    run(&dep, cfg)
}
