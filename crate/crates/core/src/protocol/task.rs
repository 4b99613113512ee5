//! Task intake, redirects among peers, escalation to the supervisor.
//!
//! A redirect is a query: the overloaded node asks one peer at a time
//! whether it can run the task and keeps the task until a peer says yes. A
//! peer that says yes starts the task on the spot, so a stale capacity view
//! costs a denial, never a bounced task.

use std::collections::BTreeSet;

use super::{advertised_cells, Ctx, Message, NodeRuntime, Note, Output, RedirectState, Task, Timer, Work};
use crate::geo::{self, GeoCoordinate};
use crate::ids::{Addr, ClientId, Layer, NodeId, TaskId};
use crate::metadata::AVAILABLE_CAPACITY;
use crate::sim::config::Variant;
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskOutcome {
    Accepted,
    /// Redirect started; the first queried peer.
    Querying(NodeId),
    Escalated(NodeId),
}

/// Contact a client gets from the cloud: the nearest edge node under the
/// nearest CNL, skipping nodes the client found unresponsive. The broadcast
/// baseline has no tree and hands out the nearest edge node overall.
pub fn bootstrap(topology: &Topology, variant: Variant, p: GeoCoordinate, avoid: &BTreeSet<NodeId>) -> Addr {
    match variant {
        Variant::Broadcast => {
            let edges = topology.edge_nodes().filter(|n| !avoid.contains(n)).map(|n| (n, topology.position(n).unwrap()));
            geo::nearest_by(edges, p).map_or(Addr::Node(topology.cloud()), Addr::Node)
        }
        Variant::Hfcs | Variant::Hierarchical => topology.client_bootstrap_avoiding(p, avoid),
    }
}

pub(super) fn on_task_request(
    node: &mut NodeRuntime,
    client: ClientId,
    task: Task,
    position: GeoCoordinate,
    avoid: &[NodeId],
    ctx: &mut Ctx,
) {
    let avoid: BTreeSet<NodeId> = avoid.iter().copied().collect();
    let closest = closest_for(node, client, position, &avoid, ctx);
    ctx.send(node.id, client, Message::TaskReply { task: task.id, accepted: true, closest });
    enqueue(node, Work::FromClient(task), ctx);
}

fn closest_for(node: &NodeRuntime, client: ClientId, p: GeoCoordinate, avoid: &BTreeSet<NodeId>, ctx: &mut Ctx) -> Addr {
    let variant = ctx.params.variant;
    match (node.layer, variant) {
        (Layer::Cloud, _) => bootstrap(ctx.topology, variant, p, avoid),
        (_, Variant::Hierarchical | Variant::Broadcast) => Addr::Node(node.id),
        (Layer::Cnl, Variant::Hfcs) => {
            let near = ctx.topology.nearest_member_under_avoiding(node.id, p, avoid);
            Addr::Node(near.unwrap_or(node.id))
        }
        (Layer::Edge, Variant::Hfcs) => {
            let inside = node.pool_cell.is_some_and(|cell| {
                ctx.topology.grid().cell_at(p, cell.level()).is_ok_and(|c| c == cell)
            });
            if !inside {
                // The client left this pool's geofence; the CNL layer knows
                // which pool covers it now.
                if let Some(sup) = node.supervisor {
                    ctx.send(node.id, sup, Message::ContactLookup { client, position: p });
                }
                return Addr::Node(node.id);
            }
            let known = std::iter::once((node.id, node.position)).chain(
                node.peers
                    .iter()
                    .filter(|n| !avoid.contains(n))
                    .filter_map(|n| node.store.record(*n).and_then(|r| r.position()).map(|pos| (*n, pos))),
            );
            Addr::Node(geo::nearest_by(known, p).unwrap_or(node.id))
        }
    }
}

pub(super) fn on_contact_lookup(node: &mut NodeRuntime, client: ClientId, p: GeoCoordinate, ctx: &mut Ctx) {
    let topo = &*ctx.topology;
    let cell = topo.leaf_cell_for(p).id;
    let own = topo.cnl(node.id).is_some_and(|c| c.supervised_pools.contains(&cell));
    let holder = if own {
        Some(node.id)
    } else {
        node.peers.iter().copied().find(|peer| advertised_cells(&node.store, *peer).is_some_and(|c| c.contains(&cell)))
    };
    let closest = holder
        .and_then(|_| topo.pool(cell))
        .and_then(|pool| geo::nearest_by(pool.members.iter().map(|m| (*m, topo.position(*m).unwrap())), p))
        .map_or_else(|| topo.client_bootstrap(p), Addr::Node);
    ctx.send(node.id, client, Message::ContactUpdate { closest });
}

/// Queues task processing behind the node's message backlog.
pub(super) fn enqueue(node: &mut NodeRuntime, work: Work, ctx: &mut Ctx) {
    if node.cpu_free_at <= ctx.now {
        process(node, work, ctx);
    } else {
        ctx.out.push(Output::Timer { node: node.id, at: node.cpu_free_at, timer: Timer::Process(work) });
    }
}

pub(super) fn process(node: &mut NodeRuntime, work: Work, ctx: &mut Ctx) {
    let task = match work {
        Work::FromClient(t) | Work::Escalated { task: t, .. } => t,
    };
    handle_task(node, task, ctx);
}

/// Runs the task locally if it fits, else starts a redirect, else escalates.
pub fn handle_task(node: &mut NodeRuntime, task: Task, ctx: &mut Ctx) -> TaskOutcome {
    if fits(node, &task) {
        accept(node, task, ctx);
        return TaskOutcome::Accepted;
    }
    let candidates = match ctx.params.variant {
        Variant::Hfcs => capacity_ranked(node, &task, ctx.params.redirect_attempts),
        Variant::Hierarchical => Vec::new(),
        Variant::Broadcast => crate::baselines::broadcast_candidates(node, &task, ctx),
    };
    if candidates.is_empty() {
        return TaskOutcome::Escalated(escalate(node, task, ctx));
    }
    let first = candidates[0];
    let id = task.id;
    node.redirects.insert(id, RedirectState { task, candidates, attempt: 0 });
    query(node, id, ctx);
    TaskOutcome::Querying(first)
}

fn fits(node: &NodeRuntime, task: &Task) -> bool {
    node.capacity_available >= task.required_capacity
}

/// Peers believed to have room, most spare capacity first.
fn capacity_ranked(node: &NodeRuntime, task: &Task, limit: usize) -> Vec<NodeId> {
    let mut known: Vec<(f64, NodeId)> = node
        .peers
        .iter()
        .filter_map(|p| node.store.record(*p)?.scalar(AVAILABLE_CAPACITY).map(|c| (c, *p)))
        .filter(|(c, _)| *c >= task.required_capacity)
        .collect();
    known.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    known.into_iter().take(limit).map(|(_, p)| p).collect()
}

fn accept(node: &mut NodeRuntime, task: Task, ctx: &mut Ctx) {
    node.running.insert(task.id, task.required_capacity);
    node.refresh_available();
    ctx.timer(node.id, task.duration, Timer::TaskFinish(task.id));
    ctx.note(Note::TaskAccepted { task: task.id, node: node.id });
}

fn escalate(node: &mut NodeRuntime, task: Task, ctx: &mut Ctx) -> NodeId {
    let to = node.supervisor.unwrap_or_else(|| ctx.topology.cloud());
    ctx.note(Note::Escalated { task: task.id, from: node.id, to });
    ctx.send(node.id, to, Message::Escalation { task, origin: node.id });
    to
}

fn query(node: &mut NodeRuntime, task: TaskId, ctx: &mut Ctx) {
    let st = &node.redirects[&task];
    let (peer, attempt, t) = (st.candidates[st.attempt], st.attempt, st.task.clone());
    ctx.send(node.id, peer, Message::RedirectRequest { task: t });
    ctx.timer(node.id, ctx.params.redirect_timeout, Timer::RedirectTimeout { task, attempt });
}

fn next_candidate(node: &mut NodeRuntime, task: TaskId, ctx: &mut Ctx) {
    let st = node.redirects.get_mut(&task).expect("redirect in progress");
    st.attempt += 1;
    if st.attempt < st.candidates.len() {
        query(node, task, ctx);
    } else {
        let st = node.redirects.remove(&task).unwrap();
        escalate(node, st.task, ctx);
    }
}

pub(super) fn on_redirect_request(node: &mut NodeRuntime, from: NodeId, task: Task, ctx: &mut Ctx) {
    let id = task.id;
    let accepted = fits(node, &task);
    if accepted {
        accept(node, task, ctx);
    }
    ctx.send(node.id, from, Message::RedirectReply { task: id, accepted });
}

pub(super) fn on_redirect_reply(node: &mut NodeRuntime, from: NodeId, task: TaskId, accepted: bool, ctx: &mut Ctx) {
    let Some(st) = node.redirects.get(&task) else { return };
    if st.candidates[st.attempt] != from {
        return;
    }
    if accepted {
        node.redirects.remove(&task);
        ctx.note(Note::Redirected { task, from: node.id, to: from });
    } else {
        next_candidate(node, task, ctx);
    }
}

pub(super) fn on_redirect_timeout(node: &mut NodeRuntime, task: TaskId, attempt: usize, ctx: &mut Ctx) {
    if node.redirects.get(&task).is_some_and(|st| st.attempt == attempt) {
        next_candidate(node, task, ctx);
    }
}

pub(super) fn on_finish(node: &mut NodeRuntime, task: TaskId, ctx: &mut Ctx) {
    if node.running.remove(&task).is_some() {
        node.refresh_available();
        ctx.note(Note::TaskCompleted { task, node: node.id });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::HexGrid;
    use crate::ids::SimTime;
    use crate::metadata::{MetadataStore, Value};
    use crate::protocol::{on_message, on_timer, Params};
    use crate::sim::config::ScenarioConfig;
    use crate::sim::scenario::rng_for;

    fn node(id: u32, cap: f64) -> NodeRuntime {
        let p = GeoCoordinate::planar(id as f64 * 0.01, 0.0);
        let store = MetadataStore::new(NodeId(id), p, 0.0, [AVAILABLE_CAPACITY]);
        let mut n = NodeRuntime::new(NodeId(id), Layer::Edge, p, cap, store);
        n.supervisor = Some(NodeId(100));
        n
    }

    fn task(cap: f64) -> Task {
        Task { id: TaskId(1), required_capacity: cap, duration: SimTime::from_secs(2.0), origin_client: ClientId(0) }
    }

    fn with_ctx<R>(f: impl FnOnce(&mut Ctx) -> R) -> (R, Vec<Output>) {
        let params = Params::from_config(&ScenarioConfig::default());
        let mut topo = Topology::new(HexGrid::default(), Some(30), GeoCoordinate::planar(0.0, 0.0));
        let mut rng = rng_for(0, 0);
        let mut out = Vec::new();
        let r = f(&mut Ctx { now: SimTime::ZERO, params: &params, topology: &mut topo, rng: &mut rng, out: &mut out });
        (r, out)
    }

    fn learn(n: &mut NodeRuntime, peer: u32, cap: f64) {
        let mut other = MetadataStore::new(NodeId(peer), GeoCoordinate::planar(0.0, 0.0), 0.0, [AVAILABLE_CAPACITY]);
        other.write_local(AVAILABLE_CAPACITY, Value::Scalar(cap)).unwrap();
        n.store.merge_record(other.own_record());
        n.peers.insert(NodeId(peer));
    }

    #[test]
    fn fitting_task_is_accepted_and_capacity_restored_after() {
        let mut n = node(1, 10.0);
        let (o, out) = with_ctx(|ctx| handle_task(&mut n, task(5.0), ctx));
        assert_eq!(o, TaskOutcome::Accepted);
        assert_eq!(n.capacity_available, 5.0);
        assert_eq!(n.capacity_in_use() + n.capacity_available, n.capacity_total);
        let fin = out.iter().find_map(|o| match o {
            Output::Timer { timer: t @ Timer::TaskFinish(_), at, .. } => Some((t.clone(), *at)),
            _ => None,
        });
        let (t, at) = fin.unwrap();
        assert_eq!(at, SimTime::from_secs(2.0));
        with_ctx(|ctx| on_timer(&mut n, t, ctx));
        assert_eq!(n.capacity_available, 10.0);
    }

    #[test]
    fn all_peers_deny_then_escalate() {
        let mut n = node(1, 2.0);
        for (p, c) in [(2, 9.0), (3, 8.0), (4, 7.0), (5, 1.0)] {
            learn(&mut n, p, c);
        }
        let (o, out) = with_ctx(|ctx| handle_task(&mut n, task(5.0), ctx));
        assert_eq!(o, TaskOutcome::Querying(NodeId(2)));
        assert!(matches!(&out[0], Output::Send { to: Addr::Node(NodeId(2)), msg: Message::RedirectRequest { .. }, .. }));
        let mut asked = vec![NodeId(2)];
        let mut escalated = None;
        for peer in [2, 3, 4] {
            let (_, out) = with_ctx(|ctx| {
                on_message(&mut n, Addr::Node(NodeId(peer)), Message::RedirectReply { task: TaskId(1), accepted: false }, ctx)
            });
            for o in out {
                match o {
                    Output::Send { to: Addr::Node(to), msg: Message::RedirectRequest { .. }, .. } => asked.push(to),
                    Output::Send { to: Addr::Node(to), msg: Message::Escalation { .. }, .. } => escalated = Some(to),
                    _ => {}
                }
            }
        }
        assert_eq!(asked, vec![NodeId(2), NodeId(3), NodeId(4)]);
        assert_eq!(escalated, Some(NodeId(100)));
    }

    #[test]
    fn peer_with_spare_capacity_takes_the_redirect() {
        let mut n = node(1, 2.0);
        learn(&mut n, 2, 30.0);
        let mut peer = node(2, 30.0);
        with_ctx(|ctx| handle_task(&mut n, task(5.0), ctx));
        let (_, out) = with_ctx(|ctx| on_message(&mut peer, Addr::Node(NodeId(1)), Message::RedirectRequest { task: task(5.0) }, ctx));
        assert_eq!(peer.capacity_available, 25.0);
        let Some(Output::Send { msg, .. }) = out.into_iter().find(|o| matches!(o, Output::Send { .. })) else { panic!() };
        let (_, out) = with_ctx(|ctx| on_message(&mut n, Addr::Node(NodeId(2)), msg, ctx));
        assert!(out.contains(&Output::Note(Note::Redirected { task: TaskId(1), from: NodeId(1), to: NodeId(2) })));
        assert!(n.redirects.is_empty());
    }

    #[test]
    fn no_peers_escalates_at_once() {
        let mut n = node(1, 2.0);
        let (o, _) = with_ctx(|ctx| handle_task(&mut n, task(5.0), ctx));
        assert_eq!(o, TaskOutcome::Escalated(NodeId(100)));
    }

    #[test]
    fn dead_peer_times_out_and_the_next_is_asked() {
        let mut n = node(1, 2.0);
        learn(&mut n, 2, 9.0);
        learn(&mut n, 3, 8.0);
        with_ctx(|ctx| handle_task(&mut n, task(5.0), ctx));
        let (_, out) = with_ctx(|ctx| on_timer(&mut n, Timer::RedirectTimeout { task: TaskId(1), attempt: 0 }, ctx));
        assert!(matches!(&out[0], Output::Send { to: Addr::Node(NodeId(3)), msg: Message::RedirectRequest { .. }, .. }));
        // A stale timeout for the first attempt does nothing.
        let (_, out) = with_ctx(|ctx| on_timer(&mut n, Timer::RedirectTimeout { task: TaskId(1), attempt: 0 }, ctx));
        assert!(out.is_empty());
    }
}
