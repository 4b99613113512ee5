//! Three-message anti-entropy: Syn carries the initiator's digest, Ack
//! carries the partner's requests and fresher values, Ack2 answers the
//! requests.

use std::collections::BTreeSet;

use rand::seq::index;

use super::{directory_changed, Ctx, Message, NodeRuntime, Note, Timer};
use crate::ids::{Layer, NodeId, SessionId};
use crate::metadata::{Delta, Digest, FieldName, Value, AVAILABLE_CAPACITY, SUPERVISED_POOLS};
use crate::sim::config::Variant;

/// Writes the owner's dynamic fields that changed since the last write.
pub fn publish_local_state(node: &mut NodeRuntime, ctx: &mut Ctx) {
    if ctx.params.writes_frozen(ctx.now) {
        return;
    }
    if node.store.own_record().scalar(AVAILABLE_CAPACITY) != Some(node.capacity_available) {
        node.store
            .write_local(AVAILABLE_CAPACITY, Value::Scalar(node.capacity_available))
            .expect("capacity is a dynamic field of every node");
    }
    if node.layer == Layer::Cnl && ctx.params.variant == Variant::Hfcs {
        if let Some(dir) = directory_changed(node, ctx.topology) {
            node.store.write_local(SUPERVISED_POOLS, Value::Pools(dir)).expect("CNL stores carry the pool directory");
        }
    }
}

/// Publishes local changes, then opens a session with up to `fanout`
/// distinct peers drawn uniformly. Re-arms itself.
pub fn gossip_tick(node: &mut NodeRuntime, ctx: &mut Ctx) {
    ctx.timer(node.id, ctx.params.gossip_interval, Timer::GossipTick);
    publish_local_state(node, ctx);
    let peers: Vec<NodeId> = node.peers.iter().copied().collect();
    let k = ctx.params.fanout.min(peers.len());
    if k == 0 {
        return;
    }
    let digest = node.store.digest();
    for i in index::sample(ctx.rng, peers.len(), k) {
        let partner = peers[i];
        let session = node.new_session();
        node.pending_gossip.insert(session, partner);
        ctx.note(Note::SessionStarted { session, initiator: node.id, partner });
        ctx.send(node.id, partner, Message::GossipSyn { session, digest: digest.clone() });
        ctx.timer(node.id, ctx.params.reply_deadline, Timer::SessionDeadline(session));
    }
}

pub(super) fn on_syn(node: &mut NodeRuntime, from: NodeId, session: SessionId, digest: &Digest, ctx: &mut Ctx) {
    let mut diff = node.store.diff(digest);
    diff.requests.retain(|(n, _)| node.knows(*n));
    ctx.send(node.id, from, Message::GossipAck { session, requests: diff.requests, fresher: diff.fresher });
}

pub(super) fn on_ack(
    node: &mut NodeRuntime,
    from: NodeId,
    session: SessionId,
    requests: &BTreeSet<(NodeId, FieldName)>,
    fresher: &[Delta],
    ctx: &mut Ctx,
) {
    if node.pending_gossip.remove(&session).is_none() {
        return;
    }
    merge_known(node, fresher);
    let deltas = node.store.collect(requests);
    ctx.send(node.id, from, Message::GossipAck2 { session, deltas });
    ctx.note(Note::SessionCompleted { session });
}

pub(super) fn on_ack2(node: &mut NodeRuntime, deltas: &[Delta]) {
    merge_known(node, deltas);
}

/// Records of nodes this node does not group with are not adopted.
fn merge_known(node: &mut NodeRuntime, deltas: &[Delta]) {
    let keep: Vec<&Delta> = deltas.iter().filter(|d| node.knows(d.node)).collect();
    node.store.merge(keep);
}

pub(super) fn on_deadline(node: &mut NodeRuntime, session: SessionId, ctx: &mut Ctx) {
    let Some(suspect) = node.pending_gossip.remove(&session) else {
        return;
    };
    ctx.note(Note::SessionExpired { session });
    if let Some(sup) = node.supervisor {
        ctx.send(node.id, sup, Message::FailureReport { suspect, reporter: node.id });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoCoordinate, HexGrid};
    use crate::ids::{Addr, SimTime};
    use crate::metadata::MetadataStore;
    use crate::protocol::{on_message, Output, Params};
    use crate::sim::config::ScenarioConfig;
    use crate::sim::scenario::rng_for;
    use crate::topology::Topology;

    fn node(id: u32, peers: impl IntoIterator<Item = u32>) -> NodeRuntime {
        let p = GeoCoordinate::planar(id as f64 * 0.01, 0.0);
        let store = MetadataStore::new(NodeId(id), p, 0.0, [AVAILABLE_CAPACITY]);
        let mut n = NodeRuntime::new(NodeId(id), Layer::Edge, p, 40.0, store);
        n.peers = peers.into_iter().map(NodeId).collect();
        n.supervisor = Some(NodeId(0));
        n
    }

    struct Env {
        params: Params,
        topo: Topology,
        rng: rand_chacha::ChaCha8Rng,
    }

    impl Env {
        fn new(seed: u64) -> Self {
            Self {
                params: Params::from_config(&ScenarioConfig::default()),
                topo: Topology::new(HexGrid::default(), Some(30), GeoCoordinate::planar(0.0, 0.0)),
                rng: rng_for(seed, 99),
            }
        }

        fn run(&mut self, f: impl FnOnce(&mut Ctx)) -> Vec<Output> {
            let mut out = Vec::new();
            let mut ctx = Ctx { now: SimTime::ZERO, params: &self.params, topology: &mut self.topo, rng: &mut self.rng, out: &mut out };
            f(&mut ctx);
            out
        }
    }

    fn syns(out: &[Output]) -> Vec<NodeId> {
        out.iter()
            .filter_map(|o| match o {
                Output::Send { to: Addr::Node(n), msg: Message::GossipSyn { .. }, .. } => Some(*n),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn one_peer_one_syn() {
        let mut env = Env::new(1);
        let mut n = node(1, [2]);
        let out = env.run(|ctx| gossip_tick(&mut n, ctx));
        assert_eq!(syns(&out), vec![NodeId(2)]);
        assert_eq!(n.pending_gossip.len(), 1);
    }

    #[test]
    fn ten_peers_three_distinct_syns() {
        let mut env = Env::new(2);
        let mut n = node(1, 2..12);
        let out = env.run(|ctx| gossip_tick(&mut n, ctx));
        let s = syns(&out);
        assert_eq!(s.len(), 3);
        assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 3);
    }

    #[test]
    fn partners_are_always_pool_members() {
        let mut env = Env::new(3);
        let mut n = node(5, [1, 2, 3, 4, 6, 7, 8]);
        for _ in 0..1000 {
            let out = env.run(|ctx| gossip_tick(&mut n, ctx));
            for p in syns(&out) {
                assert_ne!(p, n.id);
                assert!(n.peers.contains(&p));
            }
        }
    }

    /// Drives a full Syn/Ack/Ack2 exchange between two nodes and returns the
    /// number of messages it took.
    fn session(env: &mut Env, a: &mut NodeRuntime, b: &mut NodeRuntime) -> usize {
        a.peers = BTreeSet::from([b.id]);
        let mut queue: Vec<Output> = env.run(|ctx| gossip_tick(a, ctx));
        let mut sent = 0;
        while let Some(pos) = queue.iter().position(|o| matches!(o, Output::Send { .. })) {
            let Output::Send { from, to: Addr::Node(to), msg } = queue.remove(pos) else { unreachable!() };
            sent += 1;
            let target = if to == a.id { &mut *a } else { &mut *b };
            queue.extend(env.run(|ctx| on_message(target, from, msg, ctx)));
        }
        sent
    }

    #[test]
    fn identical_stores_still_take_three_messages() {
        let mut env = Env::new(4);
        let mut a = node(1, [2]);
        let mut b = node(2, [1]);
        assert_eq!(session(&mut env, &mut a, &mut b), 3);
        // Both now know each other; a second round exchanges nothing new.
        let before = (a.store.clone(), b.store.clone());
        assert_eq!(session(&mut env, &mut a, &mut b), 3);
        assert_eq!((a.store.clone(), b.store.clone()), before);
    }

    #[test]
    fn newer_partner_capacity_reaches_initiator() {
        let mut env = Env::new(5);
        let mut a = node(1, [2]);
        let mut b = node(2, [1]);
        session(&mut env, &mut a, &mut b);
        b.store.write_local(AVAILABLE_CAPACITY, Value::Scalar(7.0)).unwrap();
        session(&mut env, &mut a, &mut b);
        assert_eq!(a.store.record(NodeId(2)).unwrap().scalar(AVAILABLE_CAPACITY), Some(7.0));
    }

    #[test]
    fn expired_session_reports_the_partner_once() {
        let mut env = Env::new(6);
        let mut n = node(1, [2]);
        let out = env.run(|ctx| gossip_tick(&mut n, ctx));
        let s = *n.pending_gossip.keys().next().unwrap();
        assert!(!out.is_empty());
        let out = env.run(|ctx| on_deadline(&mut n, s, ctx));
        let reports: Vec<_> = out.iter().filter(|o| matches!(o, Output::Send { msg: Message::FailureReport { .. }, .. })).collect();
        assert_eq!(reports.len(), 1);
        assert!(env.run(|ctx| on_deadline(&mut n, s, ctx)).is_empty());
    }
}
