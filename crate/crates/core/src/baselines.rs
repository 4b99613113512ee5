//! The two comparison systems. Both run on the same [`NodeRuntime`] and
//! message set as HFCS and differ in how metadata moves:
//!
//! * hierarchical: every non-root node pushes its record to its parent once
//!   per interval (edge to nearest CNL, CNL to cloud). Overloaded nodes
//!   escalate to the parent and never redirect.
//! * broadcast: every node pushes its record to every other node it still
//!   considers alive. Cloud and CNL nodes are ordinary peers; overloaded
//!   nodes redirect to the nearest peers with room, the cloud last.
//!
//! In both, a node drops a peer it has not heard from for 1.5 intervals.

use std::sync::Arc;

use crate::geo::{self, GeoCoordinate};
use crate::ids::{Layer, NodeId};
use crate::metadata::{NodeMetadata, AVAILABLE_CAPACITY};
use crate::protocol::{publish_local_state, Ctx, Message, NodeRuntime, Note, Task};
use crate::sim::config::Variant;

/// Per-interval work of one node: detect silent peers, then push.
pub fn baseline_tick(node: &mut NodeRuntime, ctx: &mut Ctx) {
    publish_local_state(node, ctx);
    let stale: Vec<NodeId> = node
        .peers
        .iter()
        .copied()
        .filter(|p| ctx.now.saturating_sub(node.last_heard.get(p).copied().unwrap_or_default()) > ctx.params.detect_after)
        .collect();
    for p in stale {
        node.peers.remove(&p);
        node.store.remove_record(p);
        node.last_heard.remove(&p);
        ctx.note(Note::FailureDetected { node: p, by: node.id, pool_size: None });
    }
    let record = Arc::new(node.store.own_record().clone());
    match ctx.params.variant {
        Variant::Hierarchical => {
            if let Some(parent) = node.supervisor {
                ctx.send(node.id, parent, Message::MetadataPush { record });
            }
        }
        Variant::Broadcast => {
            for p in &node.peers {
                ctx.send(node.id, *p, Message::MetadataPush { record: record.clone() });
            }
        }
        Variant::Hfcs => debug_assert!(false, "baseline tick in an HFCS run"),
    }
}

pub(crate) fn on_push(node: &mut NodeRuntime, from: NodeId, record: &NodeMetadata, ctx: &mut Ctx) {
    if node.peers.contains(&from) {
        node.store.merge_record(record);
        node.last_heard.insert(from, ctx.now);
    }
}

/// Broadcast redirect targets: up to `redirect_attempts` nearest peers
/// believed to have room, then the cloud.
pub(crate) fn broadcast_candidates(node: &NodeRuntime, task: &Task, ctx: &Ctx) -> Vec<NodeId> {
    let cloud = ctx.topology.cloud();
    let mut known: Vec<(f64, NodeId)> = node
        .peers
        .iter()
        .filter(|p| **p != cloud)
        .filter_map(|p| {
            let rec = node.store.record(*p)?;
            let cap = rec.scalar(AVAILABLE_CAPACITY)?;
            let pos = rec.position()?;
            (cap >= task.required_capacity).then(|| (geo::distance(node.position, pos), *p))
        })
        .collect();
    known.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<NodeId> = known.into_iter().take(ctx.params.redirect_attempts).map(|(_, p)| p).collect();
    if node.id != cloud {
        out.push(cloud);
    }
    out
}

/// Tree parent in the hierarchical baseline.
pub fn hierarchical_parent(layer: Layer, position: GeoCoordinate, cnls: &[(NodeId, GeoCoordinate)], cloud: NodeId) -> Option<NodeId> {
    match layer {
        Layer::Cloud => None,
        Layer::Cnl => Some(cloud),
        Layer::Edge => geo::nearest_by(cnls.iter().copied(), position).or(Some(cloud)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::HexGrid;
    use crate::ids::{Addr, SimTime};
    use crate::metadata::MetadataStore;
    use crate::protocol::{Output, Params};
    use crate::sim::config::ScenarioConfig;
    use crate::sim::scenario::rng_for;
    use crate::topology::Topology;

    fn params(v: Variant) -> Params {
        let mut cfg = ScenarioConfig::default();
        cfg.variant = v;
        Params::from_config(&cfg)
    }

    fn node(id: u32) -> NodeRuntime {
        let p = GeoCoordinate::planar(id as f64, 0.0);
        NodeRuntime::new(NodeId(id), Layer::Edge, p, 40.0, MetadataStore::new(NodeId(id), p, 0.0, [AVAILABLE_CAPACITY]))
    }

    fn tick(params: &Params, n: &mut NodeRuntime, now: f64) -> Vec<Output> {
        let mut topo = Topology::new(HexGrid::default(), None, GeoCoordinate::planar(0.0, 0.0));
        let mut rng = rng_for(0, 0);
        let mut out = Vec::new();
        let mut ctx = Ctx { now: SimTime::from_secs(now), params, topology: &mut topo, rng: &mut rng, out: &mut out };
        baseline_tick(n, &mut ctx);
        out
    }

    fn pushes(out: &[Output]) -> Vec<Addr> {
        out.iter()
            .filter_map(|o| match o {
                Output::Send { to, msg: Message::MetadataPush { .. }, .. } => Some(*to),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn hierarchical_child_pushes_once_to_its_parent() {
        let p = params(Variant::Hierarchical);
        let mut n = node(5);
        n.supervisor = Some(NodeId(1));
        assert_eq!(pushes(&tick(&p, &mut n, 3.0)), vec![Addr::Node(NodeId(1))]);
    }

    #[test]
    fn root_pushes_nothing() {
        let p = params(Variant::Hierarchical);
        let mut root = node(0);
        root.peers = [1, 2].map(NodeId).into();
        assert!(pushes(&tick(&p, &mut root, 3.0)).is_empty());
    }

    #[test]
    fn broadcast_reaches_every_peer_and_drops_silent_ones() {
        let p = params(Variant::Broadcast);
        let mut n = node(1);
        n.peers = [2, 3, 4].map(NodeId).into();
        assert_eq!(pushes(&tick(&p, &mut n, 3.0)).len(), 3);
        n.last_heard.insert(NodeId(2), SimTime::from_secs(3.01));
        n.last_heard.insert(NodeId(3), SimTime::from_secs(3.01));
        let out = tick(&p, &mut n, 6.0);
        assert_eq!(pushes(&out).len(), 2);
        assert!(out.contains(&Output::Note(Note::FailureDetected { node: NodeId(4), by: NodeId(1), pool_size: None })));
    }

    #[test]
    fn edge_parent_is_nearest_cnl() {
        let cnls = [(NodeId(1), GeoCoordinate::planar(0.0, 0.0)), (NodeId(2), GeoCoordinate::planar(10.0, 0.0))];
        let parent = hierarchical_parent(Layer::Edge, GeoCoordinate::planar(7.0, 0.0), &cnls, NodeId(0));
        assert_eq!(parent, Some(NodeId(2)));
        assert_eq!(hierarchical_parent(Layer::Cnl, GeoCoordinate::planar(7.0, 0.0), &cnls, NodeId(0)), Some(NodeId(0)));
        assert_eq!(hierarchical_parent(Layer::Cloud, GeoCoordinate::planar(7.0, 0.0), &cnls, NodeId(0)), None);
    }
}
