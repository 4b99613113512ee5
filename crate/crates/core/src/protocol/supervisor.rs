//! Failure reports, probes and the failure routines of CNL nodes (for edge
//! nodes) and the cloud (for CNL nodes).

use std::collections::{BTreeMap, BTreeSet};

use super::{Ctx, Message, NodeRuntime, Note, Output, Timer};
use crate::geo::{self, CellId};
use crate::ids::{Layer, NodeId, SimTime};
use crate::topology::Topology;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Supervision {
    reports: BTreeMap<NodeId, Vec<(NodeId, SimTime)>>,
    probing: BTreeSet<NodeId>,
    /// Nodes this supervisor already declared dead.
    pub removed: BTreeSet<NodeId>,
}

impl Supervision {
    pub fn is_probing(&self, n: NodeId) -> bool {
        self.probing.contains(&n)
    }
}

pub(super) fn on_failure_report(node: &mut NodeRuntime, suspect: NodeId, reporter: NodeId, ctx: &mut Ctx) {
    let sv = &mut node.supervision;
    if sv.removed.contains(&suspect) || sv.probing.contains(&suspect) {
        return;
    }
    let horizon = ctx.now.saturating_sub(ctx.params.report_window);
    let list = sv.reports.entry(suspect).or_default();
    list.retain(|(_, t)| *t >= horizon);
    list.push((reporter, ctx.now));
    let distinct: BTreeSet<NodeId> = list.iter().map(|(r, _)| *r).collect();
    if distinct.len() >= ctx.params.min_reporters {
        sv.reports.remove(&suspect);
        sv.probing.insert(suspect);
        ctx.send(node.id, suspect, Message::Probe);
        ctx.timer(node.id, ctx.params.probe_timeout, Timer::ProbeTimeout(suspect));
    }
}

pub(super) fn on_probe_reply(node: &mut NodeRuntime, from: NodeId) {
    node.supervision.probing.remove(&from);
}

pub(super) fn on_probe_timeout(node: &mut NodeRuntime, suspect: NodeId, ctx: &mut Ctx) {
    if !node.supervision.probing.remove(&suspect) {
        return;
    }
    node.supervision.removed.insert(suspect);
    if node.layer == Layer::Cloud {
        ctx.note(Note::FailureDetected { node: suspect, by: node.id, pool_size: None });
        ctx.out.push(Output::CnlFailed(suspect));
        return;
    }
    let pool_size = match ctx.topology.remove_edge_node(suspect) {
        Some((_, members)) => {
            for m in &members {
                ctx.send(node.id, *m, Message::MemberRemoved { node: suspect });
            }
            Some(members.len() + 1)
        }
        None => None,
    };
    ctx.note(Note::FailureDetected { node: suspect, by: node.id, pool_size });
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub failed: NodeId,
    pub assigned: Vec<(CellId, NodeId)>,
    pub lost: Vec<CellId>,
    /// CNL nodes still registered, to be told about the removal.
    pub remaining: Vec<NodeId>,
}

/// Reassigns the pools of a dead CNL. Candidates are the registered CNL nodes
/// that learned the pool's member list through gossip (`holds`); the one
/// nearest to the pool's cell center wins, ties to the lower id. Pools with
/// no candidate are lost.
pub fn cnl_failure_recovery(topology: &mut Topology, failed: NodeId, holds: impl Fn(NodeId, CellId) -> bool) -> Recovery {
    let cells = topology.remove_cnl(failed);
    let mut rec = Recovery { failed, assigned: Vec::new(), lost: Vec::new(), remaining: Vec::new() };
    for cell in cells {
        let Some(center) = topology.pool(cell).map(|p| p.cell.center) else { continue };
        let candidates = topology.cnls().filter(|c| holds(c.id, cell)).map(|c| (c.id, c.position));
        match geo::nearest_by(candidates, center) {
            Some(winner) => {
                topology.assign_supervisor(cell, winner);
                rec.assigned.push((cell, winner));
            }
            None => {
                topology.mark_lost(cell);
                rec.lost.push(cell);
            }
        }
    }
    rec.remaining = topology.cnls().map(|c| c.id).collect();
    rec
}

/// Cloud side of a recovery: drop the dead CNL from the CNL layer and hand
/// each winner its new pools.
pub fn announce_recovery(cloud: &NodeRuntime, rec: &Recovery, ctx: &mut Ctx) {
    for c in &rec.remaining {
        ctx.send(cloud.id, *c, Message::MemberRemoved { node: rec.failed });
    }
    let mut by_winner: BTreeMap<NodeId, Vec<CellId>> = BTreeMap::new();
    for (cell, w) in &rec.assigned {
        by_winner.entry(*w).or_default().push(*cell);
    }
    for (w, pools) in by_winner {
        ctx.send(cloud.id, w, Message::TakeOver { pools });
    }
}

/// The new supervisor contacts every member of the pools it took over.
pub(super) fn on_take_over(node: &mut NodeRuntime, pools: &[CellId], ctx: &mut Ctx) {
    let members: Vec<NodeId> =
        pools.iter().filter_map(|c| ctx.topology.pool(*c)).flat_map(|p| p.members.iter().copied()).collect();
    for m in members {
        ctx.send(node.id, m, Message::SupervisorChange { supervisor: node.id });
    }
}
