//! Registration state of the fog: the cloud's CNL registry and the edge pools
//! the CNL nodes supervise.
//!
//! Pools are keyed by their hex cell. A pool that would exceed its member
//! limit is split into the seven child cells; a child that would still be
//! over-full on the next insertion splits again. Split cells are retired and
//! remembered so that later lookups descend through them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, CellId, GeoCoordinate, GeoError, HexCell, HexGrid};
use crate::ids::{Addr, NodeId};
use crate::metadata::PoolDirectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("no CNL node is registered")]
    NoCnl,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("pool split failed: {0}")]
    Split(#[from] GeoError),
}

/// Upper bound on pool membership; `None` is unlimited.
pub type PoolLimit = Option<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePool {
    pub cell: HexCell,
    pub members: BTreeSet<NodeId>,
    pub supervisor: NodeId,
    pub max_members: PoolLimit,
}

impl EdgePool {
    pub fn is_full(&self) -> bool {
        self.max_members.is_some_and(|m| self.members.len() >= m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnlNode {
    pub id: NodeId,
    pub position: GeoCoordinate,
    pub supervised_pools: BTreeSet<CellId>,
}

/// Splits `pool` into the seven pools over its child cells. Every member goes
/// to the child with the nearest center; every child inherits the supervisor.
pub fn split_pool(
    grid: &HexGrid,
    pool: &EdgePool,
    positions: &BTreeMap<NodeId, GeoCoordinate>,
) -> Result<[EdgePool; 7], TopologyError> {
    let children = grid.subdivide(&pool.cell)?;
    let mut out = children.map(|cell| EdgePool {
        cell,
        members: BTreeSet::new(),
        supervisor: pool.supervisor,
        max_members: pool.max_members,
    });
    for m in &pool.members {
        let p = *positions.get(m).ok_or(TopologyError::UnknownNode(*m))?;
        let child = grid.child_containing(&pool.cell, p)?;
        let slot = out.iter_mut().find(|c| c.cell == child).expect("child of this cell");
        slot.members.insert(*m);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub parent: CellId,
    pub children: [CellId; 7],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRegistration {
    pub id: NodeId,
    pub pool: CellId,
    pub supervisor: NodeId,
    /// Pool members before this node joined.
    pub peers: Vec<NodeId>,
    pub splits: Vec<SplitRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnlRegistration {
    pub id: NodeId,
    /// Pools moved to the new node, with their previous supervisor.
    pub reassigned: Vec<(CellId, NodeId)>,
}

#[derive(Debug, Clone)]
pub struct Topology {
    grid: HexGrid,
    max_members: PoolLimit,
    cloud: NodeId,
    next_id: u32,
    cnls: BTreeMap<NodeId, CnlNode>,
    pools: BTreeMap<CellId, EdgePool>,
    split_cells: BTreeSet<CellId>,
    node_pool: BTreeMap<NodeId, CellId>,
    positions: BTreeMap<NodeId, GeoCoordinate>,
}

impl Topology {
    /// Boots the cloud at `cloud_position`; it takes id 0.
    pub fn new(grid: HexGrid, max_members: PoolLimit, cloud_position: GeoCoordinate) -> Self {
        let cloud = NodeId(0);
        Self {
            grid,
            max_members,
            cloud,
            next_id: 1,
            cnls: BTreeMap::new(),
            pools: BTreeMap::new(),
            split_cells: BTreeSet::new(),
            node_pool: BTreeMap::new(),
            positions: BTreeMap::from([(cloud, cloud_position)]),
        }
    }

    pub fn grid(&self) -> &HexGrid {
        &self.grid
    }

    pub fn cloud(&self) -> NodeId {
        self.cloud
    }

    pub fn max_members(&self) -> PoolLimit {
        self.max_members
    }

    pub fn position(&self, id: NodeId) -> Option<GeoCoordinate> {
        self.positions.get(&id).copied()
    }

    pub fn positions(&self) -> &BTreeMap<NodeId, GeoCoordinate> {
        &self.positions
    }

    pub fn cnls(&self) -> impl Iterator<Item = &CnlNode> {
        self.cnls.values()
    }

    pub fn cnl(&self, id: NodeId) -> Option<&CnlNode> {
        self.cnls.get(&id)
    }

    pub fn pools(&self) -> impl Iterator<Item = &EdgePool> {
        self.pools.values()
    }

    pub fn pool(&self, cell: CellId) -> Option<&EdgePool> {
        self.pools.get(&cell)
    }

    pub fn pool_of(&self, node: NodeId) -> Option<&EdgePool> {
        self.node_pool.get(&node).and_then(|c| self.pools.get(c))
    }

    pub fn edge_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.node_pool.keys().copied()
    }

    fn allocate_id(&mut self) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        id
    }

    fn nearest_cnl(&self, p: GeoCoordinate) -> Option<NodeId> {
        geo::nearest_by(self.cnls.values().map(|c| (c.id, c.position)), p)
    }

    /// The live pool cell a coordinate belongs to, descending through split
    /// cells. The cell may not have a pool yet.
    pub fn leaf_cell_for(&self, p: GeoCoordinate) -> HexCell {
        let mut cell = self.grid.base_cell_of(p);
        while self.split_cells.contains(&cell.id) {
            cell = self.grid.child_containing(&cell, p).expect("split cells are below the level cap");
        }
        cell
    }

    /// Registers a CNL node. Each existing CNL hands over every pool whose
    /// center is strictly closer to the newcomer.
    pub fn register_cnl_node(&mut self, position: GeoCoordinate) -> CnlRegistration {
        let id = self.allocate_id();
        self.positions.insert(id, position);
        let mut reassigned = Vec::new();
        for pool in self.pools.values_mut() {
            let current = self.positions[&pool.supervisor];
            if geo::distance(pool.cell.center, position) < geo::distance(pool.cell.center, current) {
                reassigned.push((pool.cell.id, pool.supervisor));
                if let Some(old) = self.cnls.get_mut(&pool.supervisor) {
                    old.supervised_pools.remove(&pool.cell.id);
                }
                pool.supervisor = id;
            }
        }
        let supervised_pools = reassigned.iter().map(|(c, _)| *c).collect();
        self.cnls.insert(id, CnlNode { id, position, supervised_pools });
        CnlRegistration { id, reassigned }
    }

    /// Inserts an edge node into the pool whose cell contains `position`,
    /// splitting full pools first.
    pub fn register_edge_node(&mut self, position: GeoCoordinate) -> Result<EdgeRegistration, TopologyError> {
        if self.cnls.is_empty() {
            return Err(TopologyError::NoCnl);
        }
        let id = self.allocate_id();
        let mut splits = Vec::new();
        let cell = loop {
            let cell = self.leaf_cell_for(position);
            match self.pools.get(&cell.id) {
                Some(pool) if pool.is_full() => splits.push(self.split(cell.id)?),
                _ => break cell,
            }
        };
        let pool = match self.pools.get_mut(&cell.id) {
            Some(p) => p,
            None => {
                let supervisor = self.nearest_cnl(cell.center).expect("checked non-empty");
                self.cnls.get_mut(&supervisor).unwrap().supervised_pools.insert(cell.id);
                self.pools.entry(cell.id).or_insert(EdgePool {
                    cell,
                    members: BTreeSet::new(),
                    supervisor,
                    max_members: self.max_members,
                })
            }
        };
        let peers: Vec<NodeId> = pool.members.iter().copied().collect();
        pool.members.insert(id);
        let supervisor = pool.supervisor;
        self.node_pool.insert(id, cell.id);
        self.positions.insert(id, position);
        Ok(EdgeRegistration { id, pool: cell.id, supervisor, peers, splits })
    }

    fn split(&mut self, cell: CellId) -> Result<SplitRecord, TopologyError> {
        let pool = self.pools.get(&cell).expect("splitting a live pool");
        let children = split_pool(&self.grid, pool, &self.positions)?;
        let pool = self.pools.remove(&cell).unwrap();
        self.split_cells.insert(cell);
        let sup = self.cnls.get_mut(&pool.supervisor);
        let child_ids = children.each_ref().map(|c| c.cell.id);
        if let Some(sup) = sup {
            sup.supervised_pools.remove(&cell);
            sup.supervised_pools.extend(child_ids);
        }
        for child in children {
            for m in &child.members {
                self.node_pool.insert(*m, child.cell.id);
            }
            self.pools.insert(child.cell.id, child);
        }
        Ok(SplitRecord { parent: cell, children: child_ids })
    }

    /// Nearest edge node to `p` under the nearest CNL; the CNL itself when it
    /// supervises no populated pool, the cloud when no CNL exists.
    pub fn client_bootstrap(&self, p: GeoCoordinate) -> Addr {
        self.client_bootstrap_avoiding(p, &BTreeSet::new())
    }

    /// [`Self::client_bootstrap`] skipping the nodes in `avoid`.
    pub fn client_bootstrap_avoiding(&self, p: GeoCoordinate, avoid: &BTreeSet<NodeId>) -> Addr {
        let cnls = self.cnls.values().filter(|c| !avoid.contains(&c.id)).map(|c| (c.id, c.position));
        let Some(cnl) = geo::nearest_by(cnls, p) else {
            return Addr::Node(self.cloud);
        };
        self.nearest_member_under_avoiding(cnl, p, avoid).map_or(Addr::Node(cnl), Addr::Node)
    }

    /// Nearest member among the pools supervised by `cnl`.
    pub fn nearest_member_under(&self, cnl: NodeId, p: GeoCoordinate) -> Option<NodeId> {
        self.nearest_member_under_avoiding(cnl, p, &BTreeSet::new())
    }

    pub fn nearest_member_under_avoiding(&self, cnl: NodeId, p: GeoCoordinate, avoid: &BTreeSet<NodeId>) -> Option<NodeId> {
        let c = self.cnls.get(&cnl)?;
        let members = c
            .supervised_pools
            .iter()
            .filter_map(|cell| self.pools.get(cell))
            .flat_map(|pool| pool.members.iter())
            .filter(|m| !avoid.contains(m))
            .map(|m| (*m, self.positions[m]));
        geo::nearest_by(members, p)
    }

    /// Pool directory of a CNL as carried in its gossip payload.
    pub fn directory_of(&self, cnl: NodeId) -> PoolDirectory {
        let Some(c) = self.cnls.get(&cnl) else {
            return PoolDirectory::new();
        };
        c.supervised_pools
            .iter()
            .filter_map(|cell| self.pools.get(cell))
            .map(|p| (p.cell.id, p.members.iter().copied().collect()))
            .collect()
    }

    /// Removes an edge node from its pool. Returns the pool and its remaining members.
    pub fn remove_edge_node(&mut self, node: NodeId) -> Option<(CellId, Vec<NodeId>)> {
        let cell = self.node_pool.remove(&node)?;
        let pool = self.pools.get_mut(&cell)?;
        pool.members.remove(&node);
        Some((cell, pool.members.iter().copied().collect()))
    }

    /// Drops a CNL from the cloud registry; returns the pools it supervised.
    pub fn remove_cnl(&mut self, cnl: NodeId) -> Vec<CellId> {
        self.cnls.remove(&cnl).map(|c| c.supervised_pools.into_iter().collect()).unwrap_or_default()
    }

    /// Hands `cell` to `cnl`.
    pub fn assign_supervisor(&mut self, cell: CellId, cnl: NodeId) {
        let Some(pool) = self.pools.get_mut(&cell) else { return };
        let old = std::mem::replace(&mut pool.supervisor, cnl);
        if let Some(o) = self.cnls.get_mut(&old) {
            o.supervised_pools.remove(&cell);
        }
        if let Some(n) = self.cnls.get_mut(&cnl) {
            n.supervised_pools.insert(cell);
        }
    }

    /// Pool cells that lost their supervisor for good.
    pub fn mark_lost(&mut self, cell: CellId) -> Option<EdgePool> {
        let pool = self.pools.remove(&cell)?;
        for m in &pool.members {
            self.node_pool.remove(m);
        }
        Some(pool)
    }
}
