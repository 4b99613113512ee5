//! Versioned per-node metadata and the digest / diff / merge algebra that the
//! gossip sessions run on.
//!
//! Every dynamic field carries a write counter owned by the node the record
//! describes. Only the owner creates new versions; everybody else relays, so
//! two different values never share a version and "strictly greater wins" is
//! a complete merge rule.
//!
//! Static fields (position, privacy degree) are written once at registration
//! with version 0. They are left out of digests and travel only when the
//! other side does not know the node at all.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{CellId, GeoCoordinate};
use crate::ids::NodeId;

pub type FieldName = Arc<str>;
pub type Version = u64;

pub const POSITION: &str = "position";
pub const PRIVACY_DEGREE: &str = "privacy_degree";
pub const AVAILABLE_CAPACITY: &str = "available_capacity";
/// CNL-only field: supervised pool -> member list.
pub const SUPERVISED_POOLS: &str = "supervised_pools";

pub const STATIC_FIELDS: [&str; 2] = [POSITION, PRIVACY_DEGREE];

pub fn is_static(field: &str) -> bool {
    STATIC_FIELDS.contains(&field)
}

/// Pool membership as advertised by a CNL node.
pub type PoolDirectory = BTreeMap<CellId, Vec<NodeId>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Scalar(f64),
    Coord(GeoCoordinate),
    Pools(PoolDirectory),
}

impl Value {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_coord(&self) -> Option<GeoCoordinate> {
        match self {
            Value::Coord(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_pools(&self) -> Option<&PoolDirectory> {
        match self {
            Value::Pools(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldValue {
    pub value: Value,
    pub version: Version,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetadata {
    pub node_id: NodeId,
    fields: BTreeMap<FieldName, FieldValue>,
}

impl NodeMetadata {
    fn empty(node_id: NodeId) -> Self {
        Self { node_id, fields: BTreeMap::new() }
    }

    pub fn get(&self, field: &str) -> Option<&FieldValue> {
        self.fields.get(field)
    }

    pub fn fields(&self) -> impl Iterator<Item = (&FieldName, &FieldValue)> {
        self.fields.iter()
    }

    pub fn static_fields(&self) -> impl Iterator<Item = (&FieldName, &FieldValue)> {
        self.fields.iter().filter(|(k, _)| is_static(k))
    }

    pub fn dynamic_fields(&self) -> impl Iterator<Item = (&FieldName, &FieldValue)> {
        self.fields.iter().filter(|(k, _)| !is_static(k))
    }

    pub fn position(&self) -> Option<GeoCoordinate> {
        self.get(POSITION).and_then(|f| f.value.as_coord())
    }

    pub fn scalar(&self, field: &str) -> Option<f64> {
        self.get(field).and_then(|f| f.value.as_scalar())
    }
}

/// One field update in flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub node: NodeId,
    pub field: FieldName,
    pub value: Value,
    pub version: Version,
}

/// Versions only: node -> field -> version.
pub type Digest = BTreeMap<NodeId, BTreeMap<FieldName, Version>>;

/// Result of comparing the local store against a remote digest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diff {
    /// Fields the remote side holds newer (or the local side lacks).
    pub requests: BTreeSet<(NodeId, FieldName)>,
    /// Local fields newer than the remote's (or unknown to it), with values.
    pub fresher: Vec<Delta>,
}

impl Diff {
    pub fn is_empty(&self) -> bool {
        self.requests.is_empty() && self.fresher.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetadataError {
    #[error("field `{0}` is static and cannot change after registration")]
    StaticField(String),
    #[error("field `{0}` is not a dynamic field of this node")]
    UnknownField(String),
}

/// The owner's record plus everything it learned about its peers.
#[derive(Debug, Clone, PartialEq)]
pub struct MetadataStore {
    owner: NodeId,
    dynamic_names: BTreeSet<FieldName>,
    records: BTreeMap<NodeId, NodeMetadata>,
}

impl MetadataStore {
    /// Registers the owner with its static fields and the fixed set of
    /// dynamic fields it may write.
    pub fn new<'a>(
        owner: NodeId,
        position: GeoCoordinate,
        privacy_degree: f64,
        dynamic_fields: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let mut own = NodeMetadata::empty(owner);
        own.fields.insert(POSITION.into(), FieldValue { value: Value::Coord(position), version: 0 });
        own.fields
            .insert(PRIVACY_DEGREE.into(), FieldValue { value: Value::Scalar(privacy_degree), version: 0 });
        let dynamic_names = dynamic_fields.into_iter().filter(|f| !is_static(f)).map(FieldName::from).collect();
        Self { owner, dynamic_names, records: BTreeMap::from([(owner, own)]) }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn own_record(&self) -> &NodeMetadata {
        &self.records[&self.owner]
    }

    pub fn record(&self, node: NodeId) -> Option<&NodeMetadata> {
        self.records.get(&node)
    }

    pub fn records(&self) -> impl Iterator<Item = &NodeMetadata> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn version(&self, node: NodeId, field: &str) -> Option<Version> {
        self.records.get(&node)?.get(field).map(|f| f.version)
    }

    /// Writes one of the owner's dynamic fields and bumps its version.
    pub fn write_local(&mut self, field: &str, value: Value) -> Result<Version, MetadataError> {
        if is_static(field) {
            return Err(MetadataError::StaticField(field.to_owned()));
        }
        let Some(name) = self.dynamic_names.get(field).cloned() else {
            return Err(MetadataError::UnknownField(field.to_owned()));
        };
        let own = self.records.get_mut(&self.owner).expect("owner record is always present");
        let version = own.fields.get(field).map_or(0, |f| f.version) + 1;
        own.fields.insert(name, FieldValue { value, version });
        Ok(version)
    }

    pub fn digest(&self) -> Digest {
        self.records
            .iter()
            .map(|(id, rec)| (*id, rec.dynamic_fields().map(|(k, f)| (k.clone(), f.version)).collect()))
            .collect()
    }

    pub fn diff(&self, remote: &Digest) -> Diff {
        let mut out = Diff::default();
        for (node, fields) in remote {
            let local = self.records.get(node);
            if local.is_none() {
                for name in STATIC_FIELDS {
                    out.requests.insert((*node, name.into()));
                }
            }
            for (field, &rv) in fields {
                let lv = local.and_then(|r| r.get(field)).map(|f| f.version);
                if lv.is_none_or(|lv| rv > lv) {
                    out.requests.insert((*node, field.clone()));
                }
            }
        }
        for (node, rec) in &self.records {
            let remote_fields = remote.get(node);
            for (field, fv) in &rec.fields {
                let include = match remote_fields {
                    None => true,
                    Some(_) if is_static(field) => false,
                    Some(rf) => rf.get(field).is_none_or(|&rv| fv.version > rv),
                };
                if include {
                    out.fresher.push(Delta { node: *node, field: field.clone(), value: fv.value.clone(), version: fv.version });
                }
            }
        }
        out
    }

    /// Current values for the requested pairs; pairs unknown locally are skipped.
    pub fn collect<'a>(&self, requests: impl IntoIterator<Item = &'a (NodeId, FieldName)>) -> Vec<Delta> {
        requests
            .into_iter()
            .filter_map(|(node, field)| {
                let fv = self.records.get(node)?.get(field)?;
                Some(Delta { node: *node, field: field.clone(), value: fv.value.clone(), version: fv.version })
            })
            .collect()
    }

    /// Applies each delta whose version beats the stored one. Returns how
    /// many were applied.
    pub fn merge<'a>(&mut self, deltas: impl IntoIterator<Item = &'a Delta>) -> usize {
        let mut applied = 0;
        for d in deltas {
            let rec = self.records.entry(d.node).or_insert_with(|| NodeMetadata::empty(d.node));
            match rec.fields.get(&d.field) {
                Some(cur) if cur.version >= d.version => {}
                _ => {
                    rec.fields.insert(d.field.clone(), FieldValue { value: d.value.clone(), version: d.version });
                    applied += 1;
                }
            }
        }
        applied
    }

    /// Inserts or replaces a whole record. Only used by the baselines, where
    /// each push carries the sender's full record.
    pub fn merge_record(&mut self, record: &NodeMetadata) -> usize {
        let deltas: Vec<Delta> = record
            .fields
            .iter()
            .map(|(k, f)| Delta { node: record.node_id, field: k.clone(), value: f.value.clone(), version: f.version })
            .collect();
        self.merge(&deltas)
    }

    /// Drops a peer's record. The owner's record cannot be removed.
    pub fn remove_record(&mut self, node: NodeId) -> bool {
        node != self.owner && self.records.remove(&node).is_some()
    }

    /// Keeps only records of the owner and `keep`.
    pub fn retain_records(&mut self, keep: &BTreeSet<NodeId>) {
        let owner = self.owner;
        self.records.retain(|id, _| *id == owner || keep.contains(id));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(id: u32) -> MetadataStore {
        MetadataStore::new(NodeId(id), GeoCoordinate::planar(id as f64, 0.0), 0.0, [AVAILABLE_CAPACITY, "bandwidth"])
    }

    #[test]
    fn write_local_versions_count_up() {
        let mut s = store(1);
        assert_eq!(s.write_local(AVAILABLE_CAPACITY, Value::Scalar(10.0)), Ok(1));
        assert_eq!(s.write_local(AVAILABLE_CAPACITY, Value::Scalar(7.0)), Ok(2));
        assert_eq!(s.own_record().scalar(AVAILABLE_CAPACITY), Some(7.0));
    }

    #[test]
    fn write_local_rejects_static_and_unknown() {
        let mut s = store(1);
        assert!(matches!(s.write_local(POSITION, Value::Scalar(0.0)), Err(MetadataError::StaticField(_))));
        assert!(matches!(s.write_local("latency", Value::Scalar(0.0)), Err(MetadataError::UnknownField(_))));
    }

    #[test]
    fn digest_lists_dynamic_versions_only() {
        let mut s = store(3);
        assert_eq!(s.digest(), Digest::from([(NodeId(3), BTreeMap::new())]));
        for v in 0..3 {
            s.write_local(AVAILABLE_CAPACITY, Value::Scalar(v as f64)).unwrap();
        }
        let expect = Digest::from([(NodeId(3), BTreeMap::from([(FieldName::from(AVAILABLE_CAPACITY), 3)]))]);
        assert_eq!(s.digest(), expect);
    }

    #[test]
    fn identical_stores_have_empty_diff() {
        let mut a = store(1);
        a.write_local(AVAILABLE_CAPACITY, Value::Scalar(4.0)).unwrap();
        let b = a.clone();
        assert!(a.diff(&b.digest()).is_empty());
    }

    #[test]
    fn newer_remote_field_is_requested() {
        let mut a = store(1);
        let mut b = store(2);
        for _ in 0..3 {
            a.write_local(AVAILABLE_CAPACITY, Value::Scalar(1.0)).unwrap();
        }
        b.merge(&a.diff(&b.digest()).fresher);
        for _ in 0..2 {
            a.write_local(AVAILABLE_CAPACITY, Value::Scalar(2.0)).unwrap();
        }
        // a holds v5, b holds v3.
        let d = b.diff(&a.digest());
        assert!(d.requests.contains(&(NodeId(1), FieldName::from(AVAILABLE_CAPACITY))));
        assert!(d.fresher.iter().all(|x| x.node == NodeId(2)));
    }

    #[test]
    fn merge_rules() {
        let mut s = store(1);
        let d = |v, version| Delta { node: NodeId(9), field: AVAILABLE_CAPACITY.into(), value: Value::Scalar(v), version };
        assert_eq!(s.merge(&[d(5.0, 2)]), 1);
        assert_eq!(s.merge(&[d(6.0, 2)]), 0);
        assert_eq!(s.record(NodeId(9)).unwrap().scalar(AVAILABLE_CAPACITY), Some(5.0));
        assert_eq!(s.merge(&[d(1.0, 3)]), 1);
        assert_eq!(s.version(NodeId(9), AVAILABLE_CAPACITY), Some(3));
        assert_eq!(s.merge(&[d(9.0, 1)]), 0);
        assert_eq!(s.version(NodeId(9), AVAILABLE_CAPACITY), Some(3));
    }

    #[test]
    fn owner_record_cannot_be_removed() {
        let mut s = store(1);
        assert!(!s.remove_record(NodeId(1)));
        assert!(s.record(NodeId(1)).is_some());
    }
}
