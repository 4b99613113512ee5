//! Scenario configuration, read from TOML.
//!
//! Every field has a default, so a config file only needs the keys it
//! changes. Defaults describe the desk-scale scenario: 150 clients, 100 edge
//! nodes, 5 CNL nodes and the cloud for 900 logical seconds.
//!
//! ```toml
//! variant = "hfcs"          # hfcs | hierarchical | broadcast
//! seed = 7
//! duration_s = 900.0
//!
//! [population]
//! clients = 150
//! edge = 100
//! cnl = 5
//!
//! [placement]
//! max_node_distance = 0.5
//! cloud = { lon = 8.7, lat = 50.1 }     # optional
//!
//! [[placement.continents]]
//! name = "europe"
//! lon = [-10.0, 30.0]
//! lat = [36.0, 60.0]
//! probability = 1.0
//! agglomerations = 3
//!
//! [pools]
//! max_members = 30          # or "unlimited"
//! base_size = 5.0
//! ```
//!
//! The remaining sections are `[gossip]`, `[failure_detection]`, `[tasks]`,
//! `[clients]`, `[capacity]`, `[failures]`, `[network]` and `[metadata]`; see
//! the field docs below.

use std::path::Path;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::geo::GeoCoordinate;
use crate::topology::PoolLimit;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which metadata-exchange system a run simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Hfcs,
    Hierarchical,
    Broadcast,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Hfcs, Variant::Hierarchical, Variant::Broadcast];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Hfcs => "hfcs",
            Variant::Hierarchical => "hierarchical",
            Variant::Broadcast => "broadcast",
        }
    }
}

impl FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hfcs" => Ok(Variant::Hfcs),
            "hierarchical" => Ok(Variant::Hierarchical),
            "broadcast" => Ok(Variant::Broadcast),
            other => Err(ConfigError::Invalid(format!("unknown variant `{other}`"))),
        }
    }
}

/// Pool member limit as written in config files: a count or `"unlimited"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxMembers(pub PoolLimit);

impl Serialize for MaxMembers {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(n) => s.serialize_u64(n as u64),
            None => s.serialize_str("unlimited"),
        }
    }
}

impl<'de> Deserialize<'de> for MaxMembers {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(de::Error::custom("max_members must be positive")),
            Raw::Count(n) => Ok(MaxMembers(Some(n as usize))),
            Raw::Word(w) if w == "unlimited" => Ok(MaxMembers(None)),
            Raw::Word(w) => Err(de::Error::custom(format!("expected a count or \"unlimited\", got \"{w}\""))),
        }
    }
}

/// Closed interval `[lo, hi]` drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    fn check(&self, what: &str) -> Result<(), ConfigError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(ConfigError::Invalid(format!("{what}: need lo <= hi, got [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

impl From<[f64; 2]> for Range {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.lo, r.hi]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Continent {
    pub name: String,
    pub lon: Range,
    pub lat: Range,
    /// Probability that a node is placed on this continent.
    pub probability: f64,
    /// Number of agglomeration seeds; later nodes attach near existing ones.
    pub agglomerations: u32,
}

impl Continent {
    pub fn contains(&self, p: GeoCoordinate) -> bool {
        self.lon.contains(p.lon) && self.lat.contains(p.lat)
    }

    pub fn center(&self) -> GeoCoordinate {
        GeoCoordinate::planar((self.lon.lo + self.lon.hi) / 2.0, (self.lat.lo + self.lat.hi) / 2.0)
    }
}

fn continent(name: &str, lon: [f64; 2], lat: [f64; 2], probability: f64, agglomerations: u32) -> Continent {
    Continent { name: name.into(), lon: lon.into(), lat: lat.into(), probability, agglomerations }
}

pub fn default_continents() -> Vec<Continent> {
    vec![
        continent("north_america", [-125.0, -70.0], [25.0, 50.0], 0.25, 3),
        continent("south_america", [-75.0, -40.0], [-35.0, 5.0], 0.10, 3),
        continent("europe", [-10.0, 30.0], [36.0, 60.0], 0.30, 3),
        continent("africa", [-15.0, 40.0], [-30.0, 30.0], 0.05, 3),
        continent("asia", [60.0, 140.0], [10.0, 50.0], 0.25, 3),
        continent("oceania", [115.0, 153.0], [-38.0, -15.0], 0.05, 3),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Population {
    pub clients: usize,
    pub edge: usize,
    pub cnl: usize,
}

impl Default for Population {
    fn default() -> Self {
        Self { clients: 150, edge: 100, cnl: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Placement {
    /// Maximum distance `d` between a node and the existing node it attaches to.
    pub max_node_distance: f64,
    /// Cloud position; defaults to the center of the first continent.
    pub cloud: Option<GeoCoordinate>,
    pub continents: Vec<Continent>,
}

impl Default for Placement {
    fn default() -> Self {
        Self { max_node_distance: 0.5, cloud: None, continents: default_continents() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pools {
    pub max_members: MaxMembers,
    /// Level-0 cell spacing in degrees.
    pub base_size: f64,
}

impl Default for Pools {
    fn default() -> Self {
        Self { max_members: MaxMembers(Some(30)), base_size: crate::geo::DEFAULT_BASE_SIZE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gossip {
    pub interval_s: f64,
    /// Sessions a node initiates per interval.
    pub fanout: usize,
    /// How long an initiator waits for the Ack before suspecting the partner.
    pub reply_deadline_s: f64,
}

impl Default for Gossip {
    fn default() -> Self {
        Self { interval_s: 3.0, fanout: 3, reply_deadline_s: 6.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureDetection {
    /// Reports older than this are forgotten.
    pub report_window_s: f64,
    pub probe_timeout_s: f64,
    /// Distinct reporters needed before the supervisor probes.
    pub min_reporters: usize,
}

impl Default for FailureDetection {
    fn default() -> Self {
        Self { report_window_s: 10.0, probe_timeout_s: 3.0, min_reporters: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tasks {
    /// Peers queried before escalating (initial attempt plus repeats).
    pub redirect_attempts: usize,
    pub redirect_timeout_s: f64,
    pub capacity: Range,
    pub duration_s: Range,
}

impl Default for Tasks {
    fn default() -> Self {
        Self {
            redirect_attempts: 3,
            redirect_timeout_s: 1.0,
            capacity: Range::new(1.0, 10.0),
            duration_s: Range::new(1.0, 10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Clients {
    pub step_interval_s: Range,
    /// Per-axis movement bound per step, in degrees.
    pub max_move: f64,
}

impl Default for Clients {
    fn default() -> Self {
        Self { step_interval_s: Range::new(1.0, 5.0), max_move: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Capacity {
    pub edge: Range,
    pub cnl: Range,
}

impl Default for Capacity {
    fn default() -> Self {
        Self { edge: Range::new(20.0, 60.0), cnl: Range::new(200.0, 600.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Failures {
    pub enabled: bool,
    pub gap_s: Range,
    pub edge_probability: f64,
}

impl Default for Failures {
    fn default() -> Self {
        Self { enabled: true, gap_s: Range::new(50.0, 500.0), edge_probability: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Network {
    /// Between edge nodes and between clients and edge nodes.
    pub intra_pool_latency_s: f64,
    /// Any hop touching a CNL node but not the cloud.
    pub pool_cnl_latency_s: f64,
    /// Any hop touching the cloud.
    pub cnl_cloud_latency_s: f64,
    /// Processing time a non-cloud node spends per metadata message sent or
    /// received.
    /// Task intake waits behind this backlog.
    pub message_cost_s: f64,
}

impl Default for Network {
    fn default() -> Self {
        Self {
            intra_pool_latency_s: 0.010,
            pool_cnl_latency_s: 0.050,
            cnl_cloud_latency_s: 0.100,
            message_cost_s: 0.020,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MetadataFields {
    /// Dynamic fields carried besides `available_capacity` (for example
    /// `bandwidth`); gossiped, never acted on.
    pub extra_dynamic_fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub variant: Variant,
    pub seed: u64,
    pub duration_s: f64,
    pub population: Population,
    pub placement: Placement,
    pub pools: Pools,
    pub gossip: Gossip,
    pub failure_detection: FailureDetection,
    pub tasks: Tasks,
    pub clients: Clients,
    pub capacity: Capacity,
    pub failures: Failures,
    pub network: Network,
    pub metadata: MetadataFields,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Hfcs,
            seed: 1,
            duration_s: 900.0,
            population: Population::default(),
            placement: Placement::default(),
            pools: Pools::default(),
            gossip: Gossip::default(),
            failure_detection: FailureDetection::default(),
            tasks: Tasks::default(),
            clients: Clients::default(),
            capacity: Capacity::default(),
            failures: Failures::default(),
            network: Network::default(),
            metadata: MetadataFields::default(),
        }
    }
}

impl ScenarioConfig {
    /// Full-size population: 1500 clients, 1000 edge nodes, 50 CNL nodes.
    pub fn paper_scale() -> Self {
        let mut c = Self::default();
        c.population = Population { clients: 1500, edge: 1000, cnl: 50 };
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn max_members(&self) -> PoolLimit {
        self.pools.max_members.0
    }

    pub fn cloud_position(&self) -> GeoCoordinate {
        self.placement
            .cloud
            .or_else(|| self.placement.continents.first().map(Continent::center))
            .unwrap_or(GeoCoordinate::planar(0.0, 0.0))
    }

    pub fn max_latency_s(&self) -> f64 {
        let n = &self.network;
        n.intra_pool_latency_s.max(n.pool_cnl_latency_s).max(n.cnl_cloud_latency_s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration_s must be >= 0, got {}", self.duration_s));
        }
        let p = &self.placement;
        if !(p.max_node_distance > 0.0 && p.max_node_distance.is_finite()) {
            return bad(format!("max_node_distance must be > 0, got {}", p.max_node_distance));
        }
        if p.continents.is_empty() {
            return bad("at least one continent is required".into());
        }
        let mut total = 0.0;
        for c in &p.continents {
            c.lon.check(&format!("continent {} lon", c.name))?;
            c.lat.check(&format!("continent {} lat", c.name))?;
            if GeoCoordinate::new(c.lon.lo, c.lat.lo).is_err() || GeoCoordinate::new(c.lon.hi, c.lat.hi).is_err() {
                return bad(format!("continent {} lies outside the lon/lat ranges", c.name));
            }
            if !(0.0..=1.0).contains(&c.probability) {
                return bad(format!("continent {} probability must be in [0, 1]", c.name));
            }
            if c.agglomerations == 0 {
                return bad(format!("continent {} needs at least one agglomeration", c.name));
            }
            total += c.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("continent probabilities sum to {total}, expected 1"));
        }
        if let Some(c) = p.cloud {
            GeoCoordinate::new(c.lon, c.lat).map_err(|e| ConfigError::Invalid(format!("cloud: {e}")))?;
        }
        if !(self.pools.base_size > 0.0 && self.pools.base_size.is_finite()) {
            return bad("pools.base_size must be > 0".into());
        }
        let g = &self.gossip;
        if !(g.interval_s > 0.0) || g.fanout == 0 || !(g.reply_deadline_s > 0.0) {
            return bad("gossip interval, fanout and reply deadline must be positive".into());
        }
        let f = &self.failure_detection;
        if !(f.report_window_s > 0.0 && f.probe_timeout_s > 0.0) || f.min_reporters == 0 {
            return bad("failure detection window, probe timeout and reporter count must be positive".into());
        }
        let t = &self.tasks;
        t.capacity.check("tasks.capacity")?;
        t.duration_s.check("tasks.duration_s")?;
        if t.capacity.lo <= 0.0 || t.duration_s.lo <= 0.0 {
            return bad("task capacity and duration must be > 0".into());
        }
        if t.redirect_timeout_s <= 2.0 * self.max_latency_s() {
            return bad("tasks.redirect_timeout_s must exceed one round trip".into());
        }
        self.clients.step_interval_s.check("clients.step_interval_s")?;
        if self.clients.step_interval_s.lo <= 0.0 || self.clients.max_move < 0.0 {
            return bad("client step interval must be > 0 and max_move >= 0".into());
        }
        self.capacity.edge.check("capacity.edge")?;
        self.capacity.cnl.check("capacity.cnl")?;
        if self.capacity.edge.lo < 0.0 || self.capacity.cnl.lo < 0.0 {
            return bad("capacities must be >= 0".into());
        }
        self.failures.gap_s.check("failures.gap_s")?;
        if self.failures.gap_s.lo <= 0.0 || !(0.0..=1.0).contains(&self.failures.edge_probability) {
            return bad("failure gaps must be > 0 and edge_probability in [0, 1]".into());
        }
        let n = &self.network;
        for v in [n.intra_pool_latency_s, n.pool_cnl_latency_s, n.cnl_cloud_latency_s, n.message_cost_s] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("network latencies and message cost must be >= 0".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        let back = ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ScenarioConfig::from_toml_str(
            r#"
            variant = "broadcast"
            seed = 9
            [pools]
            max_members = "unlimited"
            [population]
            edge = 12
            "#,
        )
        .unwrap();
        assert_eq!(c.variant, Variant::Broadcast);
        assert_eq!(c.max_members(), None);
        assert_eq!(c.population.edge, 12);
        assert_eq!(c.population.cnl, 5);
        assert_eq!(c.gossip.interval_s, 3.0);
    }

    #[test]
    fn schema_errors_are_reported() {
        for bad in [
            "variant = \"mesh\"",
            "[pools]\nmax_members = 0",
            "[pools]\nmax_members = \"lots\"",
            "[placement]\nmax_node_distance = 0.0",
            "[gossip]\nfanout = 0",
            "unknown_key = 1",
            "[[placement.continents]]\nname = \"x\"\nlon = [0.0, 1.0]\nlat = [0.0, 1.0]\nprobability = 0.5\nagglomerations = 1",
        ] {
            assert!(ScenarioConfig::from_toml_str(bad).is_err(), "accepted: {bad}");
        }
    }
}
