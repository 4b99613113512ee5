//! Node placement, capacities and the failure schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Continent, Range, ScenarioConfig};
use super::SimError;
use crate::geo::GeoCoordinate;
use crate::ids::{Layer, NodeId, SimTime};

/// RNG stream numbers. Each concern draws from its own stream of the master
/// seed so that changing one knob leaves the other draws untouched.
pub(crate) mod stream {
    pub const PLACEMENT: u64 = 1;
    pub const CAPACITY: u64 = 2;
    pub const FAILURES: u64 = 3;
    pub const GOSSIP: u64 = 4;
    pub const CLIENT_BASE: u64 = 1 << 32;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const MAX_TRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedNode {
    pub position: GeoCoordinate,
    pub capacity: f64,
    /// Index into the configured continents.
    pub continent: usize,
}

/// Everything a run needs before the first event: where nodes and clients
/// sit and what the nodes can carry. Node ids follow registration order:
/// the cloud is 0, CNL nodes come next, then edge nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub cloud: GeoCoordinate,
    pub cnls: Vec<PlacedNode>,
    pub edges: Vec<PlacedNode>,
    pub clients: Vec<GeoCoordinate>,
}

impl Deployment {
    pub fn cnl_id(&self, i: usize) -> NodeId {
        NodeId(1 + i as u32)
    }

    pub fn edge_id(&self, i: usize) -> NodeId {
        NodeId(1 + (self.cnls.len() + i) as u32)
    }

    pub fn node_count(&self) -> usize {
        1 + self.cnls.len() + self.edges.len()
    }

    pub fn layer_of(&self, id: NodeId) -> Layer {
        match id.0 as usize {
            0 => Layer::Cloud,
            i if i <= self.cnls.len() => Layer::Cnl,
            _ => Layer::Edge,
        }
    }
}

fn uniform(rng: &mut impl Rng, r: Range) -> f64 {
    if r.lo == r.hi {
        r.lo
    } else {
        rng.random_range(r.lo..=r.hi)
    }
}

fn uniform_in(rng: &mut impl Rng, c: &Continent) -> GeoCoordinate {
    GeoCoordinate::planar(uniform(rng, c.lon), uniform(rng, c.lat))
}

fn pick_continent(rng: &mut impl Rng, continents: &[Continent]) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (i, c) in continents.iter().enumerate() {
        acc += c.probability;
        if x < acc {
            return i;
        }
    }
    // Rounding left a sliver above the last cumulative bound.
    continents.iter().rposition(|c| c.probability > 0.0).unwrap_or(0)
}

/// Uniform point in the disc of radius `d` around `anchor`, rejection-sampled
/// into the continent rectangle.
fn near(rng: &mut impl Rng, anchor: GeoCoordinate, d: f64, c: &Continent) -> Result<GeoCoordinate, SimError> {
    for _ in 0..MAX_TRIES {
        let r = d * rng.random::<f64>().sqrt();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let p = GeoCoordinate::planar(anchor.lon + r * theta.cos(), anchor.lat + r * theta.sin());
        if c.contains(p) {
            return Ok(p);
        }
    }
    Err(SimError::Placement(format!(
        "could not place a node within {d} of ({anchor}) inside continent {} after {MAX_TRIES} tries",
        c.name
    )))
}

struct Placer<'a> {
    continents: &'a [Continent],
    d: f64,
    /// Positions placed so far, per continent.
    placed: Vec<Vec<GeoCoordinate>>,
}

impl Placer<'_> {
    fn place(&mut self, rng: &mut impl Rng) -> Result<(usize, GeoCoordinate), SimError> {
        let ci = pick_continent(rng, self.continents);
        let c = &self.continents[ci];
        let existing = &self.placed[ci];
        let p = if existing.len() < c.agglomerations as usize {
            uniform_in(rng, c)
        } else {
            let anchor = existing[rng.random_range(0..existing.len())];
            near(rng, anchor, self.d, c)?
        };
        self.placed[ci].push(p);
        Ok((ci, p))
    }
}

/// Places CNL nodes, edge nodes and clients. Nodes grow agglomerations: the
/// first few nodes of a continent seed clusters uniformly, every later node
/// lands within `max_node_distance` of a random existing node of the same
/// continent. Clients attach to nodes the same way without seeding clusters.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Deployment, SimError> {
    cfg.validate()?;
    let mut rng = rng_for(seed, stream::PLACEMENT);
    let mut caps = rng_for(seed, stream::CAPACITY);
    let continents = &cfg.placement.continents;
    let d = cfg.placement.max_node_distance;
    let mut placer = Placer { continents, d, placed: vec![Vec::new(); continents.len()] };

    let mut cnls = Vec::with_capacity(cfg.population.cnl);
    for _ in 0..cfg.population.cnl {
        let (continent, position) = placer.place(&mut rng)?;
        cnls.push(PlacedNode { position, capacity: uniform(&mut caps, cfg.capacity.cnl), continent });
    }
    let mut edges = Vec::with_capacity(cfg.population.edge);
    for _ in 0..cfg.population.edge {
        let (continent, position) = placer.place(&mut rng)?;
        edges.push(PlacedNode { position, capacity: uniform(&mut caps, cfg.capacity.edge), continent });
    }
    let mut clients = Vec::with_capacity(cfg.population.clients);
    for _ in 0..cfg.population.clients {
        let ci = pick_continent(&mut rng, continents);
        let c = &continents[ci];
        let nodes = &placer.placed[ci];
        let p = if nodes.is_empty() {
            uniform_in(&mut rng, c)
        } else {
            let anchor = nodes[rng.random_range(0..nodes.len())];
            near(&mut rng, anchor, d, c)?
        };
        clients.push(p);
    }
    Ok(Deployment { cloud: cfg.cloud_position(), cnls, edges, clients })
}

/// Draws victim layers and inter-failure gaps.
pub struct FailureProducer {
    rng: ChaCha8Rng,
    gap: Range,
    edge_probability: f64,
}

impl FailureProducer {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Self {
        Self { rng: rng_for(seed, stream::FAILURES), gap: cfg.failures.gap_s, edge_probability: cfg.failures.edge_probability }
    }

    pub fn next_gap(&mut self) -> f64 {
        uniform(&mut self.rng, self.gap)
    }

    pub fn next_layer(&mut self) -> Layer {
        if self.rng.random_bool(self.edge_probability) {
            Layer::Edge
        } else {
            Layer::Cnl
        }
    }

    fn pick(&mut self, pool: &mut Vec<NodeId>) -> NodeId {
        pool.remove(self.rng.random_range(0..pool.len()))
    }
}

/// Failure times and victims for a whole run. Victims are drawn among nodes
/// not failed earlier; if the drawn layer has no live node left the other
/// layer is used. The cloud never fails.
pub fn failure_schedule(cfg: &ScenarioConfig, dep: &Deployment, seed: u64) -> Vec<(SimTime, NodeId)> {
    if !cfg.failures.enabled {
        return Vec::new();
    }
    let mut producer = FailureProducer::new(cfg, seed);
    let mut edges: Vec<NodeId> = (0..dep.edges.len()).map(|i| dep.edge_id(i)).collect();
    let mut cnls: Vec<NodeId> = (0..dep.cnls.len()).map(|i| dep.cnl_id(i)).collect();
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += producer.next_gap();
        if t >= cfg.duration_s || (edges.is_empty() && cnls.is_empty()) {
            break;
        }
        let victim = match producer.next_layer() {
            Layer::Edge if !edges.is_empty() => producer.pick(&mut edges),
            Layer::Cnl if !cnls.is_empty() => producer.pick(&mut cnls),
            _ if !edges.is_empty() => producer.pick(&mut edges),
            _ => producer.pick(&mut cnls),
        };
        out.push((SimTime::from_secs(t), victim));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::Population;

    fn one_continent(d: f64) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.placement.max_node_distance = d;
        cfg.placement.continents =
            vec![Continent { name: "box".into(), lon: Range::new(0.0, 40.0), lat: Range::new(0.0, 40.0), probability: 1.0, agglomerations: 1 }];
        cfg
    }

    #[test]
    fn tiny_distance_makes_one_tight_clump() {
        let dep = generate_scenario(&one_continent(0.01), 3).unwrap();
        let all: Vec<GeoCoordinate> = dep.cnls.iter().chain(&dep.edges).map(|n| n.position).collect();
        for (i, p) in all.iter().enumerate().skip(1) {
            // Each node after the seed attached within d of an earlier node.
            let nn = all[..i].iter().map(|q| p.distance(q)).fold(f64::INFINITY, f64::min);
            assert!(nn <= 0.01 + 1e-12, "node {i} is {nn} from its nearest predecessor");
        }
    }

    #[test]
    fn single_node_lies_in_its_continent() {
        let mut cfg = ScenarioConfig::default();
        cfg.population = Population { clients: 0, edge: 1, cnl: 0 };
        let dep = generate_scenario(&cfg, 11).unwrap();
        let n = &dep.edges[0];
        assert!(cfg.placement.continents[n.continent].contains(n.position));
    }

    #[test]
    fn every_position_lies_in_its_continent() {
        let cfg = ScenarioConfig::default();
        let dep = generate_scenario(&cfg, 5).unwrap();
        for n in dep.cnls.iter().chain(&dep.edges) {
            assert!(cfg.placement.continents[n.continent].contains(n.position));
            assert!(cfg.capacity.edge.contains(n.capacity) || cfg.capacity.cnl.contains(n.capacity));
        }
        for c in &dep.clients {
            assert!(cfg.placement.continents.iter().any(|k| k.contains(*c)));
        }
    }

    #[test]
    fn same_seed_same_deployment() {
        let cfg = ScenarioConfig::default();
        assert_eq!(generate_scenario(&cfg, 42).unwrap(), generate_scenario(&cfg, 42).unwrap());
        assert_ne!(generate_scenario(&cfg, 42).unwrap(), generate_scenario(&cfg, 43).unwrap());
    }

    #[test]
    fn rectangle_too_small_is_an_error() {
        let mut cfg = one_continent(0.5);
        cfg.placement.continents[0].lon = Range::new(0.0, 0.0);
        cfg.placement.continents[0].lat = Range::new(0.0, 0.0);
        assert!(matches!(generate_scenario(&cfg, 1), Err(SimError::Placement(_))));
    }

    #[test]
    fn layer_draws_are_ninety_percent_edge() {
        let mut p = FailureProducer::new(&ScenarioConfig::default(), 8);
        let edge = (0..10_000).filter(|_| p.next_layer() == Layer::Edge).count();
        let frac = edge as f64 / 10_000.0;
        assert!((frac - 0.9).abs() <= 0.01, "edge fraction {frac}");
    }

    #[test]
    fn gaps_stay_in_bounds_and_cloud_never_fails() {
        let mut cfg = ScenarioConfig::default();
        cfg.duration_s = 1e6;
        let dep = generate_scenario(&cfg, 2).unwrap();
        let sched = failure_schedule(&cfg, &dep, 2);
        assert_eq!(sched.len(), dep.cnls.len() + dep.edges.len());
        let mut prev = 0.0;
        for (t, v) in &sched {
            let gap = t.as_secs() - prev;
            assert!((50.0 - 1e-6..=500.0 + 1e-6).contains(&gap), "gap {gap}");
            prev = t.as_secs();
            assert_ne!(*v, NodeId(0));
        }
    }
}
