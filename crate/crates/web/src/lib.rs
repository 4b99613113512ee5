//! Browser bindings. Each export takes a scenario file as TOML text and
//! returns JSON for the page in `www/` to draw.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use hfcs::geo::GeoCoordinate;
use hfcs::metrics::{MetricsReport, NodeRow};
use hfcs::sim::config::{ScenarioConfig, Variant};
use hfcs::sim::{generate_scenario, run, RunOptions, Simulation};

#[derive(Serialize)]
struct RunView {
    variant: &'static str,
    summary: Vec<(&'static str, f64)>,
    nodes: Vec<NodeRow>,
}

impl RunView {
    fn new(variant: Variant, r: MetricsReport) -> Self {
        RunView { variant: variant.as_str(), summary: r.values(), nodes: r.nodes }
    }
}

#[derive(Serialize)]
struct PoolView {
    level: u8,
    outline: Vec<[f64; 2]>,
    members: Vec<[f64; 2]>,
    supervisor: [f64; 2],
}

#[derive(Serialize)]
struct LayoutView {
    cloud: [f64; 2],
    cnls: Vec<[f64; 2]>,
    pools: Vec<PoolView>,
}

fn xy(p: GeoCoordinate) -> [f64; 2] {
    [p.lon, p.lat]
}

fn parse(config: &str) -> Result<ScenarioConfig, String> {
    ScenarioConfig::from_toml_str(config).map_err(|e| e.to_string())
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// One run of the configured variant.
pub fn simulate_json(config: &str) -> Result<String, String> {
    let cfg = parse(config)?;
    let dep = generate_scenario(&cfg, cfg.seed).map_err(|e| e.to_string())?;
    let report = run(&dep, &cfg).map_err(|e| e.to_string())?;
    json(&RunView::new(cfg.variant, report))
}

/// The same deployment and workload under all three systems.
pub fn compare_json(config: &str) -> Result<String, String> {
    let cfg = parse(config)?;
    let dep = generate_scenario(&cfg, cfg.seed).map_err(|e| e.to_string())?;
    let mut views = Vec::new();
    for v in Variant::ALL {
        let mut c = cfg.clone();
        c.variant = v;
        views.push(RunView::new(v, run(&dep, &c).map_err(|e| e.to_string())?));
    }
    json(&views)
}

/// Pools and supervisors right after registration.
pub fn layout_json(config: &str) -> Result<String, String> {
    let mut cfg = parse(config)?;
    cfg.variant = Variant::Hfcs;
    let dep = generate_scenario(&cfg, cfg.seed).map_err(|e| e.to_string())?;
    let sim = Simulation::new(&dep, &cfg, RunOptions::default()).map_err(|e| e.to_string())?;
    let topo = sim.topology();
    let at = |id| topo.position(id).map(xy).unwrap_or_default();
    let pools = topo
        .pools()
        .filter(|p| !p.members.is_empty())
        .map(|p| PoolView {
            level: p.cell.level(),
            outline: p.cell.vertices(topo.grid()).into_iter().map(xy).collect(),
            members: p.members.iter().map(|m| at(*m)).collect(),
            supervisor: at(p.supervisor),
        })
        .collect();
    json(&LayoutView { cloud: at(topo.cloud()), cnls: topo.cnls().map(|c| xy(c.position)).collect(), pools })
}

#[wasm_bindgen]
pub fn default_config() -> String {
    ScenarioConfig::default().to_toml_string()
}

#[wasm_bindgen]
pub fn simulate(config: &str) -> Result<String, JsValue> {
    simulate_json(config).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn compare(config: &str) -> Result<String, JsValue> {
    compare_json(config).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn layout(config: &str) -> Result<String, JsValue> {
    layout_json(config).map_err(|e| JsValue::from_str(&e))
}
