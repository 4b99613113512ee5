use std::collections::BTreeMap;
use std::fs;

use hfcs::experiment::{expand, run_preset, Preset};
use hfcs::ids::SimTime;
use hfcs::metrics::{aggregate, AggregateStats, MetricsReport};
use hfcs::sim::config::{ScenarioConfig, Variant};
use hfcs::sim::trace::TraceEvent;
use hfcs::sim::{generate_scenario, run, run_scenario, RunOptions, Simulation};

fn small(variant: Variant, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.variant = variant;
    cfg.seed = seed;
    cfg.duration_s = 300.0;
    cfg
}

#[test]
fn zero_duration_counts_only_registrations() {
    for v in Variant::ALL {
        let mut cfg = small(v, 4);
        cfg.duration_s = 0.0;
        let r = run_scenario(&cfg).unwrap();
        let p = &cfg.population;
        assert_eq!(r.registrations, (p.clients + p.edge + p.cnl) as u64);
        for (name, value) in r.values() {
            if !matches!(name, "registrations" | "node_count") {
                assert_eq!(value, 0.0, "{name} in a zero-duration {v:?} run");
            }
        }
    }
}

#[test]
fn no_clients_means_no_tasks_but_gossip() {
    let mut cfg = small(Variant::Hfcs, 2);
    cfg.population.clients = 0;
    let r = run_scenario(&cfg).unwrap();
    assert_eq!(r.tasks_issued, 0);
    assert_eq!(r.completed_tasks, 0);
    assert!(r.gossip_messages > 0);
}

#[test]
fn same_seed_same_report() {
    for v in Variant::ALL {
        let cfg = small(v, 9);
        assert_eq!(run_scenario(&cfg).unwrap(), run_scenario(&cfg).unwrap());
    }
}

#[test]
fn counters_are_consistent() {
    for v in Variant::ALL {
        for seed in 1..=3 {
            let r = run_scenario(&small(v, seed)).unwrap();
            assert_eq!(r.completed_tasks + r.in_flight_tasks + r.lost_tasks, r.tasks_issued, "{v:?} seed {seed}");
            assert!(r.failures_detected <= r.failures_triggered);
            assert!((0.0..=1.0).contains(&r.detection_rate()));
        }
    }
}

#[test]
fn tasks_drain_once_clients_stop() {
    // Broadcast nodes are permanently backlogged by metadata traffic, so only
    // the other two systems are expected to drain.
    for v in [Variant::Hfcs, Variant::Hierarchical] {
        for seed in 1..=3 {
            let cfg = small(v, seed);
            let dep = generate_scenario(&cfg, seed).unwrap();
            let stop = cfg.duration_s - cfg.tasks.duration_s.hi - 60.0;
            let opts = RunOptions { clients_stop_at: Some(stop), ..Default::default() };
            let r = Simulation::new(&dep, &cfg, opts).unwrap().finish().report;
            assert_eq!(r.in_flight_tasks, 0, "{v:?} seed {seed}");
        }
    }
}

#[test]
fn variants_share_deployment_and_workload() {
    let dep = generate_scenario(&small(Variant::Hfcs, 5), 5).unwrap();
    let issued: Vec<u64> = Variant::ALL.iter().map(|v| run(&dep, &small(*v, 5)).unwrap().tasks_issued).collect();
    assert!(issued.windows(2).all(|w| w[0] == w[1]), "{issued:?}");
}

#[test]
fn run_until_is_resumable() {
    let cfg = small(Variant::Hfcs, 6);
    let dep = generate_scenario(&cfg, 6).unwrap();
    let whole = Simulation::new(&dep, &cfg, RunOptions::default()).unwrap().finish();
    let mut parts = Simulation::new(&dep, &cfg, RunOptions::default()).unwrap();
    for t in [10.0, 55.5, 120.0, 250.0] {
        parts.run_until(SimTime::from_secs(t));
        assert_eq!(parts.now(), SimTime::from_secs(t));
    }
    assert_eq!(parts.finish(), whole);
}

#[test]
fn exported_run_parses_back() {
    let r = run_scenario(&small(Variant::Broadcast, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.export(dir.path()).unwrap();
    assert_eq!(MetricsReport::parse(dir.path()).unwrap(), r);
    let first = fs::read(dir.path().join("summary.csv")).unwrap();
    r.export(dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join("summary.csv")).unwrap(), first);
}

/// Mean and sample sd recomputed from the exported per-seed summaries.
fn recompute(dirs: &[std::path::PathBuf]) -> BTreeMap<String, (f64, f64)> {
    let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for d in dirs {
        let text = fs::read_to_string(d.join("summary.csv")).unwrap();
        for line in text.lines().skip(1) {
            let (k, v) = line.split_once(',').unwrap();
            cols.entry(k.to_string()).or_default().push(v.parse().unwrap());
        }
    }
    cols.into_iter()
        .map(|(k, xs)| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
            (k, (mean, sd))
        })
        .collect()
}

#[test]
fn preset_export_matches_recomputation() {
    let mut base = ScenarioConfig::default();
    base.duration_s = 120.0;
    let res = run_preset(Preset::Compare, &base, 1).unwrap();
    assert_eq!(res.cells.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    res.export(dir.path()).unwrap();
    let root = dir.path().join("compare");
    let table = fs::read_to_string(root.join("aggregate.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 * MetricsReport::METRICS.len());
    for cell in &res.cells {
        let cdir = root.join(&cell.value);
        let stats = AggregateStats::parse(&cdir.join("aggregate.csv")).unwrap();
        assert_eq!(stats, cell.stats);
        assert_eq!(stats.rows.len(), MetricsReport::METRICS.len());
        let seeds: Vec<_> = cell.seeds.iter().map(|s| cdir.join(format!("seed-{s}"))).collect();
        for (name, (mean, sd)) in recompute(&seeds) {
            let row = stats.get(&name).unwrap();
            assert!((row.mean - mean).abs() <= 1e-9 * mean.abs().max(1.0), "{name} mean");
            assert!((row.sd - sd).abs() <= 1e-9 * sd.abs().max(1.0), "{name} sd");
        }
        assert_eq!(aggregate(&cell.runs).unwrap(), cell.stats);
    }
}

#[test]
fn presets_expand_to_the_documented_matrices() {
    let base = ScenarioConfig::default();
    let values = |p| expand(p, &base).into_iter().map(|c| c.value).collect::<Vec<_>>();
    assert_eq!(values(Preset::Density), ["0.5", "2", "5", "10", "20"]);
    assert_eq!(values(Preset::Poolsize), ["10", "20", "30", "40", "unlimited", "global"]);
    assert_eq!(values(Preset::Compare), ["hfcs", "hierarchical", "broadcast"]);
}

#[test]
fn global_pool_puts_every_edge_node_together() {
    let cell = expand(Preset::Poolsize, &ScenarioConfig::default()).pop().unwrap();
    let cfg = cell.config;
    let dep = generate_scenario(&cfg, 1).unwrap();
    let sim = Simulation::new(&dep, &cfg, RunOptions::default()).unwrap();
    let sizes: Vec<usize> = sim.topology().pools().map(|p| p.members.len()).filter(|n| *n > 0).collect();
    assert_eq!(sizes, [cfg.population.edge]);
}

#[test]
fn capacity_is_conserved_throughout() {
    let cfg = small(Variant::Hfcs, 8);
    let dep = generate_scenario(&cfg, 8).unwrap();
    let mut sim = Simulation::new(&dep, &cfg, RunOptions::default()).unwrap();
    for step in 1..=60 {
        sim.run_until(SimTime::from_secs(step as f64 * 5.0));
        for n in sim.nodes().iter().filter(|n| n.capacity_total.is_finite()) {
            let sum = n.capacity_available + n.capacity_in_use();
            assert!((sum - n.capacity_total).abs() < 1e-6, "{:?} at {step}", n.id);
            assert!(n.capacity_available >= -1e-9 && n.capacity_available <= n.capacity_total + 1e-9);
        }
    }
}

#[test]
fn only_dead_nodes_are_detected_and_only_from_pools_of_three() {
    for d in [0.5, 5.0, 20.0] {
        for seed in 1..=4 {
            let mut cfg = ScenarioConfig::default();
            cfg.seed = seed;
            cfg.placement.max_node_distance = d;
            let dep = generate_scenario(&cfg, seed).unwrap();
            let out = Simulation::new(&dep, &cfg, RunOptions { trace: true, ..Default::default() }).unwrap().finish();
            let mut dead = std::collections::BTreeSet::new();
            for e in &out.trace.unwrap().events {
                match e {
                    TraceEvent::NodeFailed { node, .. } => {
                        dead.insert(*node);
                    }
                    TraceEvent::Detected { node, pool_size, .. } => {
                        assert!(dead.contains(node), "{node} detected while alive");
                        if let Some(size) = pool_size {
                            assert!(*size >= 3, "detection in a pool of {size}");
                        }
                    }
                    _ => {}
                }
            }
        }
    }
}
