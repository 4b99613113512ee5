//! The named experiment matrices. Each preset sweeps one parameter and runs
//! every value over five consecutive seeds; cells run in parallel.
//!
//! Export layout under the output directory:
//!
//! ```text
//! <preset>/aggregate.csv          value,metric,mean,sd,n
//! <preset>/<value>/aggregate.csv  metric,mean,sd,n
//! <preset>/<value>/seed-<s>/{nodes,summary}.csv
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::metrics::{aggregate, AggregateStats, MetricsError, MetricsReport};
use crate::sim::config::{MaxMembers, ScenarioConfig, Variant};
use crate::sim::trace::Trace;
use crate::sim::{generate_scenario, RunOptions, RunOutput, SimError, Simulation};

pub const SEEDS_PER_VALUE: u64 = 5;

/// Node distances swept by the density preset, in degrees.
pub const DENSITY_D: [f64; 5] = [0.5, 2.0, 5.0, 10.0, 20.0];
pub const POOL_LIMITS: [Option<usize>; 4] = [Some(10), Some(20), Some(30), Some(40)];
/// Cell spacing that puts every continent into one level-0 cell.
pub const GLOBAL_BASE_SIZE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Density,
    Poolsize,
    Compare,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Density, Preset::Poolsize, Preset::Compare];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Density => "density",
            Preset::Poolsize => "poolsize",
            Preset::Compare => "compare",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown {what} `{name}`")]
pub struct UnknownName {
    what: &'static str,
    name: String,
}

impl FromStr for Preset {
    type Err = UnknownName;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownName { what: "preset", name: s.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl Scale {
    pub fn base_config(self) -> ScenarioConfig {
        match self {
            Scale::Desk => ScenarioConfig::default(),
            Scale::Paper => ScenarioConfig::paper_scale(),
        }
    }

    /// Scales a desk-sized config; paper scale has ten times the population.
    pub fn apply(self, cfg: &mut ScenarioConfig) {
        if self == Scale::Paper {
            let p = &mut cfg.population;
            p.clients *= 10;
            p.edge *= 10;
            p.cnl *= 10;
        }
    }
}

impl FromStr for Scale {
    type Err = UnknownName;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(UnknownName { what: "scale", name: s.to_string() }),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One parameter value of a preset.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub value: String,
    pub config: ScenarioConfig,
}

/// The parameter values of `preset`, each applied on top of `base`.
pub fn expand(preset: Preset, base: &ScenarioConfig) -> Vec<Cell> {
    let with = |value: String, f: &dyn Fn(&mut ScenarioConfig)| {
        let mut config = base.clone();
        f(&mut config);
        Cell { value, config }
    };
    match preset {
        Preset::Density => DENSITY_D
            .iter()
            .map(|d| with(d.to_string(), &|c| c.placement.max_node_distance = *d))
            .collect(),
        Preset::Poolsize => {
            let mut cells: Vec<Cell> = POOL_LIMITS
                .iter()
                .chain(&[None])
                .map(|m| {
                    let value = m.map_or("unlimited".to_string(), |m| m.to_string());
                    with(value, &|c| c.pools.max_members = MaxMembers(*m))
                })
                .collect();
            cells.push(with("global".to_string(), &|c| {
                c.pools.max_members = MaxMembers(None);
                c.pools.base_size = GLOBAL_BASE_SIZE;
            }));
            cells
        }
        Preset::Compare => Variant::ALL
            .iter()
            .map(|v| {
                with(v.as_str().to_string(), &|c| {
                    c.placement.max_node_distance = 0.5;
                    c.pools.max_members = MaxMembers(Some(30));
                    c.variant = *v;
                })
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub value: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<MetricsReport>,
    pub stats: AggregateStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetResult {
    pub preset: Preset,
    pub cells: Vec<CellResult>,
}

impl PresetResult {
    pub fn cell(&self, value: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.value == value)
    }

    pub fn export(&self, dir: &Path) -> Result<(), MetricsError> {
        let root = dir.join(self.preset.as_str());
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| MetricsError::Io { path, source }
        };
        fs::create_dir_all(&root).map_err(io(&root))?;
        let mut table = String::from("value,metric,mean,sd,n\n");
        for cell in &self.cells {
            let cdir = root.join(&cell.value);
            for (seed, run) in cell.seeds.iter().zip(&cell.runs) {
                run.export(&cdir.join(format!("seed-{seed}")))?;
            }
            cell.stats.export(&cdir.join("aggregate.csv"))?;
            for r in &cell.stats.rows {
                table.push_str(&format!("{},{},{:?},{:?},{}\n", cell.value, r.metric, r.mean, r.sd, r.n));
            }
        }
        let path = root.join("aggregate.csv");
        fs::write(&path, table).map_err(io(&path))
    }
}

/// Runs every value of `preset` over seeds `first_seed..first_seed + 5`.
pub fn run_preset(preset: Preset, base: &ScenarioConfig, first_seed: u64) -> Result<PresetResult, ExperimentError> {
    Ok(run_matrix(preset, base, first_seed, false)?.0)
}

/// Same as [`run_preset`], also returning each run's trace, grouped like
/// `cells[i].runs`.
pub fn run_preset_traced(
    preset: Preset,
    base: &ScenarioConfig,
    first_seed: u64,
) -> Result<(PresetResult, Vec<Vec<Trace>>), ExperimentError> {
    run_matrix(preset, base, first_seed, true)
}

fn run_matrix(
    preset: Preset,
    base: &ScenarioConfig,
    first_seed: u64,
    trace: bool,
) -> Result<(PresetResult, Vec<Vec<Trace>>), ExperimentError> {
    let cells = expand(preset, base);
    let seeds: Vec<u64> = (first_seed..first_seed + SEEDS_PER_VALUE).collect();
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|i| seeds.iter().map(move |s| (i, *s))).collect();
    let outputs: Vec<RunOutput> = jobs
        .par_iter()
        .map(|(i, seed)| {
            let mut cfg = cells[*i].config.clone();
            cfg.seed = *seed;
            let dep = generate_scenario(&cfg, cfg.seed)?;
            Ok(Simulation::new(&dep, &cfg, RunOptions { trace, ..Default::default() })?.finish())
        })
        .collect::<Result<_, SimError>>()?;
    let mut outputs = outputs.into_iter();
    let mut traces = Vec::new();
    let mut results = Vec::new();
    for cell in cells {
        let (runs, cell_traces): (Vec<MetricsReport>, Vec<Option<Trace>>) =
            outputs.by_ref().take(seeds.len()).map(|o| (o.report, o.trace)).unzip();
        let stats = aggregate(&runs)?;
        traces.push(cell_traces.into_iter().flatten().collect());
        results.push(CellResult { value: cell.value, seeds: seeds.clone(), runs, stats });
    }
    Ok((PresetResult { preset, cells: results }, traces))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_sizes() {
        let base = ScenarioConfig::default();
        assert_eq!(expand(Preset::Density, &base).len(), 5);
        assert_eq!(expand(Preset::Poolsize, &base).len(), 6);
        let cmp = expand(Preset::Compare, &base);
        let variants: Vec<Variant> = cmp.iter().map(|c| c.config.variant).collect();
        assert_eq!(variants, Variant::ALL);
    }

    #[test]
    fn global_pool_is_unlimited_and_coarse() {
        let cells = expand(Preset::Poolsize, &ScenarioConfig::default());
        let g = &cells.last().unwrap().config;
        assert_eq!(g.pools.max_members, MaxMembers(None));
        assert_eq!(g.pools.base_size, GLOBAL_BASE_SIZE);
    }

    #[test]
    fn names_parse() {
        for p in Preset::ALL {
            assert_eq!(p.as_str().parse::<Preset>().unwrap(), p);
        }
        assert!("sweep".parse::<Preset>().is_err());
        assert_eq!("paper".parse::<Scale>().unwrap(), Scale::Paper);
        assert!("huge".parse::<Scale>().is_err());
    }

    #[test]
    fn paper_scale_is_ten_times_desk() {
        let (d, p) = (Scale::Desk.base_config(), Scale::Paper.base_config());
        assert_eq!(p.population.clients, 10 * d.population.clients);
        assert_eq!(p.population.edge, 10 * d.population.edge);
        assert_eq!(p.population.cnl, 10 * d.population.cnl);
        assert_eq!(p.duration_s, d.duration_s);
        let mut scaled = d.clone();
        Scale::Paper.apply(&mut scaled);
        assert_eq!(scaled, p);
    }
}
