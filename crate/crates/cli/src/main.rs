use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hfcs::experiment::{run_preset, Preset, PresetResult, Scale};
use hfcs::metrics::MetricsReport;
use hfcs::sim::config::{ScenarioConfig, Variant};
use hfcs::sim::run_scenario;

#[derive(Parser)]
#[command(name = "hfcs", version, about = "Fog metadata exchange simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and export its metrics.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long, env = "HFCS_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Run a named experiment over five seeds per parameter value.
    Preset {
        #[arg(value_enum)]
        name: PresetArg,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        /// First of the five seeds.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Base scenario the preset varies; the defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "HFCS_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Print the default scenario file.
    Config {
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Hfcs,
    Hierarchical,
    Broadcast,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Hfcs => Variant::Hfcs,
            VariantArg::Hierarchical => Variant::Hierarchical,
            VariantArg::Broadcast => Variant::Broadcast,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Density,
    Poolsize,
    Compare,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Density => Preset::Density,
            PresetArg::Poolsize => Preset::Poolsize,
            PresetArg::Compare => Preset::Compare,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }
    }
}

type Error = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run { config, seed, variant, out } => {
            let mut cfg = ScenarioConfig::from_path(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(v) = variant {
                cfg.variant = v.into();
            }
            let report = run_scenario(&cfg)?;
            report.export(&out)?;
            print_report(&report);
            println!("wrote {}", out.display());
        }
        Command::Preset { name, scale, seed, variant, config, out } => {
            let mut base = match config {
                Some(p) => ScenarioConfig::from_path(&p)?,
                None => ScenarioConfig::default(),
            };
            Scale::from(scale).apply(&mut base);
            if let Some(v) = variant {
                base.variant = v.into();
            }
            let result = run_preset(name.into(), &base, seed)?;
            result.export(&out)?;
            print_preset(&result);
            println!("wrote {}", out.join(result.preset.as_str()).display());
        }
        Command::Config { scale } => print!("{}", Scale::from(scale).base_config().to_toml_string()),
    }
    Ok(())
}

fn print_report(r: &MetricsReport) {
    for (name, value) in r.values() {
        println!("{name:<28} {value}");
    }
}

const COLUMNS: [&str; 6] =
    ["mean_messages_per_node", "completed_tasks", "redirected_tasks", "escalated_tasks", "detection_rate", "metadata_messages"];

fn print_preset(res: &PresetResult) {
    print!("{:<10}", res.preset.as_str());
    for c in COLUMNS {
        print!(" {c:>24}");
    }
    println!();
    for cell in &res.cells {
        print!("{:<10}", cell.value);
        for c in COLUMNS {
            let s = cell.stats.get(c).expect("known metric");
            let digits = if s.mean.abs() < 10.0 { 3 } else { 1 };
            print!(" {:>24}", format!("{:.digits$} ± {:.digits$}", s.mean, s.sd));
        }
        println!();
    }
}
