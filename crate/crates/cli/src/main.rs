use std::path::PathBuf;
use std::process::ExitCode;

use blackout::experiment::{
    run_eval, run_gen_dataset, run_predict, run_simulate, run_stat_edges, run_train, ComponentPaths,
    ExperimentConfig, ExperimentError, Target,
};
use blackout::pipeline::Variant;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blackout", version, about = "Cascading-blackout simulation and blackout-size screening")]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Scenario {
    /// Hour id of the profile.
    #[arg(long)]
    hour: i64,
    /// Initially failed line ids, comma separated. Empty for none.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    lines: Vec<usize>,
}

#[derive(Args)]
struct Components {
    /// Statistical-edge count of the default GNN checkpoints.
    #[arg(long, default_value_t = 0)]
    edges: usize,
    /// Mixed-population GNN checkpoint
    #[arg(long)]
    mixed: Option<PathBuf>,
    /// Blackout-only GNN checkpoint
    #[arg(long)]
    blackout: Option<PathBuf>,
    /// GBT classifier file
    #[arg(long)]
    classifier: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one contingency and write its trace.
    Simulate(Scenario),
    /// Simulate every contingency on every profile.
    GenDataset,
    /// Rank co-failing bus pairs into statistical-edge files.
    StatEdges,
    /// Train one component: gnn-mixed, gnn-blackout or gbt.
    Train {
        target: String,
        /// Statistical edges added to the GNN topology.
        #[arg(long, default_value_t = 0)]
        edges: usize,
    },
    /// Evaluate a pipeline variant on the test split.
    Eval {
        /// R, CR or CVR.
        variant: String,
        #[command(flatten)]
        components: Components,
        /// Replace the classifier with the true labels.
        #[arg(long)]
        perfect_classifier: bool,
    },
    /// Estimate the blackout size of one scenario.
    Predict {
        variant: String,
        #[command(flatten)]
        scenario: Scenario,
        #[command(flatten)]
        components: Components,
    },
    /// Print configuration.
    Config {
        /// Print the full default configuration.
        #[arg(long)]
        dump_defaults: bool,
    },
}

fn variant(s: &str) -> Result<Variant, ExperimentError> {
    Variant::parse(s).ok_or_else(|| ExperimentError::Usage(format!("unknown variant {s:?}; expected R, CR or CVR")))
}

fn component_paths(c: Components, perfect_classifier: bool) -> ComponentPaths {
    ComponentPaths {
        mixed: c.mixed,
        blackout: c.blackout,
        classifier: c.classifier,
        edges: c.edges,
        perfect_classifier,
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    if let Command::Config { dump_defaults } = cli.command {
        let cfg = match (&cli.config, dump_defaults) {
            (Some(path), false) => ExperimentConfig::load(path)?,
            _ => ExperimentConfig::default(),
        };
        print!("{}", cfg.to_toml());
        return Ok(());
    }

    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.paths.out = out;
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(ExperimentError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ExperimentError::Usage(e.to_string()))?;
    }

    match cli.command {
        Command::Simulate(s) => {
            let result = run_simulate(&cfg, s.hour, &s.lines)?;
            println!("blackout_mw {}", result.blackout_mw);
            println!("rounds {}", result.rounds);
            println!("tripped {}", result.failure_trace.len());
        }
        Command::GenDataset => {
            let s = run_gen_dataset(&cfg)?;
            println!(
                "{} samples, {} blackouts, traces from {} profiles ({} scenarios)",
                s.n_samples,
                s.n_blackouts,
                s.trace_profiles.len(),
                s.n_traces
            );
        }
        Command::StatEdges => {
            for path in run_stat_edges(&cfg)? {
                println!("{}", path.display());
            }
        }
        Command::Train { target, edges } => {
            let target = Target::parse(&target).ok_or_else(|| {
                ExperimentError::Usage(format!("unknown target {target:?}; expected gnn-mixed, gnn-blackout or gbt"))
            })?;
            println!("{}", run_train(&cfg, target, edges)?.display());
        }
        Command::Eval { variant: v, components, perfect_classifier } => {
            let (report, path) = run_eval(&cfg, variant(&v)?, &component_paths(components, perfect_classifier))?;
            println!("{}", path.display());
            let mw = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3} MW"));
            println!(
                "{}: MAE {}, MedAE {}; blackout MedAE {}; non-blackout MAE {}",
                report.variant,
                mw(report.all.mae),
                mw(report.all.medae),
                mw(report.blackout.medae),
                mw(report.non_blackout.mae)
            );
        }
        Command::Predict { variant: v, scenario, components } => {
            let mw = run_predict(&cfg, variant(&v)?, &component_paths(components, false), scenario.hour, &scenario.lines)?;
            println!("{mw}");
        }
        Command::Config { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
