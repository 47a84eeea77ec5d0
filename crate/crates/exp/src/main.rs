use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use switchtt_exp::bench::{bench_csv, cmd_bench, format_bench};
use switchtt_exp::config::{self, ExperimentConfig};
use switchtt_exp::pipeline::{self, cmd_collect, cmd_eval, cmd_train, collect_dataset, format_stats, format_summary, load_dataset};
use switchtt_exp::plot::cmd_plot;

#[derive(Parser)]
#[command(name = "switchtt", version, about = "Offline multi-task RL experiments with switch-layer sequence models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; keys not given keep the preset's values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Starting point for the config: desk or smoke.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Override a config key, e.g. `--set epochs=3 --set 'seeds=[0,1]'`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let base = config::preset(&self.preset)?;
        match &self.config {
            Some(p) => ExperimentConfig::load(p, base, &self.overrides),
            None => ExperimentConfig::with_overrides(base, "", &self.overrides),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Collect a multi-task dataset with the scripted expert.
    Collect {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train the models the configured methods need.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        dataset: PathBuf,
        /// Run directory for checkpoints, metrics and the config snapshot.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Evaluate a run directory over the configured methods, tasks and seeds.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Override keys of the run's config snapshot (methods, eval_episodes, ...).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Where to write the result tables (defaults to the run directory).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Time dense and switch action models at each preset.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset to train on; collected from the config when absent.
        #[arg(long, short)]
        dataset: Option<PathBuf>,
        /// CSV report path.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Render loss curves and reward bars as SVG.
    Plot {
        /// Metrics CSVs written by `train`.
        #[arg(long)]
        metrics: Vec<PathBuf>,
        /// Eval summary CSV written by `eval`.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect { cfg, out } => {
            let cfg = cfg.load()?;
            let stats = cmd_collect(&cfg, &out)?;
            print!("{}", format_stats(&stats));
            println!("wrote {}", out.display());
        }
        Command::Train { cfg, dataset, out } => {
            let cfg = cfg.load()?;
            let manifest = cmd_train(&cfg, &dataset, &out)?;
            for m in &manifest.models {
                println!("{:<16} seed {:<4} {:>9} params  {}", m.name, m.seed, m.params, m.file);
            }
            println!("wrote {}", out.join(pipeline::METRICS_FILE).display());
        }
        Command::Eval { run, overrides, out } => {
            let cfg = pipeline::run_config(&run, &overrides)?;
            let report = cmd_eval(&cfg, &run, out.as_deref())?;
            print!("{}", format_summary(&report.summary));
            println!("(std is across seeds)");
        }
        Command::Bench { cfg, dataset, out } => {
            let cfg = cfg.load()?;
            let d = match dataset {
                Some(p) => load_dataset(&cfg, &p)?,
                None => collect_dataset(&cfg)?,
            };
            let rows = cmd_bench(&cfg, &d)?;
            print!("{}", format_bench(&rows));
            write(&out, &bench_csv(&rows))?;
        }
        Command::Plot { metrics, summary, out } => {
            for p in cmd_plot(&metrics, summary.as_deref(), &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
