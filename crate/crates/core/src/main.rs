use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use deepgrok::dataset::Mnist;
use deepgrok::report;
use deepgrok::runner::{
    run_experiment, run_sweep, MetricsFile, RunOptions, SweepOptions, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "deepgrok",
    about = "Train deep MLPs under the grokking recipe and analyze their feature ranks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and log metrics.
    Run(RunArgs),
    /// Run every configuration of a preset grid.
    Sweep(SweepArgs),
    /// Classify runs and print a summary table.
    Analyze { metrics: Vec<PathBuf> },
    /// Render run figures (and a norm comparison when given several runs).
    Plot {
        metrics: Vec<PathBuf>,
        /// Hidden layer for the rank overlay; defaults to the last one.
        #[arg(long)]
        layer: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with TrainConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed_init: Option<u64>,
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_probe: Option<u64>,
    /// Probe every k-th evaluation; 0 disables probes.
    #[arg(long)]
    probe_every: Option<usize>,
    #[arg(long)]
    probe_steps: Option<usize>,
    #[arg(long)]
    rank_batch: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    tunnel_threshold: Option<usize>,
    #[arg(long, default_value = "runs/latest")]
    out_dir: PathBuf,
    /// MNIST directory; falls back to $DEEPGROK_DATA_DIR.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// depth_grid, wd_grid or data_grid.
    preset: String,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Base config the grid is applied on top of.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl RunArgs {
    fn to_config(&self) -> deepgrok::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! apply {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        apply!(
            depth => depth, width => width, alpha => alpha, weight_decay => weight_decay,
            lr => lr, steps => total_steps, n_train => n_train, seed_init => seed_init,
            seed_data => seed_data, seed_probe => seed_probe, probe_every => probe_every,
            probe_steps => probe_steps, rank_batch => rank_batch,
            checkpoint_every => checkpoint_every, tunnel_threshold => tunnel_threshold,
        );
        if self.batch_size.is_some() {
            c.batch_size = self.batch_size;
        }
        c.validate()?;
        Ok(c)
    }
}

fn load_data(dir: Option<&Path>) -> deepgrok::Result<Mnist> {
    Mnist::load_dir(Mnist::resolve_dir(dir)?)
}

fn read_all(paths: &[PathBuf]) -> deepgrok::Result<Vec<(PathBuf, MetricsFile)>> {
    paths
        .iter()
        .map(|p| Ok((p.clone(), MetricsFile::read(p)?)))
        .collect()
}

fn execute(cli: Cli) -> deepgrok::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = args.to_config()?;
            let data = load_data(args.data_dir.as_deref())?;
            let options = RunOptions {
                resume: args.resume,
                stop_after: None,
            };
            let summary = run_experiment(&config, &data, &args.out_dir, &options)?;
            println!("{}", summary.metrics_path.display());
        }
        Command::Sweep(args) => {
            let base = match &args.config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            let data = load_data(args.data_dir.as_deref())?;
            let options = SweepOptions {
                base,
                workers: args.workers,
            };
            let manifest = run_sweep(&args.preset, &data, &args.out_dir, &options)?;
            for entry in &manifest.runs {
                println!(
                    "{}\t{:?}\t{}",
                    entry.name,
                    entry.status,
                    entry.metrics.display()
                );
            }
        }
        Command::Analyze { metrics } => {
            let runs = read_all(&metrics)?;
            for (path, file) in &runs {
                let phase = report::phase_report(file)?;
                let out = report::sibling_path(path, "phase.json");
                std::fs::write(&out, serde_json::to_string_pretty(&phase)?).map_err(|e| {
                    deepgrok::Error::Io {
                        path: out.clone(),
                        source: e,
                    }
                })?;
            }
            let labelled: Vec<_> = runs
                .iter()
                .map(|(p, f)| (p.display().to_string(), f))
                .collect();
            print!("{}", report::summarize(&labelled)?);
        }
        Command::Plot { metrics, layer } => {
            let runs = read_all(&metrics)?;
            for (path, file) in &runs {
                let out = report::sibling_path(path, "figure.svg");
                write_text(&out, &report::render_run_figure(file))?;
                println!("{}", out.display());
            }
            if runs.len() >= 2 {
                let files: Vec<&MetricsFile> = runs.iter().map(|(_, f)| f).collect();
                let out = report::sibling_path(&runs[0].0, "norm-comparison.svg");
                write_text(&out, &report::render_norm_comparison(&files, layer)?)?;
                println!("{}", out.display());
            }
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> deepgrok::Result<()> {
    std::fs::write(path, text).map_err(|e| deepgrok::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
