//! One logged, checkpointed run, interrupted halfway and resumed.
//! Uses MNIST from $DEEPGROK_DATA_DIR when set, synthetic digits otherwise.
//!
//! cargo run --release --example single_run -- runs/example

use std::path::PathBuf;

use deepgrok::dataset::{synthetic_digits, Mnist};
use deepgrok::report::{phase_report, summarize};
use deepgrok::runner::{run_experiment, MetricsFile, RunOptions, TrainConfig};

fn main() -> deepgrok::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "runs/example".into()),
    );
    let data = match Mnist::resolve_dir(None).and_then(Mnist::load_dir) {
        Ok(d) => d,
        Err(_) => synthetic_digits(2000, 1000, 0),
    };
    let config = TrainConfig {
        depth: 4,
        width: 64,
        n_train: 500,
        total_steps: 2000,
        checkpoint_every: 500,
        alpha: 1.0,
        tunnel_threshold: 48,
        ..TrainConfig::default()
    };
    let half = RunOptions {
        resume: false,
        stop_after: Some(1000),
    };
    let first = run_experiment(&config, &data, &out, &half)?;
    println!("stopped at step {}", first.steps_done);
    let rest = run_experiment(
        &config,
        &data,
        &out,
        &RunOptions {
            resume: true,
            stop_after: None,
        },
    )?;
    println!(
        "resumed from {:?}, completed {}",
        rest.resumed_from, rest.completed
    );

    let file = MetricsFile::read(&rest.metrics_path)?;
    println!("regime: {}", phase_report(&file)?.regime);
    print!("{}", summarize(&[(out.display().to_string(), &file)])?);
    Ok(())
}
