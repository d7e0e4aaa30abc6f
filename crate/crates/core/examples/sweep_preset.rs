//! Runs a preset grid into a directory, resuming anything unfinished.
//!
//! cargo run --release --example sweep_preset -- desk_grid runs/desk [workers]
//!
//! MNIST is read from $DEEPGROK_DATA_DIR.

use std::path::PathBuf;

use deepgrok::dataset::Mnist;
use deepgrok::runner::{run_sweep, SweepOptions};

fn main() -> deepgrok::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = args.first().map_or("desk_grid", String::as_str);
    let out = PathBuf::from(args.get(1).map_or("runs/desk", String::as_str));
    let workers = args.get(2).and_then(|w| w.parse().ok()).unwrap_or(1);
    let data = Mnist::load_dir(Mnist::resolve_dir(None)?)?;
    let options = SweepOptions {
        workers,
        ..SweepOptions::default()
    };
    let manifest = run_sweep(preset, &data, &out, &options)?;
    for run in &manifest.runs {
        println!("{:<24} {:?}", run.name, run.status);
    }
    Ok(())
}
