//! Preset grids of runs, executed into one directory with a manifest.
//!
//! Each run lives in `<out_dir>/<name>/`. Completed runs are skipped and
//! interrupted ones resume from their checkpoint, so re-invoking a sweep
//! only does the missing work.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::experiment::{run_experiment, RunOptions, METRICS_FILE};
use super::metrics::MetricsFile;
use crate::dataset::Mnist;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PRESETS: [&str; 4] = ["depth_grid", "wd_grid", "data_grid", "desk_grid"];

/// Seeds used by the scaled grid; every run sets init, data and probe seeds
/// to the same value.
pub const DESK_SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Clone, Debug)]
pub struct SweepOptions {
    /// Fields the preset does not set are taken from here.
    pub base: TrainConfig,
    /// Runs executed concurrently, each on its own thread.
    pub workers: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            base: TrainConfig::default(),
            workers: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub digest: String,
    pub config: TrainConfig,
    /// Relative to the sweep directory.
    pub metrics: PathBuf,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: String,
    pub runs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

/// The named configurations of a preset, derived from `base`.
pub fn preset_configs(preset: &str, base: &TrainConfig) -> Result<Vec<(String, TrainConfig)>> {
    let with = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let runs = match preset {
        "" => return Err(Error::Argument("empty preset name".into())),
        "depth_grid" => {
            let mut v = Vec::new();
            for n in [5000, 7000] {
                for d in [4, 8, 12] {
                    v.push((
                        format!("depth{d}-n{n}"),
                        with(&|c| {
                            c.depth = d;
                            c.n_train = n;
                        }),
                    ));
                }
            }
            v
        }
        "wd_grid" => {
            let mut v = Vec::new();
            for n in [2000, 5000] {
                for wd in [0.005, 0.01, 0.05] {
                    v.push((
                        format!("wd{wd}-n{n}"),
                        with(&|c| {
                            c.weight_decay = wd;
                            c.n_train = n;
                        }),
                    ));
                }
            }
            v
        }
        "data_grid" => [1000, 2000, 5000, 7000]
            .into_iter()
            .map(|n| (format!("n{n}"), with(&|c| c.n_train = n)))
            .collect(),
        "desk_grid" => desk_grid(base),
        other => {
            return Err(Error::Argument(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(runs)
}

/// Width-200, 3·10⁴-step runs that check the qualitative claims on a CPU:
/// α=8 against α=1 at depth 6, a larger training set, and depths 4 and 8.
fn desk_grid(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let scaled = |depth: usize, alpha: f64, n: usize, seed: u64| {
        let mut c = base.clone();
        c.depth = depth;
        c.width = 200;
        c.alpha = alpha;
        c.weight_decay = 0.01;
        c.n_train = n;
        c.total_steps = 30_000;
        c.tunnel_threshold = 150;
        c.checkpoint_every = 2000;
        c.seed_init = seed;
        c.seed_data = seed;
        c.seed_probe = seed;
        c
    };
    let mut v = Vec::new();
    // Seed 0 of each family first so partial sweeps are already informative.
    for seed in DESK_SEEDS {
        v.push((format!("d6-a8-n1000-s{seed}"), scaled(6, 8.0, 1000, seed)));
        v.push((format!("d6-a1-n1000-s{seed}"), scaled(6, 1.0, 1000, seed)));
        v.push((format!("d4-a8-n1000-s{seed}"), scaled(4, 8.0, 1000, seed)));
        v.push((format!("d8-a8-n1000-s{seed}"), scaled(8, 8.0, 1000, seed)));
        if seed == 0 {
            v.push((format!("d6-a8-n4000-s{seed}"), scaled(6, 8.0, 4000, seed)));
        }
    }
    v
}

fn is_complete(path: &Path) -> bool {
    MetricsFile::read(path).is_ok_and(|m| m.is_complete())
}

/// Runs every configuration of `preset` under `out_dir`, writing
/// `manifest.json` after each run finishes. A failing run is recorded and
/// the sweep moves on.
pub fn run_sweep(
    preset: &str,
    data: &Mnist,
    out_dir: &Path,
    options: &SweepOptions,
) -> Result<Manifest> {
    let configs = preset_configs(preset, &options.base)?;
    if options.workers == 0 {
        return Err(Error::Argument("workers must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let manifest = Mutex::new(Manifest {
        preset: preset.to_string(),
        runs: configs
            .iter()
            .map(|(name, config)| ManifestEntry {
                name: name.clone(),
                digest: config.digest(),
                config: config.clone(),
                metrics: Path::new(name).join(METRICS_FILE),
                status: RunStatus::Pending,
                error: None,
            })
            .collect(),
    });
    manifest
        .lock()
        .expect("manifest lock")
        .write(&manifest_path)?;

    let next = AtomicUsize::new(0);
    let work = || -> Result<()> {
        loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            let Some((name, config)) = configs.get(i) else {
                return Ok(());
            };
            let run_dir = out_dir.join(name);
            let outcome = if is_complete(&run_dir.join(METRICS_FILE)) {
                info!("{name}: already complete");
                Ok(())
            } else {
                info!("{name}: starting");
                let options = RunOptions {
                    resume: true,
                    stop_after: None,
                };
                run_experiment(config, data, &run_dir, &options).map(|_| ())
            };
            let mut m = manifest.lock().expect("manifest lock");
            let entry = &mut m.runs[i];
            match outcome {
                Ok(()) => entry.status = RunStatus::Completed,
                Err(e) => {
                    warn!("{name}: {e}");
                    entry.status = RunStatus::Failed;
                    entry.error = Some(e.to_string());
                }
            }
            m.write(&manifest_path)?;
        }
    };
    let workers = options.workers.min(configs.len()).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers).map(|_| s.spawn(work)).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(manifest.into_inner().expect("manifest lock"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_sizes() {
        let base = TrainConfig::default();
        assert_eq!(preset_configs("depth_grid", &base).unwrap().len(), 6);
        let wd = preset_configs("wd_grid", &base).unwrap();
        let at_2000: Vec<f64> = wd
            .iter()
            .filter(|(_, c)| c.n_train == 2000)
            .map(|(_, c)| c.weight_decay)
            .collect();
        assert_eq!(at_2000, vec![0.005, 0.01, 0.05]);
        assert_eq!(preset_configs("desk_grid", &base).unwrap().len(), 13);
    }

    #[test]
    fn bad_preset_names() {
        let base = TrainConfig::default();
        assert!(matches!(preset_configs("", &base), Err(Error::Argument(_))));
        assert!(matches!(
            preset_configs("nope", &base),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn names_and_digests_are_unique() {
        for p in PRESETS {
            let runs = preset_configs(p, &TrainConfig::default()).unwrap();
            let mut names: Vec<_> = runs.iter().map(|(n, _)| n.clone()).collect();
            let mut digests: Vec<_> = runs.iter().map(|(_, c)| c.digest()).collect();
            names.sort();
            names.dedup();
            digests.sort();
            digests.dedup();
            assert_eq!(names.len(), runs.len());
            assert_eq!(digests.len(), runs.len());
        }
    }
}
