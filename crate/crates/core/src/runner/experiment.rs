use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::metrics::{Diagnostic, MetricsHeader, MetricsRecord, MetricsWriter};
use super::schedule::eval_schedule;
use crate::dataset::{make_split, split_indices, LabeledSet, Mnist};
use crate::error::{Error, Result};
use crate::instrument::{probe_profile_from_hidden, rank_profile_from_hidden, weight_norm};
use crate::linalg::Matrix;
use crate::model::{
    accuracy, forward, init_mlp, loss_and_gradients, mse, predict, MlpParams, INPUT_DIM,
    NUM_CLASSES,
};
use crate::optim::AdamState;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const LOCK_FILE: &str = ".lock";

// Stream salts keep the split, the rank batch and minibatch sampling on
// separate generators even when they share a seed.
const RANK_BATCH_SALT: u64 = 0x5241_4e4b;
const MINIBATCH_SALT: u64 = 0x4d42_4154;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from `checkpoint.bin` in the output directory when present.
    pub resume: bool,
    /// Stop (after checkpointing) once this many steps are done, as if the
    /// process had been interrupted.
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub steps_done: u64,
    pub completed: bool,
    pub resumed_from: Option<u64>,
}

/// Loads MNIST from `data_dir` and runs [`run_experiment`].
pub fn run_experiment_from_dir(
    config: &TrainConfig,
    data_dir: &Path,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<RunSummary> {
    let data = Mnist::load_dir(data_dir)?;
    run_experiment(config, &data, out_dir, options)
}

/// Trains one model under `config`, appending a metrics record at every
/// scheduled step to `out_dir/metrics.jsonl` and checkpointing to
/// `out_dir/checkpoint.bin` every `checkpoint_every` steps and at the end.
pub fn run_experiment(
    config: &TrainConfig,
    data: &Mnist,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<RunSummary> {
    config.validate()?;
    if config.n_train > data.train.len() {
        return Err(Error::Config(format!(
            "n_train {} exceeds the {} available training samples",
            config.n_train,
            data.train.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let _lock = lock_run_dir(out_dir)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    let config_path = out_dir.join(CONFIG_FILE);
    let digest = config.digest();

    let train = make_split(&data.train, config.n_train, config.seed_data)?;
    let rank_n = config.rank_batch.min(data.test.len());
    let rank_inputs = data.test.inputs().select_rows(&split_indices(
        data.test.len(),
        rank_n,
        config.seed_data ^ RANK_BATCH_SALT,
    )?);

    let resume_point = if options.resume && checkpoint_path.exists() {
        let ck = Checkpoint::load(&checkpoint_path)?;
        if ck.digest != digest {
            return Err(Error::Config(format!(
                "checkpoint in {} was written for config {}, not {digest}",
                out_dir.display(),
                ck.digest
            )));
        }
        Some(ck)
    } else {
        None
    };

    let resumed_from = resume_point.as_ref().map(|c| c.step);
    let (mut params, mut adam, start_step, wall_offset, mut writer) = match resume_point {
        Some(ck) => {
            info!("resuming {} from step {}", out_dir.display(), ck.step);
            let writer = MetricsWriter::resume(&metrics_path, &digest, ck.step)?;
            (ck.params, ck.adam, ck.step, ck.wall_time, writer)
        }
        None => {
            std::fs::write(&config_path, config.to_toml_string())
                .map_err(|e| Error::io(&config_path, e))?;
            let params = init_mlp(
                config.depth,
                config.width,
                INPUT_DIM,
                NUM_CLASSES,
                config.seed_init,
            )?
            .rescaled(config.alpha)?;
            let adam = AdamState::new(&params);
            let writer = MetricsWriter::create(&metrics_path, &MetricsHeader::new(config))?;
            (params, adam, 0, 0.0, writer)
        }
    };

    let schedule = eval_schedule(config.total_steps, config.points_per_decade);
    let hyper = config.optim_hyper();
    let end_step = options
        .stop_after
        .map_or(config.total_steps, |s| s.min(config.total_steps));
    let clock = Instant::now();
    let elapsed = || wall_offset + clock.elapsed().as_secs_f64();
    let evaluator = Evaluator {
        config,
        train: &train,
        test: &data.test,
        rank_inputs: &rank_inputs,
    };

    let mut next_eval = schedule.partition_point(|&s| s <= start_step);
    for step in (start_step + 1)..=end_step {
        let (loss, grads) = match config.batch_size {
            Some(bs) if bs < train.len() => {
                let batch = train.subset(&minibatch_indices(config, train.len(), bs, step)?);
                loss_and_gradients(&params, batch.inputs(), batch.onehot())?
            }
            _ => loss_and_gradients(&params, train.inputs(), train.onehot())?,
        };
        if !loss.is_finite() {
            let msg = format!("non-finite training loss {loss} before step {step}");
            warn!("{msg}");
            writer.append_diagnostic(&Diagnostic {
                step,
                diagnostic: msg.clone(),
            })?;
            return Err(Error::Numeric(msg));
        }
        if let Err(e) = adam.step(&mut params, &grads, &hyper) {
            writer.append_diagnostic(&Diagnostic {
                step,
                diagnostic: e.to_string(),
            })?;
            return Err(e);
        }

        if schedule.get(next_eval) == Some(&step) {
            let with_probes = config.probe_every > 0
                && (next_eval % config.probe_every == 0 || step == config.total_steps);
            let record = evaluator.evaluate(&params, step, with_probes, elapsed())?;
            writer.append(&record)?;
            next_eval += 1;
        }

        if step % config.checkpoint_every == 0 || step == end_step {
            Checkpoint {
                step,
                wall_time: elapsed(),
                digest: digest.clone(),
                params: params.clone(),
                adam: adam.clone(),
            }
            .save(&checkpoint_path)?;
        }
    }

    Ok(RunSummary {
        metrics_path,
        checkpoint_path,
        steps_done: end_step.max(start_step),
        completed: end_step.max(start_step) == config.total_steps,
        resumed_from,
    })
}

/// Holds an advisory lock on `out_dir/.lock` so two processes never write
/// the same run. The OS drops it when the holder exits, even on a crash.
fn lock_run_dir(out_dir: &Path) -> Result<std::fs::File> {
    let path = out_dir.join(LOCK_FILE);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(std::fs::TryLockError::WouldBlock) => Err(Error::Config(format!(
            "{} is in use by another run",
            out_dir.display()
        ))),
        Err(std::fs::TryLockError::Error(e)) => Err(Error::io(&path, e)),
    }
}

fn minibatch_indices(
    config: &TrainConfig,
    n: usize,
    batch: usize,
    step: u64,
) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed_data ^ MINIBATCH_SALT);
    rng.set_stream(step);
    Ok(rand::seq::index::sample(&mut rng, n, batch).into_vec())
}

struct Evaluator<'a> {
    config: &'a TrainConfig,
    train: &'a LabeledSet,
    test: &'a LabeledSet,
    rank_inputs: &'a Matrix,
}

impl Evaluator<'_> {
    fn evaluate(
        &self,
        params: &MlpParams,
        step: u64,
        with_probes: bool,
        wall_time: f64,
    ) -> Result<MetricsRecord> {
        let (train_out, test_out, probe_acc) = if with_probes {
            let train_trace = forward(params, self.train.inputs())?;
            let test_trace = forward(params, self.test.inputs())?;
            let probes = probe_profile_from_hidden(
                &train_trace.hidden,
                self.train,
                &test_trace.hidden,
                self.test,
                self.config.probe_steps,
                self.config.seed_probe.wrapping_add(step),
            )?;
            (
                train_trace.output,
                test_trace.output,
                Some(probes.per_layer_test_accuracy),
            )
        } else {
            (
                predict(params, self.train.inputs())?,
                predict(params, self.test.inputs())?,
                None,
            )
        };
        let ranks = rank_profile_from_hidden(
            &forward(params, self.rank_inputs)?.hidden,
            self.config.rank_rel_tol,
        )?;
        Ok(MetricsRecord {
            step,
            train_loss: mse(&train_out, self.train.onehot())?,
            test_loss: mse(&test_out, self.test.onehot())?,
            train_acc: accuracy(&train_out, self.train.labels()),
            test_acc: accuracy(&test_out, self.test.labels()),
            weight_norm: weight_norm(params),
            per_layer_rank: ranks.per_layer_rank,
            per_layer_probe_acc: probe_acc,
            wall_time,
        })
    }
}
