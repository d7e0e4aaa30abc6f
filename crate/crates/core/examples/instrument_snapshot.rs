//! Per-layer ranks, linear probes and tunnel length for one network, before
//! and after a short stretch of training.
//!
//! cargo run --release --example instrument_snapshot

use deepgrok::dataset::synthetic_digits;
use deepgrok::instrument::{layer_rank_profile, probe_profile, tunnel_length, weight_norm};
use deepgrok::linalg::DEFAULT_RANK_TOL;
use deepgrok::model::{init_mlp, loss_and_gradients, MlpParams, INPUT_DIM, NUM_CLASSES};
use deepgrok::optim::{AdamState, OptimHyper};

fn report(
    label: &str,
    params: &MlpParams,
    data: &deepgrok::dataset::Mnist,
) -> deepgrok::Result<()> {
    let ranks = layer_rank_profile(params, data.test.inputs(), DEFAULT_RANK_TOL)?;
    let probes = probe_profile(params, &data.train, &data.test, 200, 0)?;
    println!("{label}: weight norm {:.2}", weight_norm(params));
    println!("  ranks  {:?}", ranks.per_layer_rank);
    println!("  probes {:.3?}", probes.per_layer_test_accuracy);
    println!(
        "  tunnel length at threshold 48: {}",
        tunnel_length(&ranks.per_layer_rank, 48)
    );
    Ok(())
}

fn main() -> deepgrok::Result<()> {
    let data = synthetic_digits(400, 400, 2);
    let mut params = init_mlp(8, 64, INPUT_DIM, NUM_CLASSES, 3)?;
    report("at init", &params, &data)?;

    let mut adam = AdamState::new(&params);
    let hyper = OptimHyper::with_weight_decay(1e-3, 0.01);
    for _ in 0..500 {
        let (_, grads) = loss_and_gradients(&params, data.train.inputs(), data.train.onehot())?;
        adam.step(&mut params, &grads, &hyper)?;
    }
    report("after 500 steps", &params, &data)
}
