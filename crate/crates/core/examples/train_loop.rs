//! The bare training loop: scaled initialization, full-batch MSE, Adam
//! with decoupled weight decay. Uses synthetic digits so it runs anywhere.
//!
//! cargo run --release --example train_loop -- [alpha]

use deepgrok::dataset::synthetic_digits;
use deepgrok::instrument::weight_norm;
use deepgrok::model::{accuracy, init_mlp, loss_and_gradients, predict, INPUT_DIM, NUM_CLASSES};
use deepgrok::optim::{AdamState, OptimHyper};

fn main() -> deepgrok::Result<()> {
    let alpha: f64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(1.0);
    let data = synthetic_digits(500, 500, 1);
    let mut params = init_mlp(4, 64, INPUT_DIM, NUM_CLASSES, 0)?.rescaled(alpha)?;
    let mut adam = AdamState::new(&params);
    let hyper = OptimHyper::with_weight_decay(1e-3, 0.01);

    println!(
        "alpha {alpha}, initial weight norm {:.2}",
        weight_norm(&params)
    );
    for step in 1..=1000 {
        let (loss, grads) = loss_and_gradients(&params, data.train.inputs(), data.train.onehot())?;
        adam.step(&mut params, &grads, &hyper)?;
        if step == 1 || step % 200 == 0 {
            let train = accuracy(&predict(&params, data.train.inputs())?, data.train.labels());
            let test = accuracy(&predict(&params, data.test.inputs())?, data.test.labels());
            println!(
                "step {step:>5}  loss {loss:.3e}  train {train:.3}  test {test:.3}  norm {:.2}",
                weight_norm(&params)
            );
        }
    }
    Ok(())
}
