//! Measurements taken on parameter snapshots: global weight norm, per-layer
//! feature ranks, per-layer linear probes and tunnel length.
//!
//! Nothing here mutates the backbone. Probe heads draw from their own seeded
//! generator, so toggling probes never changes a training trajectory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, Matrix};
use crate::model::{self, forward, Linear, MlpParams, Parameters, NUM_CLASSES};
use crate::optim::{AdamState, OptimHyper};

pub const DEFAULT_PROBE_STEPS: usize = 200;
pub const DEFAULT_TUNNEL_THRESHOLD: usize = 300;

/// L2 norm over every parameter entry, accumulated in tensor order.
pub fn weight_norm<P: Parameters>(params: &P) -> f64 {
    params
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankProfile {
    pub step: u64,
    /// One rank per hidden layer, input side first.
    pub per_layer_rank: Vec<usize>,
    pub batch_size: usize,
}

/// Numerical rank of each hidden layer's activations on `probe_inputs`.
pub fn layer_rank_profile(
    params: &MlpParams,
    probe_inputs: &Matrix,
    rel_tol: f64,
) -> Result<RankProfile> {
    let trace = forward(params, probe_inputs)?;
    rank_profile_from_hidden(&trace.hidden, rel_tol)
}

pub(crate) fn rank_profile_from_hidden(hidden: &[Matrix], rel_tol: f64) -> Result<RankProfile> {
    let per_layer_rank = hidden
        .iter()
        .map(|h| numerical_rank(h, rel_tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(RankProfile {
        step: 0,
        per_layer_rank,
        batch_size: hidden.first().map_or(0, Matrix::rows),
    })
}

/// Trains a fresh linear head on frozen features with full-batch Adam
/// (lr 1e-3, no weight decay) on MSE for exactly `probe_steps` steps.
pub fn train_linear_probe(
    features: &Matrix,
    onehot: &Matrix,
    probe_steps: usize,
    seed: u64,
) -> Result<Linear> {
    if probe_steps == 0 {
        return Err(Error::Argument("probe_steps must be at least 1".into()));
    }
    if features.rows() != onehot.rows() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} targets",
            features.rows(),
            onehot.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = Linear::init(features.cols(), onehot.cols(), &mut rng);
    let mut adam = AdamState::new(&head);
    let hyper = OptimHyper::default();
    for _ in 0..probe_steps {
        let out = head.forward(features)?;
        let (_, delta) = model::mse_with_delta(&out, onehot)?;
        let grads = head.param_gradients(features, &delta)?;
        adam.step(&mut head, &grads, &hyper)?;
    }
    Ok(head)
}

pub fn probe_accuracy(head: &Linear, features: &Matrix, labels: &[u8]) -> Result<f64> {
    Ok(model::accuracy(&head.forward(features)?, labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeProfile {
    pub step: u64,
    pub per_layer_test_accuracy: Vec<f64>,
}

/// Seed for the probe attached to hidden layer `layer`.
pub(crate) fn probe_seed(seed: u64, layer: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(layer as u64 + 1)
}

/// Trains one probe per hidden layer on train-set features and reports
/// each probe's test accuracy.
pub fn probe_profile(
    params: &MlpParams,
    train: &LabeledSet,
    test: &LabeledSet,
    probe_steps: usize,
    seed: u64,
) -> Result<ProbeProfile> {
    let train_trace = forward(params, train.inputs())?;
    let test_trace = forward(params, test.inputs())?;
    probe_profile_from_hidden(
        &train_trace.hidden,
        train,
        &test_trace.hidden,
        test,
        probe_steps,
        seed,
    )
}

pub(crate) fn probe_profile_from_hidden(
    train_hidden: &[Matrix],
    train: &LabeledSet,
    test_hidden: &[Matrix],
    test: &LabeledSet,
    probe_steps: usize,
    seed: u64,
) -> Result<ProbeProfile> {
    let mut per_layer_test_accuracy = Vec::with_capacity(train_hidden.len());
    for (layer, (tr, te)) in train_hidden.iter().zip(test_hidden).enumerate() {
        let head = train_linear_probe(tr, train.onehot(), probe_steps, probe_seed(seed, layer))?;
        per_layer_test_accuracy.push(probe_accuracy(&head, te, test.labels())?);
    }
    Ok(ProbeProfile {
        step: 0,
        per_layer_test_accuracy,
    })
}

/// Length of the longest run of trailing hidden layers whose rank is below
/// `threshold`.
pub fn tunnel_length(per_layer_rank: &[usize], threshold: usize) -> usize {
    per_layer_rank
        .iter()
        .rev()
        .take_while(|&&r| r < threshold)
        .count()
}

/// Accuracy of always predicting the most frequent class of `labels`.
pub fn majority_class_accuracy(labels: &[u8]) -> f64 {
    let mut counts = [0usize; NUM_CLASSES];
    labels.iter().for_each(|&l| counts[l as usize] += 1);
    counts.iter().max().copied().unwrap_or(0) as f64 / labels.len().max(1) as f64
}
