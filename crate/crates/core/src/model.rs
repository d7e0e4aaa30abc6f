//! ReLU multilayer perceptrons with exact MSE backpropagation.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix};

pub const INPUT_DIM: usize = 784;
pub const NUM_CLASSES: usize = 10;
pub const DEFAULT_WIDTH: usize = 400;

/// Anything that can be viewed as an ordered list of flat `f64` tensors.
///
/// The optimizer and the weight-norm instrument only need this view, so the
/// same code drives the backbone, a probe head, or a bare vector.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// True when `other` has the same tensor count and sizes.
    fn same_layout(&self, other: &Self) -> bool {
        let (a, b) = (self.tensors(), other.tensors());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }
}

impl Parameters for Vec<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

/// A fully connected layer `y = x·Wᵀ + b` with `W` stored `fan_out × fan_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weight: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        let bias = (0..fan_out).map(|_| dist.sample(rng)).collect();
        Linear {
            weight: Matrix::from_vec(fan_out, fan_in, weight).expect("sized above"),
            bias,
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.fan_in() {
            return Err(Error::Shape(format!(
                "layer expects {} input features, got {}",
                self.fan_in(),
                inputs.cols()
            )));
        }
        let mut out = Matrix::zeros(inputs.rows(), self.fan_out());
        gemm(1.0, inputs.view(), self.weight.t(), 0.0, &mut out)?;
        out.add_row_vector(&self.bias)?;
        Ok(out)
    }

    /// Parameter gradients given the layer input and `∂L/∂output`.
    pub fn param_gradients(&self, inputs: &Matrix, delta: &Matrix) -> Result<Linear> {
        let mut gw = Matrix::zeros(self.fan_out(), self.fan_in());
        gemm(1.0, delta.t(), inputs.view(), 0.0, &mut gw)?;
        Ok(Linear {
            weight: gw,
            bias: delta.column_sums(),
        })
    }

    /// `∂L/∂input = delta · W`.
    pub fn input_gradient(&self, delta: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(delta.rows(), self.fan_in());
        gemm(1.0, delta.view(), self.weight.view(), 0.0, &mut out)?;
        Ok(out)
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.as_slice(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}

/// Weights and biases of a ReLU MLP, input side first.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Linear>,
}

impl MlpParams {
    /// Builds an MLP from explicit layers, checking that consecutive
    /// dimensions line up.
    pub fn from_layers(layers: Vec<Linear>) -> Result<MlpParams> {
        if layers.len() < 2 {
            return Err(Error::Argument(format!(
                "an MLP needs at least 2 linear layers, got {}",
                layers.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Shape(format!("layer {i} bias length mismatch")));
            }
        }
        Ok(MlpParams { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    /// Number of linear layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Linear::fan_out)
            .collect()
    }

    /// Multiplies every weight and bias by `alpha`, which scales the global
    /// L2 norm by exactly `alpha`.
    pub fn rescale(&mut self, alpha: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Argument(format!(
                "initialization scale must be positive, got {alpha}"
            )));
        }
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= alpha);
        }
        Ok(())
    }

    pub fn rescaled(mut self, alpha: f64) -> Result<MlpParams> {
        self.rescale(alpha)?;
        Ok(self)
    }
}

impl Parameters for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }
}

/// Standard framework initialization of a `depth`-layer MLP: every entry
/// i.i.d. uniform on `±1/√fan_in`.
pub fn init_mlp(
    depth: usize,
    width: usize,
    in_dim: usize,
    out_dim: usize,
    seed: u64,
) -> Result<MlpParams> {
    if depth < 2 {
        return Err(Error::Argument(format!(
            "depth must be at least 2, got {depth}"
        )));
    }
    if width == 0 || in_dim == 0 || out_dim == 0 {
        return Err(Error::Argument("layer dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = (0..depth)
        .map(|i| {
            let fan_in = if i == 0 { in_dim } else { width };
            let fan_out = if i + 1 == depth { out_dim } else { width };
            Linear::init(fan_in, fan_out, &mut rng)
        })
        .collect();
    MlpParams::from_layers(layers)
}

/// Every hidden post-ReLU activation plus the final linear output.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub hidden: Vec<Matrix>,
    pub output: Matrix,
}

pub fn forward(params: &MlpParams, inputs: &Matrix) -> Result<ForwardTrace> {
    let last = params.depth() - 1;
    let mut hidden: Vec<Matrix> = Vec::with_capacity(last);
    for (i, layer) in params.layers()[..last].iter().enumerate() {
        let prev = if i == 0 { inputs } else { &hidden[i - 1] };
        let mut h = layer.forward(prev)?;
        relu_in_place(&mut h);
        hidden.push(h);
    }
    let prev = hidden.last().unwrap_or(inputs);
    let output = params.layers()[last].forward(prev)?;
    Ok(ForwardTrace { hidden, output })
}

/// Output of the network only; skips keeping hidden activations alive.
pub fn predict(params: &MlpParams, inputs: &Matrix) -> Result<Matrix> {
    let last = params.depth() - 1;
    let mut h = params.layers()[0].forward(inputs)?;
    if last > 0 {
        relu_in_place(&mut h);
    }
    for (i, layer) in params.layers().iter().enumerate().skip(1) {
        h = layer.forward(&h)?;
        if i < last {
            relu_in_place(&mut h);
        }
    }
    Ok(h)
}

fn relu_in_place(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });
}

/// Mean squared error over every entry: `Σ (ŷ − y)² / (n · classes)`.
pub fn mse(output: &Matrix, targets: &Matrix) -> Result<f64> {
    check_targets(output, targets)?;
    let sum: f64 = output
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(o, t)| (o - t) * (o - t))
        .sum();
    Ok(sum / output.as_slice().len() as f64)
}

fn check_targets(output: &Matrix, targets: &Matrix) -> Result<()> {
    if output.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "outputs are {:?} but targets are {:?}",
            output.shape(),
            targets.shape()
        )));
    }
    if output.as_slice().is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

/// Loss and its gradient with respect to the last-layer output.
pub(crate) fn mse_with_delta(output: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    check_targets(output, targets)?;
    let count = output.as_slice().len() as f64;
    let mut delta = output.clone();
    let mut sum = 0.0;
    for (d, t) in delta.as_mut_slice().iter_mut().zip(targets.as_slice()) {
        let diff = *d - t;
        sum += diff * diff;
        *d = 2.0 * diff / count;
    }
    Ok((sum / count, delta))
}

/// MSE loss against one-hot targets and the exact gradient for every
/// parameter. The ReLU subgradient at zero is taken as zero.
pub fn loss_and_gradients(
    params: &MlpParams,
    inputs: &Matrix,
    targets: &Matrix,
) -> Result<(f64, MlpParams)> {
    let trace = forward(params, inputs)?;
    let (loss, mut delta) = mse_with_delta(&trace.output, targets)?;

    let depth = params.depth();
    let mut grads: Vec<Linear> = Vec::with_capacity(depth);
    for i in (0..depth).rev() {
        let layer = &params.layers()[i];
        let prev = if i == 0 { inputs } else { &trace.hidden[i - 1] };
        grads.push(layer.param_gradients(prev, &delta)?);
        if i > 0 {
            let mut back = layer.input_gradient(&delta)?;
            for (g, h) in back.as_mut_slice().iter_mut().zip(prev.as_slice()) {
                if *h <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = back;
        }
    }
    grads.reverse();
    Ok((loss, MlpParams { layers: grads }))
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(output: &Matrix, labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = output
        .row_iter()
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label as usize)
        .count();
    hits as f64 / labels.len() as f64
}
