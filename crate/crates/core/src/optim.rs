//! Adam with decoupled weight decay.
//!
//! One step, per coordinate:
//!
//! ```text
//! m ← β₁m + (1 − β₁)g
//! v ← β₂v + (1 − β₂)g²
//! θ ← θ − lr · ( m/(1 − β₁ᵗ) / (√(v/(1 − β₂ᵗ)) + ε) + γθ )
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimHyper {
    fn default() -> Self {
        OptimHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimHyper {
    pub fn with_weight_decay(lr: f64, weight_decay: f64) -> Self {
        OptimHyper {
            lr,
            weight_decay,
            ..OptimHyper::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.weight_decay >= 0.0
            && [self.lr, self.eps, self.weight_decay]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// First/second moment buffers shaped like the parameters they track.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<P> {
    m: P,
    v: P,
    t: u64,
}

impl<P: Parameters> AdamState<P> {
    pub fn new(params: &P) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// Reassembles a state, e.g. from a checkpoint.
    pub fn from_parts(m: P, v: P, t: u64) -> Result<Self> {
        if !m.same_layout(&v) {
            return Err(Error::Shape("moment buffers differ in layout".into()));
        }
        if v.tensors().iter().any(|t| t.iter().any(|x| !(*x >= 0.0))) {
            return Err(Error::Value("second moments must be non-negative".into()));
        }
        Ok(AdamState { m, v, t })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &P {
        &self.m
    }

    pub fn second_moment(&self) -> &P {
        &self.v
    }

    /// Applies one update in place. The step is refused, leaving everything
    /// untouched, if any gradient is non-finite.
    pub fn step(&mut self, params: &mut P, grads: &P, hyper: &OptimHyper) -> Result<()> {
        hyper.validate()?;
        if !params.same_layout(grads) || !params.same_layout(&self.m) {
            return Err(Error::Shape(
                "parameters, gradients and optimizer state differ in layout".into(),
            ));
        }
        if grads
            .tensors()
            .iter()
            .any(|t| t.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::Numeric("non-finite gradient; step refused".into()));
        }

        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - hyper.beta1.powf(t);
        let bc2 = 1.0 - hyper.beta2.powf(t);
        let OptimHyper {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = *hyper;

        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((theta, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..theta.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * theta[i]);
            }
        }
        Ok(())
    }
}
