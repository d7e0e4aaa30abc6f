use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::instrument::{DEFAULT_PROBE_STEPS, DEFAULT_TUNNEL_THRESHOLD};
use crate::linalg::DEFAULT_RANK_TOL;
use crate::model::DEFAULT_WIDTH;
use crate::optim::OptimHyper;

/// Everything that determines a training run. Two runs with equal configs
/// produce identical metrics apart from wall-clock time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of linear layers (hidden layers + output layer).
    pub depth: usize,
    pub width: usize,
    /// Initialization scale: the network norm after rescaling over the norm
    /// before.
    pub alpha: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub total_steps: u64,
    pub n_train: usize,
    /// `None` trains full-batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub seed_init: u64,
    pub seed_data: u64,
    pub seed_probe: u64,
    pub points_per_decade: u32,
    /// Probe on every k-th scheduled evaluation (and the last one); 0 turns
    /// probes off.
    pub probe_every: usize,
    pub probe_steps: usize,
    /// Test samples used for rank estimation.
    pub rank_batch: usize,
    pub rank_rel_tol: f64,
    pub tunnel_threshold: usize,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            depth: 12,
            width: DEFAULT_WIDTH,
            alpha: 8.0,
            weight_decay: 0.01,
            lr: 1e-3,
            total_steps: 100_000,
            n_train: 5000,
            batch_size: None,
            seed_init: 0,
            seed_data: 0,
            seed_probe: 0,
            points_per_decade: 30,
            probe_every: 5,
            probe_steps: DEFAULT_PROBE_STEPS,
            rank_batch: 2048,
            rank_rel_tol: DEFAULT_RANK_TOL,
            tunnel_threshold: DEFAULT_TUNNEL_THRESHOLD,
            checkpoint_every: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.depth < 2 {
            return fail(format!("depth must be at least 2, got {}", self.depth));
        }
        if self.width == 0 {
            return fail("width must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.total_steps < 1 {
            return fail("total_steps must be at least 1".into());
        }
        if self.n_train < 1 {
            return fail("n_train must be at least 1".into());
        }
        if self.batch_size == Some(0) {
            return fail("batch_size must be positive".into());
        }
        if self.points_per_decade == 0 {
            return fail("points_per_decade must be positive".into());
        }
        if self.probe_every > 0 && self.probe_steps == 0 {
            return fail("probe_steps must be positive when probes are enabled".into());
        }
        if self.rank_batch < 2 {
            return fail("rank_batch must be at least 2".into());
        }
        if !(self.rank_rel_tol > 0.0) {
            return fail("rank_rel_tol must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be positive".into());
        }
        self.optim_hyper()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn optim_hyper(&self) -> OptimHyper {
        OptimHyper::with_weight_decay(self.lr, self.weight_decay)
    }

    /// Short content hash of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_toml_str(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_recipe() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.width, c.alpha, c.weight_decay, c.lr),
            (400, 8.0, 0.01, 1e-3)
        );
        assert_eq!(c.total_steps, 100_000);
        assert_eq!(c.tunnel_threshold, 300);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = TrainConfig {
            depth: 4,
            batch_size: Some(128),
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let partial = TrainConfig::from_toml_str("depth = 8\nn_train = 7000\n").unwrap();
        assert_eq!(partial.depth, 8);
        assert_eq!(partial.n_train, 7000);
        assert_eq!(partial.alpha, 8.0);
        assert!(TrainConfig::from_toml_str("depht = 3").is_err());
        assert!(TrainConfig::from_toml_str("alpha = -1.0").is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed_init = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 12);
    }
}
