use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score_model::DenoiserArch;
use crate::sde::NoiseSchedule;

/// Hyperparameters of the masked objective and the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the blank-region term.
    pub w: f64,
    /// Per-step weights `γ_1..γ_T`; empty means all ones.
    pub gamma: Vec<f64>,
    pub batch_size: usize,
    pub iterations: usize,
    pub optimizer: Optimizer,
    /// Peak learning rate.
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    /// Linear warm-up length in iterations.
    pub warmup: usize,
    /// SGD velocity decay, or `β₁` of Adam and Lion.
    pub momentum: f64,
    /// `β₂` of Adam and Lion.
    pub beta2: f64,
    /// Decoupled weight decay (Adam and Lion).
    pub weight_decay: f64,
    pub seed: u64,
    pub arch: DenoiserArch,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay to zero after warm-up.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Sign of an interpolated momentum (Chen et al., 2023).
    Lion,
    /// Bias-corrected adaptive moments (Kingma & Ba, 2015).
    #[default]
    Adam,
    /// Heavy-ball SGD.
    Sgd,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            w: 2.0,
            gamma: Vec::new(),
            batch_size: 32,
            iterations: 2000,
            optimizer: Optimizer::Adam,
            learning_rate: 2e-3,
            lr_schedule: LrSchedule::Cosine,
            warmup: 100,
            momentum: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            seed: 0,
            arch: DenoiserArch::default(),
        }
    }
}

impl TrainConfig {
    /// Learning rate at 1-based `iteration`.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let peak = self.learning_rate;
        if iteration <= self.warmup {
            return peak * iteration as f64 / self.warmup as f64;
        }
        match self.lr_schedule {
            LrSchedule::Constant => peak,
            LrSchedule::Cosine => {
                let span = self.iterations.saturating_sub(self.warmup).max(1) as f64;
                let progress = (iteration - self.warmup - 1) as f64 / span;
                0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    pub fn gamma_at(&self, i: usize) -> f64 {
        if self.gamma.is_empty() {
            1.0
        } else {
            self.gamma[i - 1]
        }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::invalid("w must be finite and non-negative"));
        }
        if !self.gamma.is_empty() && self.gamma.len() != sched.steps() {
            return Err(Error::invalid(format!(
                "gamma has {} entries but the schedule has {} steps",
                self.gamma.len(),
                sched.steps()
            )));
        }
        if self.gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::invalid("gamma entries must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("momentum and beta2 must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be finite and non-negative"));
        }
        self.arch.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::format("train config", e.to_string()))
    }
}
