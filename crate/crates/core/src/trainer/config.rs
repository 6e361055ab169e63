use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::DEFAULT_ALPHA;
use crate::synth::TrainMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Square crop side; must be a multiple of 16.
    pub crop: usize,
    /// Weight of the texture terms; 0 trains without a feature extractor.
    pub alpha: f64,
    pub seed: u64,
    /// Evaluate every this many epochs (0 disables).
    pub eval_every: usize,
    /// Random horizontal flips of training crops.
    pub flips: bool,
    pub train_mode: TrainMode,
    /// Caps the optimisation at this many steps regardless of `epochs`.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay: 0.1,
            decay_every: 30,
            epochs: 100,
            batch: 8,
            betas: (0.9, 0.999),
            eps: 1e-8,
            crop: 256,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            eval_every: 10,
            flips: false,
            train_mode: TrainMode::PreBaked,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.lr0 > 0.0) {
            p.push(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            p.push(format!("decay {} outside (0, 1]", self.decay));
        }
        if self.decay_every == 0 {
            p.push("decay_every must be at least 1".into());
        }
        if self.epochs == 0 {
            p.push("epochs must be at least 1".into());
        }
        if self.batch == 0 {
            p.push("batch must be at least 1".into());
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            p.push(format!("betas ({b1}, {b2}) outside [0, 1)"));
        }
        if !(self.eps > 0.0) {
            p.push("eps must be positive".into());
        }
        if self.crop == 0 || self.crop % 16 != 0 {
            p.push(format!("crop {} must be a positive multiple of 16", self.crop));
        }
        if !(self.alpha >= 0.0) {
            p.push(format!("alpha {} must be non-negative", self.alpha));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}

/// Step decay: `lr0 · decay^⌊epoch / decay_every⌋`.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Invalid(format!("epoch {epoch} outside [0, {})", cfg.epochs)));
    }
    Ok(cfg.lr0 * cfg.decay.powi((epoch / cfg.decay_every.max(1)) as i32))
}
