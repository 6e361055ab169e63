use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::checkpoint::{read_checkpoint, save_checkpoint, TrainingSnapshot};
use super::config::{lr_schedule, TrainConfig};
use super::data::TrainData;
use crate::error::{Error, Result};
use crate::losses::{mixed_loss, FeatureExtractor, LossBreakdown};
use crate::sshnet::SshNet;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub l_s1: f64,
    pub l_s2: f64,
    pub l_s3: f64,
    pub l_t1: f64,
    pub l_t2: f64,
    pub total: f64,
}

impl StepLog {
    fn new(step: u64, epoch: u64, lr: f64, b: &LossBreakdown) -> Self {
        Self { step, epoch, lr, l_s1: b.l_s1, l_s2: b.l_s2, l_s3: b.l_s3, l_t1: b.l_t1, l_t2: b.l_t2, total: b.total }
    }
}

/// Owns the model, optimiser state and data for one run.
pub struct Trainer<'a> {
    pub model: SshNet,
    pub cfg: TrainConfig,
    pub data: TrainData,
    adam: Adam,
    step: u64,
    best_metric: Option<f64>,
    extractor: Option<&'a dyn FeatureExtractor>,
}

impl<'a> Trainer<'a> {
    /// Fails before any step if the configuration, data or extractor is unusable.
    pub fn new(
        model: SshNet,
        cfg: TrainConfig,
        data: TrainData,
        extractor: Option<&'a dyn FeatureExtractor>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.alpha > 0.0 && extractor.is_none() {
            return Err(Error::ExtractorMissing(
                "texture loss weight is positive but no feature extractor was provided; set alpha = 0 to train without one"
                    .into(),
            ));
        }
        let (h, w) = data.min_dims();
        if h < cfg.crop || w < cfg.crop {
            return Err(Error::Config(format!("crop {} exceeds the smallest training image ({h}x{w})", cfg.crop)));
        }
        let vars = model.params().vars();
        let adam = Adam::new(&vars, cfg.betas.0, cfg.betas.1, cfg.eps)?;
        Ok(Self { model, cfg, data, adam, step: 0, best_metric: None, extractor })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.data.steps_per_epoch(self.cfg.batch)
    }

    pub fn epoch(&self) -> u64 {
        self.step / self.steps_per_epoch()
    }

    /// Total steps implied by `epochs` and `max_steps`.
    pub fn total_steps(&self) -> u64 {
        let by_epochs = self.cfg.epochs as u64 * self.steps_per_epoch();
        self.cfg.max_steps.map_or(by_epochs, |m| m.min(by_epochs))
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.best_metric
    }

    pub fn set_best_metric(&mut self, value: f64) {
        self.best_metric = Some(self.best_metric.map_or(value, |b| b.max(value)));
    }

    /// Runs one optimisation step and returns its log line.
    pub fn train_step(&mut self) -> Result<StepLog> {
        let epoch = self.epoch();
        let lr = lr_schedule(&self.cfg, epoch as usize)?;
        let batch = self.data.batch(
            self.cfg.seed,
            self.step,
            self.cfg.batch,
            self.cfg.crop,
            self.cfg.flips,
            self.model.device(),
            self.model.dtype(),
        )?;
        let outs = self.model.forward(&batch.x_wn)?;
        let loss = mixed_loss(&outs, &batch.x_w, &batch.y_w, self.cfg.alpha, self.extractor)?;
        if !loss.breakdown.total.is_finite() {
            return Err(Error::Invalid(format!("non-finite loss at step {}", self.step)));
        }
        let grads = loss.total.backward()?;
        self.adam.step(&self.model.params().vars(), &grads, lr)?;
        let log = StepLog::new(self.step, epoch, lr, &loss.breakdown);
        self.step += 1;
        Ok(log)
    }

    /// Runs `steps` steps, calling `on_step` after each.
    pub fn run_steps(&mut self, steps: u64, mut on_step: impl FnMut(&StepLog) -> Result<()>) -> Result<Vec<StepLog>> {
        let mut logs = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let log = self.train_step()?;
            on_step(&log)?;
            logs.push(log);
        }
        Ok(logs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(
            &TrainingSnapshot {
                model: &self.model,
                adam: &self.adam,
                train: &self.cfg,
                epoch: self.epoch(),
                step: self.step,
                best_metric: self.best_metric,
            },
            path,
        )
    }

    /// Restores parameters, optimiser moments and the step counter.
    pub fn resume(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let ck = read_checkpoint(path)?;
        if ck.header.model != *self.model.config() {
            return Err(Error::Checkpoint("checkpoint model configuration differs from the current model".into()));
        }
        ck.apply(&self.model, Some(&mut self.adam))?;
        self.step = ck.header.step;
        self.best_metric = ck.header.best_metric;
        Ok(())
    }
}

/// Appends JSON lines to a log file.
pub struct JsonlWriter {
    out: BufWriter<fs::File>,
}

impl JsonlWriter {
    pub fn create(path: impl AsRef<Path>, append: bool) -> Result<Self> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n").map_err(|e| Error::io("log", e))?;
        self.out.flush().map_err(|e| Error::io("log", e))
    }
}
