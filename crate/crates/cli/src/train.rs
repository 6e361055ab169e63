use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use candle_core::{DType, Device};
use serde::Serialize;
use sshnet_core::imgcore::{save_image, BitDepth};
use sshnet_core::losses::{FeatureExtractor, Lpips, Vgg16};
use sshnet_core::sshnet::SshNet;
use sshnet_core::synth::{Manifest, Split, TrainMode};
use sshnet_core::trainer::{
    evaluate, load_model, EvalOptions, EvalReport, IdentityRestorer, JsonlWriter, Redraw, Restorer, StepLog, TrainData,
    Trainer,
};

use crate::config::{echo_config, ensure_valid, require_file, RunConfig};
use crate::plot::line_chart;
use crate::util::{assets, sha256_file, write_json};
use crate::EvalArgs;

/// Layer whose activations feed the texture loss.
const TEXTURE_TAP: &str = "relu3_3";

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: u64,
    pub final_loss: f64,
    pub best_psnr: Option<f64>,
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub corpus_sha256: String,
    pub seconds: f64,
}

pub fn train_problems(cfg: &RunConfig) -> Vec<String> {
    let mut p = cfg.problems();
    require_file(&mut p, "training manifest", &cfg.manifest_path(Split::Train));
    if cfg.train.alpha > 0.0 {
        match &cfg.extractor {
            None => p.push("train.alpha > 0 needs `extractor` (VGG16 safetensors); set train.alpha = 0 to train without one".into()),
            Some(path) => require_file(&mut p, "feature extractor", path),
        }
    }
    if let Some(dir) = cfg.corpus.assets.as_ref().filter(|d| !d.is_dir()) {
        p.push(format!("asset directory {} does not exist", dir.display()));
    }
    p
}

pub fn run_train(cfg: &RunConfig, resume: bool) -> Result<TrainSummary> {
    ensure_valid(train_problems(cfg))?;
    let dir = cfg.run_dir();
    echo_config(cfg, &dir.join("config.toml"))?;
    let summary = train_in(cfg, &dir, resume)?;
    println!(
        "trained {} steps, final loss {:.5}, checkpoint {} sha256 {}",
        summary.steps,
        summary.final_loss,
        summary.checkpoint.display(),
        summary.checkpoint_sha256
    );
    Ok(summary)
}

/// Drops log lines at or after `step`, so a resumed run does not repeat them.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let mut kept = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let log: StepLog = serde_json::from_str(line).with_context(|| format!("parsing {}", path.display()))?;
        if log.step < step {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

fn read_losses(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str::<StepLog>(l)?.total))
        .collect()
}

#[derive(Serialize)]
struct EvalLine {
    step: u64,
    epoch: u64,
    psnr: f64,
    ssim: f64,
}

/// Trains into `dir` (config already echoed by the caller).
pub fn train_in(cfg: &RunConfig, dir: &Path, resume: bool) -> Result<TrainSummary> {
    let start = Instant::now();
    let (ck_dir, log_dir, plot_dir) = (dir.join("checkpoints"), dir.join("logs"), dir.join("plots"));
    for d in [&ck_dir, &log_dir, &plot_dir, &dir.join("eval")] {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }

    let train_manifest = Manifest::load(cfg.manifest_path(Split::Train))?;
    let corpus_sha256 = train_manifest.digest()?;
    let mut data = TrainData::from_manifest(&train_manifest)?;
    if cfg.train.train_mode == TrainMode::PerEpoch {
        data = data.with_redraw(Redraw { assets: assets(cfg)?, ranges: cfg.corpus.synth.ranges.clone() })?;
    }
    let test_path = cfg.manifest_path(Split::Test);
    let test_manifest = if cfg.train.eval_every > 0 && test_path.is_file() {
        Some(Manifest::load(&test_path)?)
    } else {
        None
    };

    let extractor = match (&cfg.extractor, cfg.train.alpha > 0.0) {
        (Some(path), true) => Some(Vgg16::load(path, &[TEXTURE_TAP], &Device::Cpu, DType::F32)?),
        _ => None,
    };
    let model = SshNet::new(&cfg.model, &Device::Cpu, DType::F32, cfg.train.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), data, extractor.as_ref().map(|e| e as &dyn FeatureExtractor))?;

    let latest = ck_dir.join("latest.ckpt");
    let train_log = log_dir.join("train.jsonl");
    if resume && latest.is_file() {
        trainer.resume(&latest)?;
        log::info!("resumed from {} at step {}", latest.display(), trainer.step());
        truncate_log(&train_log, trainer.step())?;
    }
    let fresh = trainer.step() == 0;
    let mut steps_log = JsonlWriter::create(&train_log, !fresh)?;
    let mut eval_log = JsonlWriter::create(log_dir.join("eval.jsonl"), !fresh)?;

    let total = trainer.total_steps();
    let per_epoch = trainer.steps_per_epoch();
    let mut last = None;
    while trainer.step() < total {
        let log = trainer.train_step()?;
        steps_log.write(&log)?;
        if log.step % 10 == 0 || trainer.step() == total {
            log::info!("step {}/{total} epoch {} lr {:.2e} loss {:.5}", log.step + 1, log.epoch, log.lr, log.total);
        }
        last = Some(log.total);
        let epoch_done = trainer.step() % per_epoch == 0;
        if epoch_done || trainer.step() == total {
            trainer.save(&latest)?;
        }
        let epochs_done = trainer.step() / per_epoch;
        if let (true, Some(test)) = (epoch_done && epochs_done % cfg.train.eval_every.max(1) as u64 == 0, &test_manifest) {
            let report = evaluate(&trainer.model, test, &EvalOptions::default())?;
            eval_log.write(&EvalLine {
                step: trainer.step(),
                epoch: epochs_done,
                psnr: report.mean_psnr(),
                ssim: report.mean_ssim(),
            })?;
            log::info!("epoch {epochs_done}: held-out PSNR {:.3} dB SSIM {:.4}", report.mean_psnr(), report.mean_ssim());
            if trainer.best_metric().is_none_or(|b| report.mean_psnr() > b) {
                trainer.set_best_metric(report.mean_psnr());
                trainer.save(ck_dir.join("best.ckpt"))?;
            }
        }
    }
    if !latest.is_file() {
        trainer.save(&latest)?;
    }
    drop(steps_log);

    let losses = read_losses(&train_log)?;
    save_image(&line_chart("training loss", &losses)?, plot_dir.join("loss.png"), BitDepth::Eight)?;
    let final_loss = last.or_else(|| losses.last().copied()).unwrap_or(f64::NAN);
    let summary = TrainSummary {
        steps: trainer.step(),
        epochs: trainer.epoch(),
        final_loss,
        best_psnr: trainer.best_metric(),
        checkpoint_sha256: sha256_file(&latest)?,
        checkpoint: latest,
        corpus_sha256,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&summary, &log_dir.join("summary.json"))?;
    Ok(summary)
}

pub fn eval_problems(cfg: &RunConfig, checkpoint: Option<&Path>) -> Vec<String> {
    let mut p = cfg.problems();
    require_file(&mut p, "test manifest", &cfg.manifest_path(Split::Test));
    if let Some(ck) = checkpoint {
        require_file(&mut p, "checkpoint", ck);
    }
    if let Some(vgg) = &cfg.eval.lpips_vgg {
        require_file(&mut p, "LPIPS backbone", vgg);
    }
    if let Some(lin) = &cfg.eval.lpips_lin {
        if cfg.eval.lpips_vgg.is_none() {
            p.push("eval.lpips_lin needs eval.lpips_vgg".into());
        }
        require_file(&mut p, "LPIPS heads", lin);
    }
    p
}

/// Scores `model` (or the degraded inputs when `None`) and writes metrics into `out`.
pub fn eval_into(cfg: &RunConfig, model: Option<&SshNet>, out: &Path) -> Result<EvalReport> {
    let manifest = Manifest::load(cfg.manifest_path(Split::Test))?;
    let lpips = match &cfg.eval.lpips_vgg {
        Some(vgg) => Some(Lpips::load(vgg, cfg.eval.lpips_lin.as_deref())?),
        None => None,
    };
    let images = out.join("images");
    let opts = EvalOptions {
        psnr_domain: cfg.eval.psnr_domain,
        lpips: lpips.as_ref(),
        dump_dir: cfg.eval.dump_images.then(|| images.clone()),
        dump_branches: model,
    };
    if cfg.eval.dump_images {
        fs::create_dir_all(&images).with_context(|| format!("creating {}", images.display()))?;
    }
    let restorer: &dyn Restorer = match model {
        Some(m) => m,
        None => &IdentityRestorer,
    };
    let report = evaluate(restorer, &manifest, &opts)?;
    report.write(out)?;
    Ok(report)
}

pub fn run_eval(cfg: &RunConfig, a: &EvalArgs) -> Result<()> {
    let checkpoint = (!a.identity).then(|| a.checkpoint.clone().unwrap_or_else(|| cfg.run_dir().join("checkpoints/latest.ckpt")));
    ensure_valid(eval_problems(cfg, checkpoint.as_deref()))?;
    let out = a.out.clone().unwrap_or_else(|| cfg.run_dir().join("eval"));
    echo_config(cfg, &out.join("eval.config.toml"))?;
    let model = match &checkpoint {
        Some(ck) => Some(load_model(ck, &Device::Cpu, DType::F32)?.0),
        None => None,
    };
    let report = eval_into(cfg, model.as_ref(), &out)?;
    println!(
        "evaluated {} images: PSNR {:.3} dB, SSIM {:.4}; metrics in {}",
        report.items.len(),
        report.mean_psnr(),
        report.mean_ssim(),
        out.display()
    );
    if !report.failures.is_empty() {
        bail!("{} image(s) failed to evaluate; see metrics.json", report.failures.len());
    }
    Ok(())
}
