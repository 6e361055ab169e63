use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sshnet_core::imgcore::{save_image, BitDepth};
use sshnet_core::sshnet::Variant;
use sshnet_core::synth::{Manifest, Split};

use crate::config::{echo_config, ensure_valid, RunConfig};
use crate::plot::bar_chart;
use crate::train::{eval_into, eval_problems, train_in, train_problems};
use crate::util::write_json;
use crate::AblateArgs;

#[derive(Clone, Debug, Serialize)]
struct Row {
    variant: String,
    ok: bool,
    psnr: Option<f64>,
    ssim: Option<f64>,
    steps: Option<u64>,
    final_loss: Option<f64>,
    seconds: Option<f64>,
    train_corpus_sha256: Option<String>,
    test_corpus_sha256: Option<String>,
    error: Option<String>,
}

impl Row {
    fn failed(variant: &str, e: &anyhow::Error) -> Row {
        Row {
            variant: variant.into(),
            ok: false,
            psnr: None,
            ssim: None,
            steps: None,
            final_loss: None,
            seconds: None,
            train_corpus_sha256: None,
            test_corpus_sha256: None,
            error: Some(format!("{e:#}")),
        }
    }
}

#[derive(Serialize)]
struct AblationReport {
    seed: u64,
    /// Degraded-input scores on the same test set.
    baseline_psnr: f64,
    baseline_ssim: f64,
    /// Every variant read byte-identical training and test corpora.
    corpus_consistent: bool,
    rows: Vec<Row>,
}

fn one(cfg: &RunConfig, variant: &str, dir: &Path) -> Result<Row> {
    let variant: Variant = variant.parse()?;
    let mut sub = cfg.clone();
    sub.model = cfg.model.clone().with_variant(variant);
    echo_config(&sub, &dir.join("config.toml"))?;
    let test_sha = Manifest::load(sub.manifest_path(Split::Test))?.digest()?;
    let summary = train_in(&sub, dir, false)?;
    let model = sshnet_core::trainer::load_model(&summary.checkpoint, &candle_core::Device::Cpu, candle_core::DType::F32)?.0;
    let report = eval_into(&sub, Some(&model), &dir.join("eval"))?;
    Ok(Row {
        variant: variant.to_string(),
        ok: report.failures.is_empty(),
        psnr: Some(report.mean_psnr()),
        ssim: Some(report.mean_ssim()),
        steps: Some(summary.steps),
        final_loss: Some(summary.final_loss),
        seconds: Some(summary.seconds),
        train_corpus_sha256: Some(summary.corpus_sha256),
        test_corpus_sha256: Some(test_sha),
        error: (!report.failures.is_empty()).then(|| format!("{} evaluation failures", report.failures.len())),
    })
}

fn fmt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

fn markdown(report: &AblationReport) -> String {
    let mut s = String::from("| # | variant | PSNR (dB) | SSIM | steps | final loss | status |\n|---|---|---|---|---|---|---|\n");
    for (i, r) in report.rows.iter().enumerate() {
        let status = if r.ok { "ok".to_string() } else { format!("failed: {}", r.error.as_deref().unwrap_or("")) };
        s += &format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            i + 1,
            r.variant,
            fmt(r.psnr, 3),
            fmt(r.ssim, 4),
            r.steps.map(|x| x.to_string()).unwrap_or_else(|| "-".into()),
            fmt(r.final_loss, 5),
            status.replace('|', "/")
        );
    }
    s += &format!(
        "\nDegraded input: PSNR {:.3} dB, SSIM {:.4}. Seed {}. Identical corpus bytes across variants: {}.\n",
        report.baseline_psnr,
        report.baseline_ssim,
        report.seed,
        if report.corpus_consistent { "yes" } else { "NO" }
    );
    s
}

fn write_csv(rows: &[Row], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variant", "ok", "psnr", "ssim", "steps", "final_loss", "train_corpus_sha256", "error"])?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.ok.to_string(),
            fmt(r.psnr, 6),
            fmt(r.ssim, 6),
            r.steps.map(|x| x.to_string()).unwrap_or_default(),
            fmt(r.final_loss, 6),
            r.train_corpus_sha256.clone().unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cfg: &RunConfig, a: &AblateArgs) -> Result<()> {
    let variants: Vec<String> = match &a.variants {
        Some(v) => v.clone(),
        None => Variant::ALL.iter().map(|v| v.to_string()).collect(),
    };
    let mut problems = train_problems(cfg);
    for p in eval_problems(cfg, None) {
        if !problems.contains(&p) {
            problems.push(p);
        }
    }
    for v in &variants {
        if let Err(e) = v.parse::<Variant>() {
            problems.push(e.to_string());
        }
    }
    ensure_valid(problems)?;

    let dir = cfg.run_dir();
    echo_config(cfg, &dir.join("config.toml"))?;
    let baseline = eval_into(cfg, None, &dir.join("baseline"))?;

    let mut rows = Vec::new();
    for v in &variants {
        let vdir = dir.join("ablate").join(v);
        fs::create_dir_all(&vdir).with_context(|| format!("creating {}", vdir.display()))?;
        log::info!("ablation: {v}");
        let row = one(cfg, v, &vdir).unwrap_or_else(|e| {
            log::error!("variant {v} failed: {e:#}");
            Row::failed(v, &e)
        });
        rows.push(row);
    }
    let hashes = |f: fn(&Row) -> &Option<String>| rows.iter().filter_map(|r| f(r).as_ref()).collect::<Vec<_>>();
    let consistent = |h: Vec<&String>| h.windows(2).all(|w| w[0] == w[1]);
    let corpus_consistent = consistent(hashes(|r| &r.train_corpus_sha256)) && consistent(hashes(|r| &r.test_corpus_sha256));
    let report = AblationReport {
        seed: cfg.train.seed,
        baseline_psnr: baseline.mean_psnr(),
        baseline_ssim: baseline.mean_ssim(),
        corpus_consistent,
        rows,
    };

    let table = markdown(&report);
    fs::write(dir.join("ablation.md"), &table)?;
    write_csv(&report.rows, &dir.join("ablation.csv"))?;
    write_json(&report, &dir.join("ablation.json"))?;
    let psnr: Vec<f64> = report.rows.iter().map(|r| r.psnr.unwrap_or(f64::NAN)).collect();
    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    save_image(&bar_chart("psnr by variant", &psnr)?, plots.join("ablation_psnr.png"), BitDepth::Eight)?;
    print!("{table}");

    let failed: Vec<&str> = report.rows.iter().filter(|r| !r.ok).map(|r| r.variant.as_str()).collect();
    if !failed.is_empty() {
        bail!("{} variant(s) failed: {}", failed.len(), failed.join(", "));
    }
    if !report.corpus_consistent {
        bail!("variants read different corpus bytes");
    }
    Ok(())
}
