use std::time::Instant;

use anyhow::Result;
use candle_core::{DType, Device};
use serde::Serialize;
use sshnet_core::imgcore::SeedSpec;
use sshnet_core::sshnet::{ModelConfig, SshNet, Variant};
use sshnet_core::synth::procedural_scene;

use crate::config::{echo_config, ensure_valid, RunConfig};
use crate::util::{peak_rss_bytes, write_json};
use crate::BenchArgs;

/// Relative bands around the reference parameter and compute figures.
const PARAM_TOLERANCE: f64 = 0.20;
const COMPUTE_TOLERANCE: f64 = 0.25;

/// Published `(parameters, compute)` at 256×256; compute counts multiply-accumulates.
fn reference(variant: Variant) -> Option<(f64, f64)> {
    match variant {
        Variant::Full => Some((5.89e6, 18.21e9)),
        Variant::DualEncoders => Some((6.04e6, 21.62e9)),
        _ => None,
    }
}

#[derive(Serialize)]
struct Counts {
    params: usize,
    macs: u64,
    flops: u64,
}

#[derive(Serialize)]
struct Check {
    reference: f64,
    measured: f64,
    relative_delta: f64,
    tolerance: f64,
    pass: bool,
}

impl Check {
    fn new(reference: f64, measured: f64, tolerance: f64) -> Self {
        let relative_delta = (measured - reference) / reference;
        Check { reference, measured, relative_delta, tolerance, pass: relative_delta.abs() <= tolerance }
    }
}

#[derive(Serialize)]
struct Latency {
    runs: usize,
    warmup: usize,
    mean_ms: f64,
    std_ms: f64,
    min_ms: f64,
}

#[derive(Serialize)]
struct BenchReport {
    variant: Variant,
    size: usize,
    /// Whether every architectural setting other than the variant is at its default.
    default_architecture: bool,
    counts: Counts,
    /// Counts at twice the side length.
    counts_double: Counts,
    flops_ratio_double: f64,
    params_check: Option<Check>,
    /// Compared as multiply-accumulates; FLOPs are twice this.
    compute_check: Option<Check>,
    /// The full variant at the same settings, for relative comparisons.
    full: Option<Counts>,
    latency: Option<Latency>,
    peak_rss_bytes: Option<u64>,
}

fn counts(model: &SshNet, size: usize) -> Counts {
    Counts { params: model.count_params(), macs: model.count_macs(size, size), flops: model.count_flops(size, size) }
}

fn time_forward(model: &SshNet, size: usize, runs: usize, warmup: usize, seed: u64) -> Result<Latency> {
    let input = procedural_scene(size, size, &SeedSpec::new(seed, "bench")).to_tensor(&Device::Cpu, DType::F32)?;
    for _ in 0..warmup {
        model.predict(&input)?;
    }
    let mut ms = Vec::with_capacity(runs);
    for i in 0..runs {
        let t = Instant::now();
        model.predict(&input)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
        log::debug!("run {}/{runs}: {:.1} ms", i + 1, ms[i]);
    }
    let mean = ms.iter().sum::<f64>() / runs as f64;
    let std = (ms.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / runs as f64).sqrt();
    let min_ms = ms.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Latency { runs, warmup, mean_ms: mean, std_ms: std, min_ms })
}

pub fn run(cfg: &RunConfig, a: &BenchArgs) -> Result<()> {
    ensure_valid(cfg.problems())?;
    let out = cfg.run_dir().join("bench");
    echo_config(cfg, &out.join("bench.config.toml"))?;
    let size = cfg.bench.size;
    let variant = cfg.model.variant;
    let model = SshNet::new(&cfg.model, &Device::Cpu, DType::F32, cfg.train.seed)?;
    let here = counts(&model, size);
    let double = counts(&model, 2 * size);
    let at_256 = (model.count_params() as f64, model.count_macs(256, 256) as f64);
    let default_architecture = ModelConfig::default().with_variant(variant) == cfg.model;
    let full = (variant != Variant::Full)
        .then(|| SshNet::new(&cfg.model.clone().with_variant(Variant::Full), &Device::Cpu, DType::F32, cfg.train.seed))
        .transpose()?
        .map(|m| counts(&m, size));
    let latency = if a.no_latency {
        None
    } else {
        log::info!("timing {} forward passes at {size}x{size} after {} warm-ups", cfg.bench.runs, cfg.bench.warmup);
        Some(time_forward(&model, size, cfg.bench.runs, cfg.bench.warmup, cfg.train.seed)?)
    };
    let reference = reference(variant);
    let report = BenchReport {
        variant,
        size,
        default_architecture,
        flops_ratio_double: double.flops as f64 / here.flops as f64,
        params_check: reference.map(|(p, _)| Check::new(p, at_256.0, PARAM_TOLERANCE)),
        compute_check: reference.map(|(_, c)| Check::new(c, at_256.1, COMPUTE_TOLERANCE)),
        counts: here,
        counts_double: double,
        full,
        latency,
        peak_rss_bytes: peak_rss_bytes(),
    };

    println!("variant {variant} at {size}x{size}");
    println!("  params {:.3}M", report.counts.params as f64 / 1e6);
    println!("  MACs {:.3}G  FLOPs {:.3}G", report.counts.macs as f64 / 1e9, report.counts.flops as f64 / 1e9);
    println!("  FLOPs at {0}x{0} / FLOPs at {1}x{1} = {2:.3}", 2 * size, size, report.flops_ratio_double);
    let show = |what: &str, c: &Check, unit: f64, suffix: &str| {
        println!(
            "  {what}: {:.3}{suffix} vs reference {:.3}{suffix} ({:+.1}%, tol {:.0}%) {}",
            c.measured / unit,
            c.reference / unit,
            100.0 * c.relative_delta,
            100.0 * c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        );
    };
    if let Some(c) = &report.params_check {
        show("params", c, 1e6, "M");
    }
    if let Some(c) = &report.compute_check {
        show("MACs at 256x256", c, 1e9, "G");
    }
    if !report.default_architecture && reference.is_some() {
        println!("  note: architecture differs from the default; reference checks are indicative only");
    }
    if let Some(f) = &report.full {
        println!(
            "  full variant: params {:.3}M, MACs {:.3}G ({:+.3}M, {:+.3}G)",
            f.params as f64 / 1e6,
            f.macs as f64 / 1e9,
            (report.counts.params as f64 - f.params as f64) / 1e6,
            (report.counts.macs as f64 - f.macs as f64) / 1e9
        );
    }
    if let Some(l) = &report.latency {
        println!("  latency {:.1} ms mean, {:.1} ms std, {:.1} ms min over {} runs", l.mean_ms, l.std_ms, l.min_ms, l.runs);
    }
    if let Some(b) = report.peak_rss_bytes {
        println!("  peak resident memory {:.1} MiB", b as f64 / (1 << 20) as f64);
    }
    write_json(&report, &out.join("bench.json"))?;
    println!("report written to {}", out.join("bench.json").display());
    Ok(())
}
