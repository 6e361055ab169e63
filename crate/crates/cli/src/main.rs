//! `sshnet`: corpus synthesis, training, evaluation, benchmarking, ablations
//! and gate-map plots over one TOML run configuration.

mod ablate;
mod bench;
mod config;
mod gates;
mod plot;
mod synth;
mod train;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{parse_set, Override, RunConfig};

#[derive(Parser)]
#[command(name = "sshnet", version, about = "Self-supervised watermark and noise removal")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.lr0=5e-4`. Repeatable; applied before typed flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_set)]
    set: Vec<Override>,
    /// Run name; outputs go to `<runs_dir>/<name>/`.
    #[arg(long, global = true)]
    name: Option<String>,
    /// Global seed for model initialisation, batching and synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise one corpus split from clean images and watermark assets.
    Synth(SynthArgs),
    /// Train a model; writes checkpoints, logs and a loss plot.
    Train(TrainArgs),
    /// Score a checkpoint on a test manifest.
    Eval(EvalArgs),
    /// Parameter count, compute and forward latency.
    Bench(BenchArgs),
    /// Train and evaluate several variants on one corpus with shared seeds.
    Ablate(AblateArgs),
    /// Render fusion-gate heat maps and a montage.
    Gates(GatesArgs),
    /// Write the built-in watermark assets as PNGs.
    GenAssets {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write procedural clean scenes as PNGs.
    Scenes(ScenesArgs),
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    assets: Option<PathBuf>,
    /// Corpus root; the manifest is written to `<out>/<split>.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["train", "test"])]
    split: Option<String>,
    /// Noise levels on the 0-255 scale.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f32>>,
    /// Watermark transparency levels.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f32>>,
    #[arg(long)]
    coverage_max: Option<f32>,
    /// Scale interval as `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    scales: Option<Vec<f32>>,
    #[arg(long, value_parser = ["literal", "independent"])]
    pairing_mode: Option<String>,
    /// Asset indices to use; all when omitted.
    #[arg(long, value_delimiter = ',')]
    watermarks: Option<Vec<i64>>,
    /// Training variants per clean image.
    #[arg(long)]
    variants: Option<i64>,
    #[arg(long)]
    no_previews: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    variant: Option<String>,
    /// Texture loss weight; 0 needs no feature extractor.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<i64>,
    #[arg(long)]
    batch: Option<i64>,
    #[arg(long)]
    crop: Option<i64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_steps: Option<i64>,
    /// Training manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Held-out manifest for periodic evaluation.
    #[arg(long)]
    test_manifest: Option<PathBuf>,
    /// VGG16 safetensors weights for the texture loss.
    #[arg(long)]
    extractor: Option<PathBuf>,
    /// Continue from `checkpoints/latest.ckpt` when present.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Defaults to the run's `checkpoints/latest.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Score the degraded inputs instead of a model.
    #[arg(long, conflicts_with = "checkpoint")]
    identity: bool,
    /// Write `y_n`, `y_wn` and `y_hat` PNGs per test id.
    #[arg(long)]
    dump_images: bool,
    #[arg(long, value_parser = ["rgb", "luma"])]
    psnr_domain: Option<String>,
    #[arg(long)]
    lpips_vgg: Option<PathBuf>,
    #[arg(long)]
    lpips_lin: Option<PathBuf>,
    /// Output directory; defaults to `<run>/eval`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    size: Option<i64>,
    #[arg(long)]
    runs: Option<i64>,
    #[arg(long)]
    warmup: Option<i64>,
    /// Report counts only.
    #[arg(long)]
    no_latency: bool,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Variants to compare; all six when omitted.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    #[arg(long)]
    max_steps: Option<i64>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    test_manifest: Option<PathBuf>,
}

#[derive(Args)]
pub struct GatesArgs {
    #[arg(long, conflicts_with = "untrained")]
    checkpoint: Option<PathBuf>,
    /// Use a freshly initialised model built from the config.
    #[arg(long)]
    untrained: bool,
    /// Zero the gate head so every gate is exactly 0.5.
    #[arg(long)]
    zero_gate: bool,
    /// Directory of input PNGs; otherwise the test manifest inputs.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    limit: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    /// Defaults to `<run>/plots/gates`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScenesArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value = "scene")]
    prefix: String,
}

fn push<T: Into<toml::Value>>(o: &mut Vec<Override>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        o.push((key.to_string(), v.into()));
    }
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn floats(v: &Option<Vec<f32>>) -> Option<toml::Value> {
    v.as_ref().map(|v| toml::Value::Array(v.iter().map(|&x| toml::Value::Float(x as f64)).collect()))
}

/// Typed flags as config overrides, applied after `--set`.
fn overrides(cli: &Cli) -> Vec<Override> {
    let mut o = cli.set.clone();
    push(&mut o, "name", cli.name.clone());
    if let Some(seed) = cli.seed {
        let seed = seed as i64;
        push(&mut o, "train.seed", Some(seed));
        push(&mut o, "corpus.seed", Some(seed));
    }
    match &cli.command {
        Command::Synth(a) => {
            push(&mut o, "corpus.images", path(&a.images));
            push(&mut o, "corpus.assets", path(&a.assets));
            push(&mut o, "corpus.root", path(&a.out));
            push(&mut o, "corpus.synth.split", a.split.clone());
            push(&mut o, "corpus.synth.ranges.sigmas", floats(&a.sigmas));
            push(&mut o, "corpus.synth.ranges.transparencies", floats(&a.alphas));
            push(&mut o, "corpus.synth.ranges.coverage_max", a.coverage_max.map(f64::from));
            push(&mut o, "corpus.synth.ranges.scale", floats(&a.scales));
            push(&mut o, "corpus.synth.ranges.pairing_mode", a.pairing_mode.clone());
            push(&mut o, "corpus.synth.ranges.watermarks", a.watermarks.clone());
            push(&mut o, "corpus.synth.variants_per_image", a.variants);
            if a.no_previews {
                push(&mut o, "corpus.synth.previews", Some(false));
            }
        }
        Command::Train(a) => {
            push(&mut o, "model.variant", a.variant.clone());
            push(&mut o, "train.alpha", a.alpha);
            push(&mut o, "train.epochs", a.epochs);
            push(&mut o, "train.batch", a.batch);
            push(&mut o, "train.crop", a.crop);
            push(&mut o, "train.lr0", a.lr);
            push(&mut o, "train.max_steps", a.max_steps);
            push(&mut o, "corpus.train_manifest", path(&a.manifest));
            push(&mut o, "corpus.test_manifest", path(&a.test_manifest));
            push(&mut o, "extractor", path(&a.extractor));
        }
        Command::Eval(a) => {
            push(&mut o, "corpus.test_manifest", path(&a.manifest));
            push(&mut o, "eval.psnr_domain", a.psnr_domain.clone());
            push(&mut o, "eval.lpips_vgg", path(&a.lpips_vgg));
            push(&mut o, "eval.lpips_lin", path(&a.lpips_lin));
            if a.dump_images {
                push(&mut o, "eval.dump_images", Some(true));
            }
        }
        Command::Bench(a) => {
            push(&mut o, "model.variant", a.variant.clone());
            push(&mut o, "bench.size", a.size);
            push(&mut o, "bench.runs", a.runs);
            push(&mut o, "bench.warmup", a.warmup);
        }
        Command::Ablate(a) => {
            push(&mut o, "train.max_steps", a.max_steps);
            push(&mut o, "corpus.train_manifest", path(&a.manifest));
            push(&mut o, "corpus.test_manifest", path(&a.test_manifest));
        }
        Command::Gates(a) => push(&mut o, "corpus.test_manifest", path(&a.manifest)),
        Command::GenAssets { .. } | Command::Scenes(_) | Command::ShowConfig => {}
    }
    o
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides(cli))?;
    match &cli.command {
        Command::Synth(_) => synth::run(&cfg),
        Command::Train(a) => train::run_train(&cfg, a.resume).map(|_| ()),
        Command::Eval(a) => train::run_eval(&cfg, a),
        Command::Bench(a) => bench::run(&cfg, a),
        Command::Ablate(a) => ablate::run(&cfg, a),
        Command::Gates(a) => gates::run(&cfg, a),
        Command::GenAssets { out } => synth::gen_assets(out),
        Command::Scenes(a) => synth::scenes(a, cli.seed.unwrap_or(cfg.corpus.seed)),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
