use std::fs;

use anyhow::{bail, Context, Result};
use candle_core::{DType, Device};
use serde::Serialize;
use sshnet_core::imgcore::{save_image, BitDepth, Image};
use sshnet_core::sshnet::{extract_gate_maps, infer_tiled, montage, SshNet};
use sshnet_core::synth::{load_clean_images, CleanAccessCounter, Manifest, Split};
use sshnet_core::trainer::load_model;

use crate::config::{echo_config, ensure_valid, require_file, RunConfig};
use crate::util::write_json;
use crate::GatesArgs;

#[derive(Serialize)]
struct GateStats {
    id: String,
    mean: f64,
    std: f64,
    fraction_below: f64,
}

#[derive(Serialize)]
struct GatesReport {
    threshold: f32,
    /// Over every pixel of every image.
    fraction_below: f64,
    images: Vec<GateStats>,
    montage: String,
}

fn inputs(cfg: &RunConfig, a: &GatesArgs) -> Result<Vec<Image>> {
    let mut images = match &a.images {
        Some(dir) => load_clean_images(dir)?,
        None => {
            let manifest = Manifest::load(cfg.manifest_path(Split::Test))?;
            let counter = CleanAccessCounter::new();
            manifest
                .records
                .iter()
                .take(a.limit)
                .map(|r| Ok(r.load_pair(&manifest.root, &counter)?.x_wn))
                .collect::<Result<Vec<_>>>()?
        }
    };
    images.truncate(a.limit);
    Ok(images)
}

pub fn run(cfg: &RunConfig, a: &GatesArgs) -> Result<()> {
    let checkpoint = (!a.untrained).then(|| a.checkpoint.clone().unwrap_or_else(|| cfg.run_dir().join("checkpoints/latest.ckpt")));
    let mut problems = cfg.problems();
    if let Some(ck) = &checkpoint {
        require_file(&mut problems, "checkpoint", ck);
    }
    match &a.images {
        Some(dir) if !dir.is_dir() => problems.push(format!("image directory {} does not exist", dir.display())),
        Some(_) => {}
        None => require_file(&mut problems, "test manifest", &cfg.manifest_path(Split::Test)),
    }
    if a.limit == 0 {
        problems.push("limit must be at least 1".into());
    }
    ensure_valid(problems)?;

    let out = a.out.clone().unwrap_or_else(|| cfg.run_dir().join("plots/gates"));
    echo_config(cfg, &out.join("gates.config.toml"))?;
    let model = match &checkpoint {
        Some(ck) => load_model(ck, &Device::Cpu, DType::F32)?.0,
        None => SshNet::new(&cfg.model, &Device::Cpu, DType::F32, cfg.train.seed)?,
    };
    if !model.config().variant.has_ffu() {
        bail!("variant {} has no fusion gate", model.config().variant);
    }
    if a.zero_gate {
        let n = model.params().zero_where(|name| name.starts_with("ffu.gate2"))?;
        log::info!("zeroed {n} gate-head tensors");
    }

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut rows = Vec::new();
    let mut stats = Vec::new();
    let (mut below, mut total) = (0.0, 0usize);
    for img in inputs(cfg, a)? {
        let gate = extract_gate_maps(&model, &img)?;
        let restored = infer_tiled(&model, &img)?;
        save_image(&gate.to_heatmap(&img.id), out.join(format!("{}_gate.png", img.id)), BitDepth::Eight)?;
        let n = gate.values.len();
        let frac = gate.fraction_below(a.threshold);
        below += frac * n as f64;
        total += n;
        stats.push(GateStats { id: img.id.clone(), mean: gate.mean(), std: gate.std(), fraction_below: frac });
        rows.push((img, restored, gate));
    }
    let montage_path = out.join("montage.png");
    save_image(&montage(&rows)?, &montage_path, BitDepth::Eight)?;
    let report = GatesReport {
        threshold: a.threshold,
        fraction_below: below / total as f64,
        images: stats,
        montage: montage_path.display().to_string(),
    };
    write_json(&report, &out.join("gates.json"))?;
    for s in &report.images {
        println!("{}: mean {:.4} std {:.4} below {} {:.4}", s.id, s.mean, s.std, a.threshold, s.fraction_below);
    }
    println!(
        "fraction of gate weights below {}: {:.4} over {} images; montage {}",
        a.threshold,
        report.fraction_below,
        report.images.len(),
        montage_path.display()
    );
    Ok(())
}
