use std::path::Path;

use anyhow::{Context, Result};
use sshnet_core::imgcore::{save_image, BitDepth};
use sshnet_core::synth::{build_corpus_from, builtin_assets, load_clean_images, procedural_scenes, save_assets, Manifest};

use crate::config::{echo_config, ensure_valid, RunConfig};
use crate::util::assets;
use crate::ScenesArgs;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let mut problems = cfg.corpus.synth.ranges.validate().err().map(|e| vec![e.to_string()]).unwrap_or_default();
    match &cfg.corpus.images {
        None => problems.push("corpus.images (--images) is required".into()),
        Some(p) if !p.is_dir() => problems.push(format!("image directory {} does not exist", p.display())),
        Some(_) => {}
    }
    if let Some(p) = cfg.corpus.assets.as_ref().filter(|p| !p.is_dir()) {
        problems.push(format!("asset directory {} does not exist", p.display()));
    }
    ensure_valid(problems)?;

    let split = cfg.corpus.synth.split;
    let root = &cfg.corpus.root;
    echo_config(cfg, &root.join(format!("{}.config.toml", split.as_str())))?;

    let images = load_clean_images(cfg.corpus.images.as_ref().expect("checked above"))?;
    let assets = assets(cfg)?;
    log::info!("synthesising {} split from {} images and {} assets", split.as_str(), images.len(), assets.len());
    let manifest = build_corpus_from(&images, &assets, &cfg.corpus.synth, root, cfg.corpus.seed)?;
    let path = Manifest::path_for(root, split);
    let digest = manifest.digest()?;
    println!("manifest {} records {} sha256 {digest}", path.display(), manifest.len());
    Ok(())
}

pub fn gen_assets(out: &Path) -> Result<()> {
    let assets = builtin_assets();
    save_assets(&assets, out)?;
    println!("wrote {} assets to {}", assets.len(), out.display());
    Ok(())
}

pub fn scenes(a: &ScenesArgs, seed: u64) -> Result<()> {
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for img in procedural_scenes(a.count, a.height, a.width, seed, &a.prefix) {
        save_image(&img, a.out.join(format!("{}.png", img.id)), BitDepth::Eight)?;
    }
    println!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}
