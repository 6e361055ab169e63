use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::assets::WatermarkAsset;
use super::composite::CorruptionSpec;
use super::sample::{make_sample, CleanAccessCounter, CorruptionRanges, SamplePair};
use crate::error::{Error, Result};
use crate::imgcore::{load_image, save_image, save_image_affine16, BitDepth, Image, SeedSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// How training pairs are refreshed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Every stored variant is used as is.
    #[default]
    PreBaked,
    /// Noise and the extra watermark are re-drawn every epoch from the stored `x_w`.
    PerEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub split: Split,
    pub ranges: CorruptionRanges,
    /// Training variants per clean image.
    pub variants_per_image: usize,
    pub train_mode: TrainMode,
    /// Write 8-bit clamped copies for inspection.
    pub previews: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            split: Split::Train,
            ranges: CorruptionRanges::default(),
            variants_per_image: 1,
            train_mode: TrainMode::PreBaked,
            previews: true,
        }
    }
}

/// Paths relative to the corpus root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePaths {
    pub x_wn: String,
    pub x_w: String,
    pub y_w: String,
    pub y_clean: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub paths: SamplePaths,
    pub spec: CorruptionSpec,
    pub extra_spec: CorruptionSpec,
    pub seed: SeedSpec,
}

impl ManifestRecord {
    /// Loads the stored images. Ground truth stays behind `counter`.
    pub fn load_pair(&self, root: &Path, counter: &CleanAccessCounter) -> Result<SamplePair> {
        let load = |rel: &str| load_image(root.join(rel)).map(|img| img.with_id(self.id.clone()));
        let y_clean = self.paths.y_clean.as_deref().map(load).transpose()?;
        let pair = SamplePair::new(
            load(&self.paths.x_wn)?,
            load(&self.paths.x_w)?,
            load(&self.paths.y_w)?,
            y_clean,
            self.spec.clone(),
            self.extra_spec.clone(),
        )?;
        Ok(pair.with_counter(counter.clone()))
    }
}

/// A JSON-lines manifest plus the directory its paths are relative to.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn path_for(root: &Path, split: Split) -> PathBuf {
        root.join(format!("{}.jsonl", split.as_str()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ManifestRecord>, _>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { root, records })
    }

    /// Writes through a temporary file and renames, so readers never see a partial manifest.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut body = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut body, r)?;
            body.push(b'\n');
        }
        let tmp = path.with_extension("jsonl.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&body).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// SHA-256 over every record and every referenced file, in manifest order.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(serde_json::to_vec(r)?);
            let p = &r.paths;
            for rel in [Some(&p.x_wn), Some(&p.x_w), Some(&p.y_w), p.y_clean.as_ref()].into_iter().flatten() {
                let full = self.root.join(rel);
                h.update(fs::read(&full).map_err(|e| Error::io(&full, e))?);
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Sorted `*.png` files directly inside `dir`.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every PNG in `dir` as a clean image.
pub fn load_clean_images(dir: impl AsRef<Path>) -> Result<Vec<Image>> {
    let dir = dir.as_ref();
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no PNG images in {}", dir.display())));
    }
    paths.iter().map(load_image).collect()
}

/// Reads clean images and assets from disk and builds one split.
pub fn build_corpus(
    image_dir: impl AsRef<Path>,
    assets_dir: impl AsRef<Path>,
    config: &CorpusConfig,
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<Manifest> {
    let images = load_clean_images(image_dir)?;
    let assets = super::assets::load_assets(assets_dir)?;
    build_corpus_from(&images, &assets, config, out_dir, seed)
}

struct Job {
    image: usize,
    id: String,
    ranges: CorruptionRanges,
}

fn fmt_level(x: f32) -> String {
    format!("{}", (x * 100.0).round() as i64)
}

fn plan(images: &[Image], assets: &[WatermarkAsset], config: &CorpusConfig) -> Result<Vec<Job>> {
    let r = &config.ranges;
    let mut jobs = Vec::new();
    match config.split {
        Split::Train => {
            if config.variants_per_image == 0 {
                return Err(Error::Config("variants_per_image must be at least 1".into()));
            }
            for (i, img) in images.iter().enumerate() {
                for v in 0..config.variants_per_image {
                    jobs.push(Job { image: i, id: format!("{}_v{v:02}", img.id), ranges: r.clone() });
                }
            }
        }
        Split::Test => {
            let marks: Vec<usize> = if r.watermarks.is_empty() { (0..assets.len()).collect() } else { r.watermarks.clone() };
            for (i, img) in images.iter().enumerate() {
                for &w in &marks {
                    for &s in &r.sigmas {
                        for &a in &r.transparencies {
                            let ranges = CorruptionRanges {
                                watermarks: vec![w],
                                sigmas: vec![s],
                                transparencies: vec![a],
                                ..r.clone()
                            };
                            let id = format!("{}_w{w:02}_s{}_a{}", img.id, s.round() as i64, fmt_level(a));
                            jobs.push(Job { image: i, id, ranges });
                        }
                    }
                }
            }
        }
    }
    Ok(jobs)
}

/// Builds one split from in-memory images. Output depends only on the inputs and `seed`.
///
/// Layout: `{out}/{split}.jsonl` and `{out}/{split}/{id}_{role}.png`, plus
/// `{out}/{split}/preview/` when previews are enabled.
pub fn build_corpus_from(
    images: &[Image],
    assets: &[WatermarkAsset],
    config: &CorpusConfig,
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<Manifest> {
    if images.is_empty() {
        return Err(Error::Invalid("no clean images supplied".into()));
    }
    if assets.is_empty() {
        return Err(Error::Invalid("no watermark assets supplied".into()));
    }
    config.ranges.validate()?;
    let out_dir = out_dir.as_ref();
    let split = config.split;
    let sub = split.as_str();
    let dir = out_dir.join(sub);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let jobs = plan(images, assets, config)?;
    let records = jobs
        .par_iter()
        .map(|job| {
            let seed = SeedSpec::new(seed, format!("{sub}/{}", job.id));
            let pair = make_sample(&images[job.image], assets, &job.ranges, &seed)?;
            let rel = |role: &str| format!("{sub}/{}_{role}.png", job.id);
            let paths = SamplePaths {
                x_wn: rel("x_wn"),
                x_w: rel("x_w"),
                y_w: rel("y_w"),
                y_clean: (split == Split::Test).then(|| rel("y_clean")),
            };
            save_image_affine16(&pair.x_wn, out_dir.join(&paths.x_wn))?;
            save_image(&pair.x_w, out_dir.join(&paths.x_w), BitDepth::Sixteen)?;
            save_image(&pair.y_w, out_dir.join(&paths.y_w), BitDepth::Sixteen)?;
            if let Some(p) = &paths.y_clean {
                save_image(&images[job.image], out_dir.join(p), BitDepth::Sixteen)?;
            }
            if config.previews {
                for (role, img) in [("x_wn", &pair.x_wn), ("x_w", &pair.x_w), ("y_w", &pair.y_w)] {
                    let p = out_dir.join(format!("{sub}/preview/{}_{role}.png", job.id));
                    save_image(img, p, BitDepth::Eight)?;
                }
            }
            Ok(ManifestRecord {
                id: job.id.clone(),
                split,
                paths,
                spec: pair.spec.clone(),
                extra_spec: pair.extra_spec.clone(),
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest { root: out_dir.to_path_buf(), records };
    manifest.save(Manifest::path_for(out_dir, split))?;
    log::info!("wrote {} {} samples to {}", manifest.len(), sub, out_dir.display());
    Ok(manifest)
}
