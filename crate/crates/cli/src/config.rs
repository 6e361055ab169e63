use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sshnet_core::imgcore::PsnrDomain;
use sshnet_core::sshnet::ModelConfig;
use sshnet_core::synth::{CorpusConfig, Manifest, Split};
use sshnet_core::trainer::TrainConfig;

/// Everything a run needs, in one TOML document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub runs_dir: PathBuf,
    /// Safetensors VGG16 weights for the texture loss; only read when `train.alpha > 0`.
    pub extractor: Option<PathBuf>,
    pub corpus: CorpusSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Directory of clean PNG images for synthesis.
    pub images: Option<PathBuf>,
    /// Directory of RGBA watermark PNGs; the built-in set when absent.
    pub assets: Option<PathBuf>,
    /// Corpus root holding `train.jsonl` and `test.jsonl`.
    pub root: PathBuf,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub seed: u64,
    pub synth: CorpusConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub psnr_domain: PsnrDomain,
    /// VGG16 weights for LPIPS; LPIPS is skipped when absent.
    pub lpips_vgg: Option<PathBuf>,
    pub lpips_lin: Option<PathBuf>,
    pub dump_images: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub size: usize,
    pub runs: usize,
    pub warmup: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            runs_dir: "runs".into(),
            extractor: None,
            corpus: CorpusSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            images: None,
            assets: None,
            root: "corpus".into(),
            train_manifest: None,
            test_manifest: None,
            seed: 0,
            synth: CorpusConfig::default(),
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { psnr_domain: PsnrDomain::Rgb, lpips_vgg: None, lpips_lin: None, dump_images: false }
    }
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { size: 256, runs: 50, warmup: 10 }
    }
}

/// One `key.path = value` override.
pub type Override = (String, toml::Value);

/// Parses `a.b=value`; the value is read as TOML and falls back to a bare string.
pub fn parse_set(s: &str) -> Result<Override> {
    let (key, raw) = s.split_once('=').with_context(|| format!("override {s:?} is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("override {s:?} has an empty key");
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn apply(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut table = root;
    for p in parts {
        let entry = table.entry(p).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().with_context(|| format!("{key}: {p} is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path` (defaults when `None`) and applies overrides in order.
    pub fn resolve(path: Option<&Path>, overrides: &[Override]) -> Result<RunConfig> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            apply(&mut table, k, v.clone())?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().context("config does not match the expected schema")?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Problems that hold regardless of command.
    pub fn problems(&self) -> Vec<String> {
        let mut p: Vec<String> = Vec::new();
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            p.push(format!("name {:?} must be a plain directory name", self.name));
        }
        p.extend(self.model.problems().into_iter().map(|m| format!("model: {m}")));
        p.extend(self.train.problems().into_iter().map(|m| format!("train: {m}")));
        if let Err(e) = self.corpus.synth.ranges.validate() {
            p.push(format!("corpus.synth.ranges: {e}"));
        }
        if self.bench.size == 0 || self.bench.size % 16 != 0 {
            p.push(format!("bench: size {} must be a positive multiple of 16", self.bench.size));
        }
        if self.bench.runs == 0 {
            p.push("bench: runs must be at least 1".into());
        }
        p
    }

    pub fn manifest_path(&self, split: Split) -> PathBuf {
        let explicit = match split {
            Split::Train => &self.corpus.train_manifest,
            Split::Test => &self.corpus.test_manifest,
        };
        explicit.clone().unwrap_or_else(|| Manifest::path_for(&self.corpus.root, split))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(&self.name)
    }
}

/// Fails with every problem listed, one per line.
pub fn ensure_valid(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = problems.iter().map(|p| format!("  - {p}")).collect();
    bail!("{} configuration problem(s):\n{}", problems.len(), list.join("\n"))
}

pub fn require_file(problems: &mut Vec<String>, what: &str, path: &Path) {
    if !path.is_file() {
        problems.push(format!("{what} {} does not exist", path.display()));
    }
}

/// Writes the resolved configuration before any work starts.
pub fn echo_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))
}
