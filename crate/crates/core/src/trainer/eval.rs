use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{psnr, psnr_luma, save_image, ssim_y, BitDepth, Image, PsnrDomain};
use crate::losses::Lpips;
use crate::sshnet::{infer_branches, infer_tiled, SshNet};
use crate::synth::{CleanAccessCounter, Manifest};

/// Anything that maps a corrupted image to a restored one of the same size.
pub trait Restorer {
    fn restore(&self, input: &Image) -> Result<Image>;
}

impl Restorer for SshNet {
    fn restore(&self, input: &Image) -> Result<Image> {
        infer_tiled(self, input)
    }
}

/// Returns its input; scores the degradation baseline.
pub struct IdentityRestorer;

impl Restorer for IdentityRestorer {
    fn restore(&self, input: &Image) -> Result<Image> {
        Ok(input.clone())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub sigma: f64,
    pub alpha_w: f64,
    #[serde(with = "crate::imgcore::inf_as_string")]
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Values entering the statistics; infinite scores are excluded.
    pub count: usize,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64>) -> Stat {
        let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Stat::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Stat { mean, std, count: v.len() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupSummary {
    /// Condition of the group; absent for the overall summary.
    pub sigma: Option<f64>,
    pub alpha_w: Option<f64>,
    pub n: usize,
    pub psnr: Stat,
    pub ssim: Stat,
    pub lpips: Option<Stat>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalFailure {
    pub id: String,
    pub error: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<EvalItem>,
    pub groups: Vec<GroupSummary>,
    pub overall: GroupSummary,
    pub failures: Vec<EvalFailure>,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        self.overall.psnr.mean
    }

    pub fn mean_ssim(&self) -> f64 {
        self.overall.ssim.mean
    }

    /// Writes `metrics.json` and `metrics.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("metrics.json");
        fs::write(&json, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let csv_path = dir.join("metrics.csv");
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["id", "sigma", "alpha_w", "psnr", "ssim", "lpips"])?;
        for it in &self.items {
            w.write_record([
                it.id.clone(),
                it.sigma.to_string(),
                it.alpha_w.to_string(),
                if it.psnr.is_infinite() { "inf".into() } else { format!("{:.6}", it.psnr) },
                format!("{:.6}", it.ssim),
                it.lpips.map(|l| format!("{l:.6}")).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        Ok(())
    }
}

#[derive(Default)]
pub struct EvalOptions<'a> {
    pub psnr_domain: PsnrDomain,
    pub lpips: Option<&'a Lpips>,
    /// Restored PNGs are written here when set.
    pub dump_dir: Option<PathBuf>,
    /// Also dump the per-branch outputs of this model.
    pub dump_branches: Option<&'a SshNet>,
}

fn summarize(sigma: Option<f64>, alpha_w: Option<f64>, items: &[&EvalItem]) -> GroupSummary {
    let has_lpips = items.iter().any(|i| i.lpips.is_some());
    GroupSummary {
        sigma,
        alpha_w,
        n: items.len(),
        psnr: Stat::of(items.iter().map(|i| i.psnr)),
        ssim: Stat::of(items.iter().map(|i| i.ssim)),
        lpips: has_lpips.then(|| Stat::of(items.iter().filter_map(|i| i.lpips))),
    }
}

/// Scores `restorer` on every record that has ground truth.
///
/// Items that fail are recorded and excluded from the aggregates.
pub fn evaluate(restorer: &dyn Restorer, manifest: &Manifest, opts: &EvalOptions<'_>) -> Result<EvalReport> {
    let counter = CleanAccessCounter::new();
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for rec in &manifest.records {
        let outcome = (|| -> Result<EvalItem> {
            let pair = rec.load_pair(&manifest.root, &counter)?;
            let clean = pair
                .y_clean()
                .ok_or_else(|| Error::Invalid(format!("record {} has no ground truth", rec.id)))?
                .clone();
            let restored = restorer.restore(&pair.x_wn)?;
            restored.same_shape(&clean)?;
            let p = match opts.psnr_domain {
                PsnrDomain::Rgb => psnr(&restored, &clean, 1.0)?,
                PsnrDomain::Luma => psnr_luma(&restored, &clean, 1.0)?,
            };
            let s = ssim_y(&restored, &clean)?;
            let l = opts.lpips.map(|m| m.distance(&restored, &clean)).transpose()?;
            if let Some(dir) = &opts.dump_dir {
                save_image(&restored, dir.join(format!("{}_y_hat.png", rec.id)), BitDepth::Eight)?;
                if let Some(model) = opts.dump_branches {
                    let b = infer_branches(model, &pair.x_wn)?;
                    for (role, img) in [("y_n", b.y_n), ("y_wn", b.y_wn)] {
                        if let Some(img) = img {
                            save_image(&img, dir.join(format!("{}_{role}.png", rec.id)), BitDepth::Eight)?;
                        }
                    }
                }
            }
            Ok(EvalItem {
                id: rec.id.clone(),
                sigma: rec.spec.noise_sigma as f64,
                alpha_w: rec.spec.transparency as f64,
                psnr: p,
                ssim: s,
                lpips: l,
            })
        })();
        match outcome {
            Ok(item) => items.push(item),
            Err(e) => {
                log::warn!("evaluation of {} failed: {e}", rec.id);
                failures.push(EvalFailure { id: rec.id.clone(), error: e.to_string() });
            }
        }
    }
    if items.is_empty() {
        return Err(Error::Invalid(format!("no record could be evaluated ({} failures)", failures.len())));
    }
    let mut groups: BTreeMap<(u64, u64), Vec<&EvalItem>> = BTreeMap::new();
    for it in &items {
        groups.entry((it.sigma.to_bits(), it.alpha_w.to_bits())).or_default().push(it);
    }
    let group_list = groups
        .values()
        .map(|g| summarize(Some(g[0].sigma), Some(g[0].alpha_w), g))
        .collect();
    let all: Vec<&EvalItem> = items.iter().collect();
    let overall = summarize(None, None, &all);
    Ok(EvalReport { groups: group_list, overall, items, failures })
}
