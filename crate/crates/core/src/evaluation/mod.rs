//! Image-quality metrics, evaluation reports and comparison grids.

mod grid;
mod lpips;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use grid::{make_grid, render_grid, CAPTION_HEIGHT};
pub use lpips::{lpips, Backbone, BackboneSpec, ConvBackbone, ConvLayer};

use crate::dataio::FaceSample;
use crate::error::{Error, Result};
use crate::image::Image;
pub use crate::losses::ssim;
use crate::losses::LossWeights;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio for unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sample_id: String,
    pub ssim: f64,
    pub psnr: f64,
    pub lpips: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub ssim: f64,
    pub psnr: f64,
    pub lpips: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub checkpoint: String,
    pub dataset: String,
    /// Backbone id, or `"none"`.
    pub lpips_backbone: String,
    /// False when LPIPS comes from a backbone whose values cannot be compared with published ones.
    pub lpips_comparable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub meta: ReportMeta,
    pub rows: Vec<MetricsRow>,
    pub aggregate: Aggregate,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

impl MetricsReport {
    pub fn from_rows(meta: ReportMeta, rows: Vec<MetricsRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("no rows to aggregate".into()));
        }
        let lpips = if rows.iter().all(|r| r.lpips.is_some()) {
            Some(mean(rows.iter().map(|r| r.lpips.unwrap())))
        } else {
            None
        };
        let aggregate = Aggregate {
            ssim: mean(rows.iter().map(|r| r.ssim)),
            psnr: mean(rows.iter().map(|r| r.psnr)),
            lpips,
        };
        Ok(Self { meta, rows, aggregate })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Metrics of one reconstruction against its ground truth.
pub fn score_pair(sample_id: &str, rec: &Image, gt: &Image, backbone: Option<&dyn Backbone>) -> Result<MetricsRow> {
    Ok(MetricsRow {
        sample_id: sample_id.to_string(),
        ssim: ssim(rec, gt)?,
        psnr: psnr(rec, gt)?,
        lpips: backbone.map(|b| lpips(rec, gt, b)).transpose()?,
    })
}

pub fn sample_id(s: &FaceSample) -> String {
    format!("{}/{:06}", s.subject_id, s.frame_id)
}

/// Scores `reconstruct(sample)` against each sample's ground truth on full images.
pub fn evaluate_with(
    samples: &[FaceSample],
    reconstruct: impl Fn(&FaceSample) -> Result<Image>,
    backbone: Option<&dyn Backbone>,
    checkpoint: &str,
    dataset: &str,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation split is empty".into()));
    }
    let rows = samples
        .iter()
        .map(|s| score_pair(&sample_id(s), &reconstruct(s)?, &s.gt, backbone))
        .collect::<Result<Vec<_>>>()?;
    let meta = ReportMeta {
        checkpoint: checkpoint.to_string(),
        dataset: dataset.to_string(),
        lpips_backbone: backbone.map(|b| b.id()).unwrap_or_else(|| "none".into()),
        lpips_comparable: backbone.is_some_and(|b| b.comparable()),
    };
    MetricsReport::from_rows(meta, rows)
}

/// The four loss configurations of the loss ablation, cumulative in the order
/// reconstruction, adversarial, structural similarity, mask.
pub fn ablation_configs(base: &LossWeights) -> [(String, LossWeights); 4] {
    let only = |rec, adv, ssim, mask| LossWeights {
        lambda_rec: if rec { base.lambda_rec } else { 0.0 },
        lambda_adv: if adv { base.lambda_adv } else { 0.0 },
        lambda_ssim: if ssim { base.lambda_ssim } else { 0.0 },
        lambda_mask: if mask { base.lambda_mask } else { 0.0 },
    };
    [
        ("L_rec".to_string(), only(true, false, false, false)),
        ("L_rec+L_adv".to_string(), only(true, true, false, false)),
        ("L_rec+L_adv+L_ssim".to_string(), only(true, true, true, false)),
        ("L_rec+L_adv+L_ssim+L_mask".to_string(), only(true, true, true, true)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub checkpoint: String,
    pub ssim: f64,
    pub psnr: f64,
    pub lpips: Option<f64>,
}

/// One row per loss configuration with the three aggregate metric columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub lpips_backbone: String,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn from_reports(entries: &[(String, MetricsReport)]) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::EmptyInput("ablation needs at least one checkpoint".into()))?;
        Ok(Self {
            dataset: first.1.meta.dataset.clone(),
            lpips_backbone: first.1.meta.lpips_backbone.clone(),
            rows: entries
                .iter()
                .map(|(method, r)| AblationRow {
                    method: method.clone(),
                    checkpoint: r.meta.checkpoint.clone(),
                    ssim: r.aggregate.ssim,
                    psnr: r.aggregate.psnr,
                    lpips: r.aggregate.lpips,
                })
                .collect(),
        })
    }

    /// Plain-text table in the layout Method | SSIM | PSNR | LPIPS.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  {:>6}  {:>7}  {:>6}\n", "Method", "SSIM", "PSNR", "LPIPS");
        for r in &self.rows {
            let lp = r.lpips.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
            out += &format!("{:<width$}  {:>6.3}  {:>7.3}  {:>6}\n", r.method, r.ssim, r.psnr, lp);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
