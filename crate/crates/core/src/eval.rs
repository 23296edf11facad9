//! ROC-AUC, cross-dataset averaging and deltas against a baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve, `P(fake > real) + P(tie) / 2`, from the
/// Mann-Whitney rank sum with midranks for ties. Label 1 is the positive
/// (fake) class.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidShape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {l} is not 0 or 1")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps midranks integral
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    // U = R - p(p+1)/2, doubled
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub score: f64,
    pub label: u8,
    pub frames: usize,
}

/// Mean frame score per video, in order of first appearance.
pub fn frame_to_video_score<'a>(
    frames: impl IntoIterator<Item = (&'a str, f64, u8)>,
) -> Result<Vec<VideoScore>> {
    let mut out: Vec<VideoScore> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (video, score, label) in frames {
        match index.get(video) {
            Some(&i) => {
                let v = &mut out[i];
                if v.label != label {
                    return Err(Error::InvalidArgument(format!("video '{video}' has mixed labels")));
                }
                v.score += score;
                v.frames += 1;
            }
            None => {
                index.insert(video, out.len());
                out.push(VideoScore {
                    video_id: video.to_string(),
                    score,
                    label,
                    frames: 1,
                });
            }
        }
    }
    for v in &mut out {
        v.score /= v.frames as f64;
    }
    Ok(out)
}

/// Unweighted mean over datasets.
pub fn average_auc(per_dataset: &BTreeMap<String, f64>) -> Result<f64> {
    if per_dataset.is_empty() {
        return Err(Error::UndefinedMetric("no datasets to average".into()));
    }
    Ok(per_dataset.values().sum::<f64>() / per_dataset.len() as f64)
}

/// Difference of two average AUCs in percentage points.
pub fn delta_vs_baseline(avg: f64, baseline_avg: f64) -> f64 {
    (avg - baseline_avg) * 100.0
}

/// Mean of values given to `decimals` places, rounded half-up to the same
/// precision. Works in integer units so printed table cells are reproduced
/// without binary rounding surprises.
pub fn published_mean(values: &[f64], decimals: u32) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("empty column".into()));
    }
    let unit = 10f64.powi(decimals as i32);
    let mut sum: i64 = 0;
    for &v in values {
        let scaled = v * unit;
        if (scaled - scaled.round()).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("{v} has more than {decimals} decimals")));
        }
        sum += scaled.round() as i64;
    }
    let n = values.len() as i64;
    // floor((2 * sum + n) / (2n)) is half-up rounding of sum / n
    let rounded = (2 * sum + n).div_euclid(2 * n);
    Ok(rounded as f64 / unit)
}

/// Half-up rounding for display.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let unit = 10f64.powi(decimals as i32);
    // nudge past representation error so 0.125 style ties go up
    ((x * unit) + 0.5 + 1e-9).floor() / unit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub frame_auc: f64,
    pub video_auc: Option<f64>,
    pub frames: usize,
    pub videos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_dataset: BTreeMap<String, DatasetResult>,
    /// Mean frame-level AUC.
    pub avg_auc: f64,
    pub avg_video_auc: Option<f64>,
    pub baseline_name: Option<String>,
    pub delta_points: Option<f64>,
    /// Settings that produced the report, echoed for provenance.
    #[serde(default)]
    pub config: serde_json::Value,
}

/// One scored frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredFrame {
    pub dataset: String,
    pub video_id: String,
    pub score: f64,
    pub label: u8,
}

impl EvalReport {
    pub fn from_frames(frames: &[ScoredFrame]) -> Result<Self> {
        let mut grouped: BTreeMap<&str, Vec<&ScoredFrame>> = BTreeMap::new();
        for f in frames {
            grouped.entry(&f.dataset).or_default().push(f);
        }
        let mut per_dataset = BTreeMap::new();
        for (name, items) in grouped {
            let scores: Vec<f64> = items.iter().map(|f| f.score).collect();
            let labels: Vec<u8> = items.iter().map(|f| f.label).collect();
            let frame_auc = auc(&scores, &labels)?;
            let videos =
                frame_to_video_score(items.iter().map(|f| (f.video_id.as_str(), f.score, f.label)))?;
            let vs: Vec<f64> = videos.iter().map(|v| v.score).collect();
            let vl: Vec<u8> = videos.iter().map(|v| v.label).collect();
            per_dataset.insert(
                name.to_string(),
                DatasetResult {
                    frame_auc,
                    video_auc: auc(&vs, &vl).ok(),
                    frames: items.len(),
                    videos: videos.len(),
                },
            );
        }
        let frame_aucs = per_dataset
            .iter()
            .map(|(k, v)| (k.clone(), v.frame_auc))
            .collect();
        let avg_auc = average_auc(&frame_aucs)?;
        let video_aucs: Option<BTreeMap<String, f64>> = per_dataset
            .iter()
            .map(|(k, v)| v.video_auc.map(|a| (k.clone(), a)))
            .collect();
        Ok(Self {
            per_dataset,
            avg_auc,
            avg_video_auc: video_aucs.map(|m| average_auc(&m)).transpose()?,
            baseline_name: None,
            delta_points: None,
            config: serde_json::Value::Null,
        })
    }

    pub fn with_baseline(mut self, name: &str, baseline: &EvalReport) -> Self {
        self.baseline_name = Some(name.to_string());
        self.delta_points = Some(delta_vs_baseline(self.avg_auc, baseline.avg_auc));
        self
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let width = self
            .per_dataset
            .keys()
            .map(String::len)
            .chain(["Avg AUC".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>7}", "Dataset", "frame AUC", "video AUC", "frames");
        for (name, r) in &self.per_dataset {
            let video = r.video_auc.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "{name:<width$}  {:>9.4}  {video:>9}  {:>7}", r.frame_auc, r.frames);
        }
        let video = self.avg_video_auc.map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "{:<width$}  {:>9.4}  {video:>9}", "Avg AUC", self.avg_auc);
        if let (Some(name), Some(d)) = (&self.baseline_name, self.delta_points) {
            let _ = writeln!(out, "delta vs {name}: {d:+.2} points");
        }
        out
    }
}
