//! Consistency and detection-quality metrics.
//!
//! Consistency asks how well a watermark strength score survives an attack:
//! scores before and after are paired per text, then compared by Pearson
//! correlation (PCC) and by relative error (RE) over length-binned,
//! min-max-normalized means. Detection quality asks how well scores separate
//! watermarked from clean text: ROC curve, AUC, and TPR at a fixed FPR.
//!
//! Every function here is a pure, order-independent map from in-memory
//! records to numbers.

use std::collections::BTreeMap;
use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length-bin width (tokens) used when none is configured.
pub const DEFAULT_BIN_WIDTH: NonZeroUsize = NonZeroUsize::new(25).unwrap();
/// Bins whose normalized reference strength falls below this are skipped in
/// RE to avoid division blow-ups.
pub const DEFAULT_RE_EPSILON: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {need} records, got {got}")]
    TooFewRecords { got: usize, need: usize },
    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("zero variance in {which} scores; correlation undefined")]
    ZeroVariance { which: &'static str },
    #[error("non-finite score {value} at record {index}")]
    NonFiniteScore { index: usize, value: f64 },
    #[error("record {0:?} has zero length")]
    ZeroLength(String),
    #[error("duplicate text id {0:?}")]
    DuplicateId(String),
    #[error("unpaired text ids: {0}")]
    UnpairedIds(String),
    #[error("detection records contain only one label class")]
    SingleClass,
    #[error("every length bin was skipped; no usable reference strength")]
    AllBinsSkipped,
}

/// One text's strength score, as produced by a detector run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredText {
    pub id: String,
    /// Token count of the scored text.
    pub length: usize,
    pub score: f64,
}

/// Paired strength scores for one text before and after an attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthRecord {
    pub text_id: String,
    /// Token count of the original (pre-attack) text.
    pub length: usize,
    pub s_before: f64,
    pub s_after: f64,
}

/// A paired strength corpus. Construction enforces pairing, positive
/// lengths, finite scores, and unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct StrengthSeries {
    records: Vec<StrengthRecord>,
}

impl StrengthSeries {
    pub fn new(records: Vec<StrengthRecord>) -> Result<Self, EvalError> {
        if records.is_empty() {
            return Err(EvalError::TooFewRecords { got: 0, need: 1 });
        }
        let mut seen = std::collections::HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.length == 0 {
                return Err(EvalError::ZeroLength(r.text_id.clone()));
            }
            for v in [r.s_before, r.s_after] {
                if !v.is_finite() {
                    return Err(EvalError::NonFiniteScore { index: i, value: v });
                }
            }
            if !seen.insert(r.text_id.as_str()) {
                return Err(EvalError::DuplicateId(r.text_id.clone()));
            }
        }
        Ok(Self { records })
    }

    /// Join before/after detector outputs on text id. The recorded length is
    /// the before side's. Any id present on only one side is an error.
    pub fn from_paired(before: &[ScoredText], after: &[ScoredText]) -> Result<Self, EvalError> {
        let mut after_by_id: BTreeMap<&str, &ScoredText> = BTreeMap::new();
        for a in after {
            if after_by_id.insert(a.id.as_str(), a).is_some() {
                return Err(EvalError::DuplicateId(a.id.clone()));
            }
        }
        let mut records = Vec::with_capacity(before.len());
        let mut missing_after = Vec::new();
        for b in before {
            match after_by_id.remove(b.id.as_str()) {
                Some(a) => records.push(StrengthRecord {
                    text_id: b.id.clone(),
                    length: b.length,
                    s_before: b.score,
                    s_after: a.score,
                }),
                None => missing_after.push(b.id.as_str()),
            }
        }
        let missing_before: Vec<&str> = after_by_id.keys().copied().collect();
        if !missing_after.is_empty() || !missing_before.is_empty() {
            let mut parts = Vec::new();
            if !missing_after.is_empty() {
                parts.push(format!("missing after-scores for {}", missing_after.join(", ")));
            }
            if !missing_before.is_empty() {
                parts.push(format!(
                    "missing before-scores for {}",
                    missing_before.join(", ")
                ));
            }
            return Err(EvalError::UnpairedIds(parts.join("; ")));
        }
        Self::new(records)
    }

    pub fn records(&self) -> &[StrengthRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Pearson correlation coefficient, clamped to [-1, 1].
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(EvalError::TooFewRecords {
            got: xs.len(),
            need: 2,
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 {
        return Err(EvalError::ZeroVariance { which: "before" });
    }
    if vy == 0.0 {
        return Err(EvalError::ZeroVariance { which: "after" });
    }
    Ok((cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0))
}

/// PCC between before- and after-attack strength scores.
pub fn pcc(series: &StrengthSeries) -> Result<f64, EvalError> {
    let xs: Vec<f64> = series.records.iter().map(|r| r.s_before).collect();
    let ys: Vec<f64> = series.records.iter().map(|r| r.s_after).collect();
    pearson(&xs, &ys)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Tied block [i, j] shares the mean of ranks i+1 ..= j+1.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Mean strengths per length bin, for reporting and trend checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBinRow {
    /// Inclusive lower length bound of the bin.
    pub bin_start: usize,
    /// Exclusive upper length bound of the bin.
    pub bin_end: usize,
    pub count: usize,
    pub mean_before: f64,
    pub mean_after: f64,
}

/// Group records by `length / bin_width` and average each side within the
/// bin. Rows come out in ascending length order.
pub fn strength_vs_length_report(
    series: &StrengthSeries,
    bin_width: NonZeroUsize,
) -> Vec<LengthBinRow> {
    let w = bin_width.get();
    let mut bins: BTreeMap<usize, (usize, f64, f64)> = BTreeMap::new();
    for r in &series.records {
        let e = bins.entry(r.length / w).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += r.s_before;
        e.2 += r.s_after;
    }
    bins.into_iter()
        .map(|(k, (count, sb, sa))| LengthBinRow {
            bin_start: k * w,
            bin_end: (k + 1) * w,
            count,
            mean_before: sb / count as f64,
            mean_after: sa / count as f64,
        })
        .collect()
}

/// Min-max normalize to [0, 1]. A constant slice maps to all ones so that
/// identical constant series still compare as equal rather than vacuous.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max - min).is_finite() || max - min < 1e-12 {
        return vec![1.0; values.len()];
    }
    values.iter().map(|&v| (v - min) / (max - min)).collect()
}

/// RE core over already-normalized bin means: mean of |s_hat - s| / |s| in
/// percent, skipping entries with |s| below `epsilon`.
pub fn re_from_normalized(s: &[f64], s_hat: &[f64], epsilon: f64) -> Result<f64, EvalError> {
    if s.len() != s_hat.len() {
        return Err(EvalError::LengthMismatch {
            left: s.len(),
            right: s_hat.len(),
        });
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (&a, &b) in s.iter().zip(s_hat) {
        if a.abs() < epsilon {
            continue;
        }
        sum += (b - a).abs() / a.abs();
        used += 1;
    }
    if used == 0 {
        return Err(EvalError::AllBinsSkipped);
    }
    Ok(sum / used as f64 * 100.0)
}

/// Relative error between before- and after-attack strength, as a
/// percentage. Records are binned by length, each side is replaced by its
/// within-bin mean, both sides are min-max normalized over bins, and the
/// normalized curves are compared by `re_from_normalized`.
pub fn relative_error(
    series: &StrengthSeries,
    bin_width: NonZeroUsize,
    epsilon: f64,
) -> Result<f64, EvalError> {
    let rows = strength_vs_length_report(series, bin_width);
    let s: Vec<f64> = rows.iter().map(|r| r.mean_before).collect();
    let s_hat: Vec<f64> = rows.iter().map(|r| r.mean_after).collect();
    re_from_normalized(&minmax_normalize(&s), &minmax_normalize(&s_hat), epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Watermarked,
    Clean,
}

/// One detector score with its ground-truth label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub score: f64,
    pub label: Label,
}

impl DetectionRecord {
    pub fn new(score: f64, label: Label) -> Self {
        Self { score, label }
    }
}

/// ROC curve swept over descending score thresholds; a text is flagged
/// watermarked when its score is at or above the threshold. Tied scores
/// contribute a single point, so segments can be diagonal and the trapezoid
/// AUC gives ties half credit, matching the rank statistic exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
    pub n_watermarked: usize,
    pub n_clean: usize,
}

pub fn roc(records: &[DetectionRecord]) -> Result<RocCurve, EvalError> {
    for (i, r) in records.iter().enumerate() {
        if !r.score.is_finite() {
            return Err(EvalError::NonFiniteScore {
                index: i,
                value: r.score,
            });
        }
    }
    let n_wm = records.iter().filter(|r| r.label == Label::Watermarked).count();
    let n_cl = records.len() - n_wm;
    if n_wm == 0 || n_cl == 0 {
        return Err(EvalError::SingleClass);
    }

    let mut sorted: Vec<&DetectionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            match sorted[i].label {
                Label::Watermarked => tp += 1,
                Label::Clean => fp += 1,
            }
            i += 1;
        }
        thresholds.push(score);
        fpr.push(fp as f64 / n_cl as f64);
        tpr.push(tp as f64 / n_wm as f64);
    }

    let mut auc = 0.0;
    for k in 1..fpr.len() {
        auc += (fpr[k] - fpr[k - 1]) * (tpr[k] + tpr[k - 1]) / 2.0;
    }

    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc,
        n_watermarked: n_wm,
        n_clean: n_cl,
    })
}

/// AUC as the normalized Mann-Whitney U statistic: the probability that a
/// random watermarked score exceeds a random clean score, ties counted half.
pub fn mann_whitney_auc(records: &[DetectionRecord]) -> Result<f64, EvalError> {
    let n_wm = records.iter().filter(|r| r.label == Label::Watermarked).count();
    let n_cl = records.len() - n_wm;
    if n_wm == 0 || n_cl == 0 {
        return Err(EvalError::SingleClass);
    }
    for (i, r) in records.iter().enumerate() {
        if !r.score.is_finite() {
            return Err(EvalError::NonFiniteScore {
                index: i,
                value: r.score,
            });
        }
    }
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let ranks = average_ranks(&scores);
    let rank_sum: f64 = records
        .iter()
        .zip(&ranks)
        .filter(|(r, _)| r.label == Label::Watermarked)
        .map(|(_, &rank)| rank)
        .sum();
    let u = rank_sum - n_wm as f64 * (n_wm as f64 + 1.0) / 2.0;
    Ok(u / (n_wm as f64 * n_cl as f64))
}

/// Best achieved TPR among curve points with FPR at or below the target; no
/// interpolation between points, so the answer is conservative.
pub fn tpr_at_fpr(curve: &RocCurve, fpr_target: f64) -> f64 {
    curve
        .fpr
        .iter()
        .zip(&curve.tpr)
        .filter(|(&f, _)| f <= fpr_target)
        .map(|(_, &t)| t)
        .fold(0.0, f64::max)
}
