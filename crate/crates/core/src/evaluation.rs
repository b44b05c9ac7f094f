//! ROC and precision-recall curves over scored labels.
//!
//! Scores are swept from the highest to the lowest distinct value; equal
//! scores form a single step, which for ROC is the diagonal segment obtained
//! by averaging over tie orderings. ROC area uses the trapezoidal rule,
//! accumulated in integer counts so that it equals the Mann-Whitney pair
//! statistic exactly. Precision-recall area is average precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volatility::positive_rate;

/// Paired indicator scores and ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabels {
    pub days: Vec<i64>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredLabels {
    pub fn new(days: Vec<i64>, scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if days.len() != scores.len() || scores.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} days, {} scores, {} labels",
                days.len(),
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("scores must be finite".into()));
        }
        Ok(Self { days, scores, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a ScoredLabels>) -> Self {
        let mut out = Self { days: Vec::new(), scores: Vec::new(), labels: Vec::new() };
        for p in parts {
            out.days.extend_from_slice(&p.days);
            out.scores.extend_from_slice(&p.scores);
            out.labels.extend_from_slice(&p.labels);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// Curve points from threshold `+inf` downwards, with the area under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

/// Cumulative `(threshold, tp, fp)` after each group of equal scores.
fn threshold_steps(sl: &ScoredLabels) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..sl.len()).collect();
    order.sort_by(|&a, &b| sl.scores[b].total_cmp(&sl.scores[a]));
    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let threshold = sl.scores[order[i]];
        while i < order.len() && sl.scores[order[i]] == threshold {
            if sl.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((threshold, tp, fp));
    }
    steps
}

/// ROC curve (x = false positive rate, y = true positive rate).
pub fn roc_curve(sl: &ScoredLabels) -> Result<Curve> {
    let (pos, neg) = (sl.positives() as u64, sl.negatives() as u64);
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!("ROC needs both classes ({pos} positive, {neg} negative)")));
    }
    let mut points = vec![CurvePoint { threshold: f64::INFINITY, x: 0.0, y: 0.0 }];
    let mut twice_area: u128 = 0;
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    for (threshold, tp, fp) in threshold_steps(sl) {
        twice_area += u128::from(fp - prev_fp) * u128::from(tp + prev_tp);
        points.push(CurvePoint { threshold, x: fp as f64 / neg as f64, y: tp as f64 / pos as f64 });
        (prev_tp, prev_fp) = (tp, fp);
    }
    let auc = twice_area as f64 / (2 * u128::from(pos) * u128::from(neg)) as f64;
    Ok(Curve { points, auc })
}

/// Precision-recall curve (x = recall, y = precision); area is average
/// precision.
pub fn pr_curve(sl: &ScoredLabels) -> Result<Curve> {
    let pos = sl.positives() as u64;
    if pos == 0 {
        return Err(Error::DegenerateLabels("precision-recall needs at least one positive".into()));
    }
    let mut points = vec![CurvePoint { threshold: f64::INFINITY, x: 0.0, y: 1.0 }];
    let mut auc = 0.0;
    let mut prev_recall = 0.0;
    for (threshold, tp, fp) in threshold_steps(sl) {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        auc += precision * (recall - prev_recall);
        prev_recall = recall;
        points.push(CurvePoint { threshold, x: recall, y: precision });
    }
    Ok(Curve { points, auc })
}

/// Per-fold summary inside a pooled evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n: usize,
    pub positives: usize,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    /// No positive labels; excluded from the pooled curves.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledMetrics {
    pub roc: Option<Curve>,
    pub pr: Option<Curve>,
    /// Positive rate over every fold, degenerate ones included.
    pub epsilon: f64,
    /// Positive rate over the folds entering the pooled curves.
    pub pooled_epsilon: Option<f64>,
    pub n_total: usize,
    pub n_pooled: usize,
    pub per_fold: Vec<FoldMetrics>,
}

impl PooledMetrics {
    pub fn roc_auc(&self) -> Option<f64> {
        self.roc.as_ref().map(|c| c.auc)
    }

    pub fn pr_auc(&self) -> Option<f64> {
        self.pr.as_ref().map(|c| c.auc)
    }

    pub fn degenerate_folds(&self) -> Vec<usize> {
        self.per_fold.iter().filter(|f| f.degenerate).map(|f| f.fold).collect()
    }
}

/// Pools the non-degenerate folds and computes both curves, alongside
/// per-fold areas.
pub fn evaluate_fold_pool(folds: &[ScoredLabels]) -> Result<PooledMetrics> {
    if folds.is_empty() {
        return Err(Error::DegenerateLabels("no folds to evaluate".into()));
    }
    let all_labels: Vec<bool> = folds.iter().flat_map(|f| f.labels.iter().copied()).collect();
    let epsilon = positive_rate(&all_labels)?;

    let per_fold: Vec<FoldMetrics> = folds
        .iter()
        .enumerate()
        .map(|(i, f)| FoldMetrics {
            fold: i,
            n: f.len(),
            positives: f.positives(),
            roc_auc: roc_curve(f).ok().map(|c| c.auc),
            pr_auc: pr_curve(f).ok().map(|c| c.auc),
            degenerate: f.positives() == 0,
        })
        .collect();

    let pooled = ScoredLabels::concat(folds.iter().filter(|f| f.positives() > 0));
    Ok(PooledMetrics {
        roc: roc_curve(&pooled).ok(),
        pr: pr_curve(&pooled).ok(),
        epsilon,
        pooled_epsilon: positive_rate(&pooled.labels).ok(),
        n_total: all_labels.len(),
        n_pooled: pooled.len(),
        per_fold,
    })
}
