//! Rolling-window backtests and sensitivity sweeps.
//!
//! Every holdout segment of `holdout_days` is preceded by its own training
//! window of `train_days`. A model is fitted per fold on the training window
//! only, then scores each holdout day. Folds are independent and run in
//! parallel; results are merged in fold order.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate_fold_pool, PooledMetrics, ScoredLabels};
use crate::indicator::{self, EwiParams, NnlsOptions, SvdLrParams};
use crate::ledger::EvolutionMatrix;
use crate::linalg::SolverOptions;
use crate::volatility::{label_extremes, GroundTruthLabels, VolatilitySeries};

/// One train/holdout split, in matrix column positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Range<usize>,
    pub holdout: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingPartition {
    pub holdout_days: usize,
    pub train_days: usize,
    pub folds: Vec<Fold>,
}

/// Tiles holdout segments forward from day `train_days`; a trailing
/// remainder shorter than `holdout_days` is dropped.
pub fn make_partition(total_days: usize, holdout_days: usize, train_days: usize) -> Result<RollingPartition> {
    if holdout_days == 0 || train_days == 0 {
        return Err(Error::InvalidInput("holdout and training lengths must be >= 1".into()));
    }
    if total_days < train_days + holdout_days {
        return Err(Error::InsufficientHistory(format!(
            "{total_days} days cannot hold a {train_days}-day training window and a {holdout_days}-day holdout"
        )));
    }
    let folds = (0..)
        .map(|i| train_days + i * holdout_days)
        .take_while(|start| start + holdout_days <= total_days)
        .enumerate()
        .map(|(index, start)| Fold { index, train: start - train_days..start, holdout: start..start + holdout_days })
        .collect();
    Ok(RollingPartition { holdout_days, train_days, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    NmfNlr,
    SvdLr,
    Volume,
}

impl IndicatorKind {
    pub const ALL: [IndicatorKind; 3] = [Self::NmfNlr, Self::SvdLr, Self::Volume];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NmfNlr => "nmf_nlr",
            Self::SvdLr => "svd_lr",
            Self::Volume => "volume",
        }
    }

    pub fn uses_model(self) -> bool {
        self != Self::Volume
    }
}

impl fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndicatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nmf_nlr" => Ok(Self::NmfNlr),
            "svd_lr" => Ok(Self::SvdLr),
            "volume" => Ok(Self::Volume),
            other => Err(Error::InvalidInput(format!("unknown indicator {other:?}"))),
        }
    }
}

/// Everything a backtest needs besides the data and the label definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestParams {
    pub holdout_days: usize,
    pub train_days: usize,
    pub ewi: EwiParams,
    /// Ridge weight of the SVD baseline, which shares `k` and `delta`.
    pub ridge: f64,
    pub nmf: SolverOptions,
    pub nnls: NnlsOptions,
    /// Drop rows with no activity in a fold's training window (edge
    /// encoding: pairs unseen during training are out of vocabulary).
    pub restrict_to_training_support: bool,
}

impl Default for BacktestParams {
    fn default() -> Self {
        Self {
            holdout_days: 30,
            train_days: 150,
            ewi: EwiParams::default(),
            ridge: 1.0,
            nmf: SolverOptions::default(),
            nnls: NnlsOptions::default(),
            restrict_to_training_support: false,
        }
    }
}

impl BacktestParams {
    pub fn svd_params(&self) -> SvdLrParams {
        SvdLrParams { k: self.ewi.k, delta: self.ewi.delta, ridge: self.ridge }
    }
}

/// Holdout scores of one fold, before labelling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub fold: Fold,
    pub days: Vec<i64>,
    pub scores: Vec<f64>,
    /// Latest day read while training; `None` for untrained indicators.
    pub max_day_touched: Option<i64>,
}

fn training_support(train: &DMatrix<f64>) -> Vec<usize> {
    train.row_iter().enumerate().filter(|(_, r)| r.sum() > 0.0).map(|(i, _)| i).collect()
}

fn score_fold(
    x: &EvolutionMatrix,
    sigma: &VolatilitySeries,
    kind: IndicatorKind,
    params: &BacktestParams,
    fold: &Fold,
) -> Result<FoldScores> {
    let days: Vec<i64> = x.days[fold.holdout.clone()].to_vec();
    let holdout_start = days[0];
    let train_first = x.days[fold.train.start];
    let mut train = x.values.columns(fold.train.start, fold.train.len()).into_owned();
    let mut hold = x.values.columns(fold.holdout.start, fold.holdout.len()).into_owned();

    if kind == IndicatorKind::Volume {
        let scores = indicator::baseline_volume(&hold.row_sum().iter().copied().collect::<Vec<_>>());
        return Ok(FoldScores { fold: fold.clone(), days, scores, max_day_touched: None });
    }

    if params.restrict_to_training_support {
        let rows = training_support(&train);
        if rows.is_empty() {
            return Err(Error::InvalidInput(format!("fold {}: training window has no activity", fold.index)));
        }
        train = train.select_rows(&rows);
        hold = hold.select_rows(&rows);
    }

    let (scores, report) = match kind {
        IndicatorKind::NmfNlr => {
            let (model, report) =
                indicator::train_ewi(&train, train_first, sigma, &params.ewi, &params.nmf, &params.nnls)?;
            let h = model.encode(&hold, &params.nmf)?;
            (model.score(&h)?, report)
        }
        IndicatorKind::SvdLr => {
            let (model, report) = indicator::baseline_svd_lr(&train, train_first, sigma, &params.svd_params())?;
            (model.score(&model.represent(&hold)?)?, report)
        }
        IndicatorKind::Volume => unreachable!(),
    };
    if report.max_day_touched >= holdout_start {
        return Err(Error::Leakage(format!(
            "fold {} read day {} but its holdout starts at day {holdout_start}",
            fold.index, report.max_day_touched
        )));
    }
    Ok(FoldScores { fold: fold.clone(), days, scores, max_day_touched: Some(report.max_day_touched) })
}

/// Trains one model per fold and scores every holdout day.
pub fn score_holdouts(
    x: &EvolutionMatrix,
    sigma: &VolatilitySeries,
    kind: IndicatorKind,
    params: &BacktestParams,
) -> Result<Vec<FoldScores>> {
    let partition = make_partition(x.ncols(), params.holdout_days, params.train_days)?;
    partition.folds.par_iter().map(|fold| score_fold(x, sigma, kind, params, fold)).collect()
}

/// Pairs holdout scores with labels, keeping anchors labelled in `labels`
/// and, when given, also in `mask`.
pub fn attach_labels(
    folds: &[FoldScores],
    labels: &GroundTruthLabels,
    mask: Option<&GroundTruthLabels>,
) -> Result<Vec<ScoredLabels>> {
    folds
        .iter()
        .map(|f| {
            let mut out = ScoredLabels { days: Vec::new(), scores: Vec::new(), labels: Vec::new() };
            for (&day, &score) in f.days.iter().zip(&f.scores) {
                let Some(label) = labels.get(day) else { continue };
                if mask.is_some_and(|m| m.get(day).is_none()) {
                    continue;
                }
                out.days.push(day);
                out.scores.push(score);
                out.labels.push(label);
            }
            ScoredLabels::new(out.days, out.scores, out.labels)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: Fold,
    pub max_day_touched: Option<i64>,
    pub scored: ScoredLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub kind: IndicatorKind,
    pub alpha: f64,
    pub horizon: usize,
    pub folds: Vec<FoldOutcome>,
    pub pooled: PooledMetrics,
}

fn outcomes(scores: &[FoldScores], scored: Vec<ScoredLabels>) -> Vec<FoldOutcome> {
    scores
        .iter()
        .zip(scored)
        .map(|(s, scored)| FoldOutcome { fold: s.fold.clone(), max_day_touched: s.max_day_touched, scored })
        .collect()
}

/// Rolling-window backtest of one indicator at one label definition.
pub fn run_backtest(
    x: &EvolutionMatrix,
    sigma: &VolatilitySeries,
    kind: IndicatorKind,
    params: &BacktestParams,
    alpha: f64,
    horizon: usize,
) -> Result<BacktestResult> {
    let scores = score_holdouts(x, sigma, kind, params)?;
    evaluate_scores(&scores, sigma, kind, alpha, horizon, None)
}

/// Labels and evaluates precomputed holdout scores, so one training pass can
/// serve several label definitions.
pub fn evaluate_scores(
    scores: &[FoldScores],
    sigma: &VolatilitySeries,
    kind: IndicatorKind,
    alpha: f64,
    horizon: usize,
    mask: Option<&GroundTruthLabels>,
) -> Result<BacktestResult> {
    let labels = label_extremes(sigma, alpha, horizon)?;
    let scored = attach_labels(scores, &labels, mask)?;
    let pooled = evaluate_fold_pool(&scored)?;
    Ok(BacktestResult { kind, alpha, horizon, folds: outcomes(scores, scored), pooled })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k: usize,
    pub delta: usize,
}

/// Grid of label definitions and model shapes for a sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub horizons: Vec<usize>,
    pub models: Vec<ModelConfig>,
}

impl SweepGrid {
    /// Every combination of the `k` and `delta` lists.
    pub fn product(alphas: Vec<f64>, horizons: Vec<usize>, ks: &[usize], deltas: &[usize]) -> Self {
        let models = ks.iter().flat_map(|&k| deltas.iter().map(move |&delta| ModelConfig { k, delta })).collect();
        Self { alphas, horizons, models }
    }

    /// The α × h grid used for heat maps, with the default model shape.
    pub fn heat_map() -> Self {
        Self::product(vec![0.05, 0.1, 0.15, 0.2], (1..=10).collect(), &[10], &[5])
    }

    /// Next-day horizon with the reference model shapes: k = 10 with
    /// delta in {5, 1, 10}, and delta = 5 with k in {5, 20}.
    pub fn reference_table() -> Self {
        let models = [(10, 5), (10, 1), (10, 10), (5, 5), (20, 5)]
            .into_iter()
            .map(|(k, delta)| ModelConfig { k, delta })
            .collect();
        Self { alphas: vec![0.05, 0.1, 0.15, 0.2], horizons: vec![1], models }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.horizons.is_empty() || self.models.is_empty() {
            return Err(Error::InvalidInput("sweep grid lists must be non-empty".into()));
        }
        if self.horizons.contains(&0) {
            return Err(Error::InvalidInput("horizons must be >= 1".into()));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::InvalidInput("alphas must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub indicator: IndicatorKind,
    pub alpha: f64,
    pub horizon: usize,
    pub k: Option<usize>,
    pub delta: Option<usize>,
    pub pr_auc: Option<f64>,
    pub roc_auc: Option<f64>,
    /// Positive rate over all evaluated anchors of the cell.
    pub epsilon: f64,
    pub pooled_epsilon: Option<f64>,
    pub pr_minus_epsilon: Option<f64>,
    pub degenerate_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn epsilon(&self, alpha: f64, horizon: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.alpha == alpha && r.horizon == horizon).map(|r| r.epsilon)
    }
}

/// One backtest per grid cell and indicator.
///
/// Training does not depend on the label definition, so each indicator and
/// model shape is scored once and re-labelled for every `(alpha, h)`. All
/// cells are evaluated on the anchors that are labelled at the largest
/// horizon of the grid, which keeps positive rates comparable across cells.
pub fn sensitivity_sweep(
    x: &EvolutionMatrix,
    sigma: &VolatilitySeries,
    grid: &SweepGrid,
    kinds: &[IndicatorKind],
    params: &BacktestParams,
) -> Result<SweepTable> {
    grid.validate()?;
    let h_max = *grid.horizons.iter().max().expect("validated non-empty");
    let mask = label_extremes(sigma, grid.alphas[0], h_max)?;

    let mut label_sets = Vec::with_capacity(grid.alphas.len() * grid.horizons.len());
    for &alpha in &grid.alphas {
        for &h in &grid.horizons {
            label_sets.push((alpha, h, label_extremes(sigma, alpha, h)?));
        }
    }

    let mut rows = Vec::new();
    for &kind in kinds {
        let shapes: Vec<Option<ModelConfig>> =
            if kind.uses_model() { grid.models.iter().copied().map(Some).collect() } else { vec![None] };
        for shape in shapes {
            let mut cell_params = params.clone();
            if let Some(m) = shape {
                cell_params.ewi.k = m.k;
                cell_params.ewi.delta = m.delta;
            }
            let scores = score_holdouts(x, sigma, kind, &cell_params)?;
            for (alpha, h, labels) in &label_sets {
                let scored = attach_labels(&scores, labels, Some(&mask))?;
                let pooled = evaluate_fold_pool(&scored)?;
                rows.push(SweepRow {
                    indicator: kind,
                    alpha: *alpha,
                    horizon: *h,
                    k: shape.map(|m| m.k),
                    delta: shape.map(|m| m.delta),
                    pr_auc: pooled.pr_auc(),
                    roc_auc: pooled.roc_auc(),
                    epsilon: pooled.epsilon,
                    pooled_epsilon: pooled.pooled_epsilon,
                    pr_minus_epsilon: pooled.pr_auc().map(|p| p - pooled.epsilon),
                    degenerate_folds: pooled.degenerate_folds().len(),
                });
            }
        }
    }
    Ok(SweepTable { rows })
}
