use ewi_core::evaluation::{evaluate_fold_pool, ScoredLabels};
use ewi_core::pipeline::{self, BacktestParams, IndicatorKind, ModelConfig, SweepGrid};
use ewi_core::synth::{generate, SynthSpec};
use ewi_core::volatility::{label_extremes, positive_rate, VolatilitySeries};

fn small_spec() -> SynthSpec {
    SynthSpec { m: 40, t: 480, k_true: 6, ..Default::default() }
}

fn small_params() -> BacktestParams {
    let mut p = BacktestParams::default();
    p.ewi.k = 6;
    p.ewi.delta = 5;
    p
}

#[test]
fn total_volume_carries_no_signal() {
    let data = generate(&SynthSpec { m: 30, t: 2400, k_true: 6, ..Default::default() }).unwrap();
    let sigma = VolatilitySeries::from_bars(&data.bars).unwrap();
    let res = pipeline::run_backtest(&data.x, &sigma, IndicatorKind::Volume, &BacktestParams::default(), 0.1, 1).unwrap();
    let auc = res.pooled.roc_auc().unwrap();
    assert!((auc - 0.5).abs() <= 0.05, "volume ROC AUC {auc}");
}

#[test]
fn planted_factors_beat_volume_in_a_sweep() {
    let spec = small_spec();
    let data = generate(&spec).unwrap();
    let sigma = VolatilitySeries::from_bars(&data.bars).unwrap();
    let grid = SweepGrid { alphas: vec![spec.alpha], horizons: vec![1, 2], models: vec![ModelConfig { k: 6, delta: 5 }] };
    let table =
        pipeline::sensitivity_sweep(&data.x, &sigma, &grid, &[IndicatorKind::NmfNlr, IndicatorKind::Volume], &small_params())
            .unwrap();
    assert_eq!(table.rows.len(), 4);
    let cell = |kind, h| {
        table.rows.iter().find(|r| r.indicator == kind && r.horizon == h).and_then(|r| r.pr_auc).unwrap()
    };
    let (nmf, vol) = (cell(IndicatorKind::NmfNlr, 1), cell(IndicatorKind::Volume, 1));
    assert!(nmf > vol, "nmf {nmf} vs volume {vol}");
}

#[test]
fn epsilon_column_is_the_masked_positive_rate() {
    let data = generate(&SynthSpec { m: 30, t: 400, k_true: 4, n_signal: 1, ..Default::default() }).unwrap();
    let sigma = VolatilitySeries::from_bars(&data.bars).unwrap();
    let mut params = BacktestParams::default();
    params.ewi.k = 4;
    params.ewi.delta = 3;
    let grid = SweepGrid { alphas: vec![0.08, 0.12], horizons: vec![1, 3], models: vec![ModelConfig { k: 4, delta: 3 }] };
    let table = pipeline::sensitivity_sweep(&data.x, &sigma, &grid, &[IndicatorKind::Volume], &params).unwrap();

    let partition = pipeline::make_partition(data.x.ncols(), params.holdout_days, params.train_days).unwrap();
    let holdout_days: Vec<i64> =
        partition.folds.iter().flat_map(|f| f.holdout.clone()).map(|c| data.x.days[c]).collect();
    let mask = label_extremes(&sigma, 0.08, 3).unwrap();
    for row in &table.rows {
        let labels = label_extremes(&sigma, row.alpha, row.horizon).unwrap();
        let kept: Vec<bool> =
            holdout_days.iter().filter(|&&d| mask.get(d).is_some()).filter_map(|&d| labels.get(d)).collect();
        assert_eq!(row.epsilon, positive_rate(&kept).unwrap(), "alpha {} h {}", row.alpha, row.horizon);
    }
}

#[test]
fn folds_without_positives_leave_the_pooled_curves_alone() {
    let fold = |start: i64, scores: &[f64], labels: &[bool]| {
        ScoredLabels::new((start..start + scores.len() as i64).collect(), scores.to_vec(), labels.to_vec()).unwrap()
    };
    let good = fold(0, &[0.9, 0.4, 0.7, 0.1], &[true, false, false, true]);
    let empty = fold(4, &[0.95, 0.5, 0.2], &[false, false, false]);
    let alone = evaluate_fold_pool(std::slice::from_ref(&good)).unwrap();
    let with = evaluate_fold_pool(&[good, empty]).unwrap();

    assert_eq!(with.degenerate_folds(), vec![1]);
    assert_eq!(with.roc, alone.roc);
    assert_eq!(with.pr, alone.pr);
    assert_eq!(with.pooled_epsilon, Some(0.5));
    assert_eq!(with.epsilon, 2.0 / 7.0);
    assert_eq!((with.n_total, with.n_pooled), (7, 4));
}

#[test]
fn backtests_are_reproducible() {
    let data = generate(&small_spec()).unwrap();
    let sigma = VolatilitySeries::from_bars(&data.bars).unwrap();
    let a = pipeline::run_backtest(&data.x, &sigma, IndicatorKind::SvdLr, &small_params(), 0.1, 2).unwrap();
    let b = pipeline::run_backtest(&data.x, &sigma, IndicatorKind::SvdLr, &small_params(), 0.1, 2).unwrap();
    assert_eq!(a, b);
}
