use std::collections::BTreeSet;

use ewi_core::evaluation::{pr_curve, roc_curve, ScoredLabels};
use ewi_core::indicator::{nnls_objective, nnls_sparse, NnlsOptions};
use ewi_core::ledger::{self, EncodingMode, TransactionEvent};
use ewi_core::linalg;
use ewi_core::pipeline::make_partition;
use ewi_core::volatility::{garman_klass, label_extremes, OhlcBar, VolatilitySeries};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn event(id: usize, day: i64, inputs: &[u8], outputs: &[(u8, u64)]) -> TransactionEvent {
    TransactionEvent {
        tx_id: format!("t{id}"),
        day,
        inputs: inputs.iter().map(|a| format!("a{a}")).collect(),
        outputs: outputs.iter().map(|(a, v)| (format!("a{a}"), *v)).collect(),
    }
}

fn events_strategy() -> impl Strategy<Value = Vec<TransactionEvent>> {
    prop::collection::vec(
        (
            0i64..20,
            prop::collection::vec(0u8..12, 0..3),
            prop::collection::vec((0u8..12, 1u64..1_000_000_000), 1..3),
        ),
        1..30,
    )
    .prop_map(|raw| raw.into_iter().enumerate().map(|(i, (d, ins, outs))| event(i, d, &ins, &outs)).collect())
}

/// Average over positives of the precision at their score, by direct counting.
fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut positives = 0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        positives += 1;
        let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
        let tp = above.iter().filter(|&&j| labels[j]).count();
        total += tp as f64 / above.len() as f64;
    }
    total / positives as f64
}

fn scored_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (prop::collection::vec(0u8..8, n), prop::collection::vec(any::<bool>(), n)).prop_map(|(s, mut l)| {
            l[0] = true;
            l[1] = false;
            (s.into_iter().map(f64::from).collect(), l)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_partition_ignores_event_order(events in events_strategy(), rot in 0usize..30) {
        let mut shuffled = events.clone();
        shuffled.reverse();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        prop_assert_eq!(ledger::merge_addresses(&events).partition(), ledger::merge_addresses(&shuffled).partition());
    }

    #[test]
    fn co_spent_inputs_share_a_user(events in events_strategy()) {
        let mapping = ledger::merge_addresses(&events);
        for e in &events {
            let users: BTreeSet<_> = e.inputs.iter().map(|a| mapping.user_of(a)).collect();
            prop_assert!(users.len() <= 1);
        }
    }

    #[test]
    fn node_encoding_is_additive_over_events(events in events_strategy(), split in 0usize..30) {
        let mapping = ledger::merge_addresses(&events);
        let users: BTreeSet<_> = (0..mapping.n_users()).collect();
        prop_assume!(!users.is_empty());
        let universe = ledger::RowUniverse::Users(users.iter().copied().collect());
        let cut = split % events.len();
        let whole = ledger::encode_with_universe(&events, &mapping, &universe, 0..20).unwrap();
        let a = ledger::encode_with_universe(&events[..cut], &mapping, &universe, 0..20).unwrap();
        let b = ledger::encode_with_universe(&events[cut..], &mapping, &universe, 0..20).unwrap();
        let sum = &a.values + &b.values;
        prop_assert!((&whole.values - sum).abs().max() <= 1e-9 * whole.values.max().max(1.0));
        let edge = ledger::encode_snapshots(&events, &mapping, &users, EncodingMode::Edge, 0..20);
        if let Ok(edge) = edge {
            // every pair flow is also a node inflow, so totals agree
            prop_assert!((edge.values.sum() - whole.values.sum()).abs() <= 1e-9 * whole.values.sum().max(1.0));
        }
    }

    #[test]
    fn garman_klass_is_price_scale_invariant(
        low in 0.01f64..1e4, spread in 1.0f64..2.0, o in 0.0f64..=1.0, c in 0.0f64..=1.0, scale in 1e-4f64..1e4,
    ) {
        let high = low * spread;
        let bar = OhlcBar { day: 0, open: low + o * (high - low), high, low, close: low + c * (high - low) };
        let scaled = OhlcBar { day: 0, open: bar.open * scale, high: high * scale, low: low * scale, close: bar.close * scale };
        prop_assert!((garman_klass(&bar).unwrap() - garman_klass(&scaled).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn raising_alpha_only_removes_positives(values in prop::collection::vec(0.0f64..0.3, 3..60), a in 0.01f64..0.3, da in 0.0f64..0.2, h in 1usize..3) {
        prop_assume!(values.len() > h);
        let sigma = VolatilitySeries::from_values(0, values).unwrap();
        let low = label_extremes(&sigma, a, h).unwrap();
        let high = label_extremes(&sigma, a + da, h).unwrap();
        for (l, hi) in low.labels.iter().zip(&high.labels) {
            prop_assert!(!(hi.unwrap() && !l.unwrap()));
        }
        let longer = label_extremes(&sigma, a, h + 1);
        if let Ok(longer) = longer {
            for (day, positive) in longer.iter_defined() {
                prop_assert!(!low.get(day).unwrap() || positive);
            }
        }
    }

    #[test]
    fn auc_matches_oracles_and_ignores_monotone_transforms((scores, labels) in scored_strategy()) {
        let days: Vec<i64> = (0..scores.len() as i64).collect();
        let sl = ScoredLabels::new(days.clone(), scores.clone(), labels.clone()).unwrap();
        let pr = pr_curve(&sl).unwrap().auc;
        prop_assert!((pr - average_precision(&scores, &labels)).abs() <= 1e-12);
        let roc = roc_curve(&sl).unwrap().auc;
        let moved = ScoredLabels::new(days, scores.iter().map(|s| (0.7 * s).exp() - 3.0).collect(), labels).unwrap();
        prop_assert!((roc_curve(&moved).unwrap().auc - roc).abs() <= 1e-12);
        prop_assert!((pr_curve(&moved).unwrap().auc - pr).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&roc) && (0.0..=1.0).contains(&pr));
    }

    #[test]
    fn nmf_step_keeps_nonnegativity_and_descends(seed in 0u64..1000, k in 1usize..5, lambda in 0.0f64..2.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c| DMatrix::from_fn(r, c, |_, _| rng.random::<f64>());
        let x = draw(12, 9);
        let (mut w, mut h) = (draw(12, k), draw(k, 9));
        let mut prev = linalg::nmf_objective(&x, &w, &h, lambda).unwrap();
        for _ in 0..20 {
            (w, h) = linalg::nmf_step(&x, &w, &h, lambda, 1e-12);
            prop_assert!(w.iter().chain(h.iter()).all(|&v| v >= 0.0));
            let cur = linalg::nmf_objective(&x, &w, &h, lambda).unwrap();
            prop_assert!(cur <= prev * (1.0 + 1e-9));
            prev = cur;
        }
    }

    #[test]
    fn nnls_objective_never_increases(seed in 0u64..1000, lambda in 0.0f64..0.5) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(15, 4, |_, _| rng.random::<f64>());
        let b = DVector::from_fn(15, |_, _| rng.random::<f64>());
        let mut prev = f64::INFINITY;
        for iters in 1..30 {
            let fit = nnls_sparse(&a, &b, lambda, &NnlsOptions { max_iters: iters, rel_tol: 1e-300, ..Default::default() }).unwrap();
            prop_assert!(fit.coef.iter().all(|&v| v >= 0.0));
            prop_assert!((fit.objective - nnls_objective(&a, &b, &fit.coef, lambda)).abs() <= 1e-12 * fit.objective.max(1.0));
            prop_assert!(fit.objective <= prev * (1.0 + 1e-12));
            prev = fit.objective;
        }
    }

    #[test]
    fn holdouts_tile_a_contiguous_interval(total in 1usize..2000, holdout in 1usize..100, train in 1usize..400) {
        match make_partition(total, holdout, train) {
            Ok(p) => {
                prop_assert_eq!(p.folds.len(), (total - train) / holdout);
                let mut next = train;
                for f in &p.folds {
                    prop_assert_eq!(f.holdout.start, next);
                    prop_assert_eq!(f.holdout.len(), holdout);
                    prop_assert_eq!(f.train.clone(), f.holdout.start - train..f.holdout.start);
                    next = f.holdout.end;
                }
                prop_assert!(next <= total);
            }
            Err(_) => prop_assert!(total < train + holdout),
        }
    }

    #[test]
    fn rank_estimate_is_scale_invariant(seed in 0u64..500, c in 1e-3f64..1e3) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(8, 3, |_, _| rng.random::<f64>()) * DMatrix::from_fn(3, 10, |_, _| rng.random::<f64>());
        prop_assert_eq!(linalg::estimate_rank(&a).unwrap(), linalg::estimate_rank(&(a * c)).unwrap());
    }
}
