use activelab::label_stream::{
    assign_pseudo, build_table, masked_mass, nearest_combination, normalize_rv, update_table,
    CorrelationTable,
};
use activelab::metrics::{roc_auc, roc_auc_pairwise};
use activelab::oracle::{AnnotationQueue, AnnotationSource, AnnotationTask};
use activelab::sample_stream::{score_lc, score_mle, score_mlm, select, SelectionStrategy};
use activelab::{LabelCombination, LabelSchema, ProbabilityVector, StateMatrix};
use proptest::prelude::*;
use proptest::sample::subsequence;

fn schema(m: usize, exclusive: usize) -> LabelSchema {
    LabelSchema::new((0..m).map(|j| format!("L{j}")), exclusive).unwrap()
}

/// Probabilities on a coarse grid so that ties are common.
fn prob() -> impl Strategy<Value = f64> {
    prop_oneof![(0u8..=10).prop_map(|v| v as f64 / 10.0), 0.0..=1.0f64]
}

fn prob_row(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prob(), m)
}

fn pool(max: usize) -> impl Strategy<Value = (usize, usize, Vec<Vec<f64>>)> {
    (2usize..=6).prop_flat_map(move |m| {
        (Just(m), 0..m, prop::collection::vec(prob_row(m), 1..=max))
    })
}

fn combo(m: usize) -> impl Strategy<Value = LabelCombination> {
    prop::collection::vec(any::<bool>(), m).prop_map(LabelCombination::new)
}

fn rv(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, m).prop_map(|v| normalize_rv(&v).unwrap())
}

fn strategy() -> impl Strategy<Value = SelectionStrategy> {
    prop::sample::select(SelectionStrategy::ALL.to_vec())
}

fn state(rows: &[Vec<f64>], order: &[usize]) -> StateMatrix {
    StateMatrix::new(
        order.iter().map(|&i| format!("s{i:04}")).collect(),
        order
            .iter()
            .map(|&i| ProbabilityVector::new(rows[i].clone()).unwrap())
            .collect(),
        1,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn selection_ignores_row_order(
        (m, ex, rows) in pool(60),
        k in 1usize..80,
        strat in strategy(),
        seed in any::<u64>(),
        shuffle in any::<u64>(),
    ) {
        let sch = schema(m, ex);
        let forward: Vec<usize> = (0..rows.len()).collect();
        let mut permuted = forward.clone();
        permuted.sort_by_key(|&i| (i as u64).wrapping_mul(shuffle | 1).rotate_left(17));
        let a = select(&state(&rows, &forward), strat, &sch, k, seed).unwrap();
        let b = select(&state(&rows, &permuted), strat, &sch, k, seed).unwrap();
        prop_assert_eq!(&a.ids, &b.ids);
        prop_assert_eq!(a.len(), k.min(rows.len()));
        // Scores are reported in non-decreasing order.
        prop_assert!(a.scores.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn selection_is_a_prefix_of_larger_selections(
        (m, ex, rows) in pool(60),
        k in 1usize..30,
        strat in strategy(),
        seed in any::<u64>(),
    ) {
        let sch = schema(m, ex);
        let order: Vec<usize> = (0..rows.len()).collect();
        let s = state(&rows, &order);
        let small = select(&s, strat, &sch, k, seed).unwrap();
        let large = select(&s, strat, &sch, k + 5, seed).unwrap();
        prop_assert_eq!(&large.ids[..small.len()], &small.ids[..]);
    }

    #[test]
    fn scores_stay_in_range((m, ex, rows) in pool(1)) {
        let sch = schema(m, ex);
        let p = ProbabilityVector::new(rows[0].clone()).unwrap();
        let mlm = score_mlm(&p, &sch);
        let lc = score_lc(&p);
        let mle = score_mle(&p);
        prop_assert!((0.0..=1.0).contains(&mlm));
        prop_assert!((0.0..=1.0).contains(&lc));
        prop_assert!(mle <= 0.0 && mle >= -(m as f64) * std::f64::consts::LN_2 - 1e-12);
    }

    #[test]
    fn entropy_is_symmetric_under_complement(row in prob_row(5)) {
        let p = ProbabilityVector::new(row.clone()).unwrap();
        let q = ProbabilityVector::new(row.iter().map(|v| 1.0 - v).collect()).unwrap();
        prop_assert!((score_mle(&p) - score_mle(&q)).abs() <= 1e-12);
    }

    #[test]
    fn threshold_labels_follow_each_probability(row in prob_row(6), thr in 0.05..0.95f64) {
        let p = ProbabilityVector::new(row.clone()).unwrap();
        let c = assign_pseudo(&p, thr).unwrap();
        for (j, v) in row.iter().enumerate() {
            prop_assert_eq!(c.get(j), *v >= thr);
        }
    }

    #[test]
    fn table_is_normalized_and_order_free(
        rows in prop::collection::vec((prob_row(4), combo(4)), 1..40),
        rot in any::<usize>(),
    ) {
        let probs: Vec<ProbabilityVector> =
            rows.iter().map(|(r, _)| ProbabilityVector::new(r.clone()).unwrap()).collect();
        let combos: Vec<&LabelCombination> = rows.iter().map(|(_, c)| c).collect();
        let (table, skipped) = build_table(&probs.iter().collect::<Vec<_>>(), &combos, 1).unwrap();
        for (_, v) in table.entries() {
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(v.iter().all(|&x| x >= 0.0));
        }
        let n = rows.len();
        let shift = rot % n;
        let p2: Vec<&ProbabilityVector> = (0..n).map(|i| &probs[(i + shift) % n]).collect();
        let c2: Vec<&LabelCombination> = (0..n).map(|i| combos[(i + shift) % n]).collect();
        let (table2, skipped2) = build_table(&p2, &c2, 1).unwrap();
        prop_assert_eq!(skipped, skipped2);
        for ((a, va), (b, vb)) in table.entries().zip(table2.entries()) {
            prop_assert_eq!(a, b);
            for (x, y) in va.iter().zip(vb) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn nearest_is_a_minimum(
        entries in prop::collection::btree_map(combo(4), rv(4), 1..16),
        q in rv(4),
    ) {
        let mut table = CorrelationTable::new(1);
        for (c, v) in &entries {
            table.insert(c.clone(), v.clone()).unwrap();
        }
        let (best, d) = nearest_combination(&q, &table).unwrap();
        prop_assert!(entries.contains_key(&best));
        for v in entries.values() {
            let other: f64 = q.iter().zip(v).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(d <= other);
        }
    }

    #[test]
    fn updates_never_lower_masked_mass(
        old in prop::collection::btree_map(combo(3), rv(3), 0..8),
        fresh in prop::collection::btree_map(combo(3), rv(3), 0..8),
    ) {
        let mut a = CorrelationTable::new(1);
        for (c, v) in &old {
            a.insert(c.clone(), v.clone()).unwrap();
        }
        let mut b = CorrelationTable::new(2);
        for (c, v) in &fresh {
            b.insert(c.clone(), v.clone()).unwrap();
        }
        let merged = update_table(&a, &b).unwrap();
        for (c, v) in merged.entries() {
            if let Some(prev) = a.get(c) {
                prop_assert!(masked_mass(c, v) >= masked_mass(c, prev));
            } else {
                prop_assert_eq!(Some(v), b.get(c));
            }
        }
        // Nothing is dropped.
        for c in old.keys().chain(fresh.keys()) {
            prop_assert!(merged.get(c).is_some());
        }
    }

    #[test]
    fn auc_matches_pairwise_and_flips(
        pts in prop::collection::vec((prob(), any::<bool>()), 2..120),
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pts.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let a = roc_auc(&scores, &labels).unwrap();
        prop_assert!((a - roc_auc_pairwise(&scores, &labels).unwrap()).abs() <= 1e-9);
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((roc_auc(&neg, &labels).unwrap() - (1.0 - a)).abs() <= 1e-9);
    }

    #[test]
    fn queue_conserves_tasks(
        n in 1usize..30,
        picks in subsequence((0..30).collect::<Vec<usize>>(), 0..30),
        flip in any::<bool>(),
    ) {
        let mut q = AnnotationQueue::new();
        let tasks: Vec<AnnotationTask> = (0..n)
            .map(|i| {
                AnnotationTask::new(
                    format!("t{i:02}"),
                    "0101".parse().unwrap(),
                    ProbabilityVector::new(vec![0.5; 4]).unwrap(),
                    1,
                )
            })
            .collect();
        q.enqueue(tasks).unwrap();
        let mut corrected = 0;
        for i in picks.into_iter().filter(|&i| i < n) {
            let fin: LabelCombination = if flip && i % 2 == 0 { "1000" } else { "0101" }.parse().unwrap();
            if q.submit(&format!("t{i:02}"), fin, AnnotationSource::Simulated).unwrap().changed {
                corrected += 1;
            }
            let t = q.tally();
            prop_assert_eq!(t.pending + t.confirmed + t.corrected, n);
        }
        let t = q.tally();
        prop_assert_eq!(t.corrected, corrected);
        prop_assert_eq!(q.is_drained(), t.pending == 0);
        prop_assert_eq!(q.drain().is_ok(), t.pending == 0);
    }
}
