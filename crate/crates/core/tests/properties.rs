use proptest::prelude::*;

use aupat::analytics::{cross_method_std, imbalance_correlations, ones_baseline, pearson, MethodScoreTable};
use aupat::au_model::{parse_annotations, write_annotations, AnnotatedFrame, AuPattern, AuRegistry, DatasetTable};
use aupat::experiments::{decode_to_au, make_folds};
use aupat::metrics::{self, AuMetrics};
use aupat::pattern_mining::{base_rates, census, histogram, top_pattern_per_task, BaseRates, PatternCodebook, DEFAULT_BIN_EDGES};
use aupat::rng::Stream;

fn bits(width: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), width)
}

/// A table over `k` AUs whose frames draw from a small pool so patterns repeat.
fn table() -> impl Strategy<Value = DatasetTable> {
    (1usize..=12).prop_flat_map(|k| {
        let pool = prop::collection::vec(bits(k), 1..8);
        let picks = prop::collection::vec((0usize..8, 0usize..4, 0usize..3), 1..200);
        (Just(k), pool, picks).prop_map(|(k, pool, picks)| {
            let registry = AuRegistry::new((1..=k as u16).collect()).unwrap();
            let frames = picks
                .into_iter()
                .enumerate()
                .map(|(i, (p, s, t))| AnnotatedFrame {
                    subject: format!("S{s}"),
                    task: format!("T{t}"),
                    frame: i as u64,
                    pattern: AuPattern::from_bits(&pool[p % pool.len()]),
                })
                .collect();
            DatasetTable::new(registry, frames).unwrap()
        })
    })
}

fn shuffled(table: &DatasetTable, seed: u64) -> DatasetTable {
    let mut frames = table.frames().to_vec();
    Stream::new(seed).shuffle(&mut frames);
    DatasetTable::new(table.registry().clone(), frames).unwrap()
}

proptest! {
    #[test]
    fn pattern_string_round_trip_and_order(a in bits(10), b in bits(10)) {
        let (pa, pb) = (AuPattern::from_bits(&a), AuPattern::from_bits(&b));
        prop_assert_eq!(AuPattern::parse(&pa.to_string()).unwrap(), pa);
        prop_assert_eq!(pa.cmp(&pb), pa.to_string().cmp(&pb.to_string()));
        prop_assert_eq!(pa.count_active() as usize, a.iter().filter(|&&x| x).count());
    }

    #[test]
    fn annotations_round_trip(t in table()) {
        let text = write_annotations(&t);
        let back = parse_annotations(&text, t.registry()).unwrap();
        prop_assert_eq!(back.len(), t.len());
        prop_assert!(back.frames().iter().all(|f| f.pattern.width() == t.registry().k()));
        prop_assert_eq!(write_annotations(&back), text);
    }

    #[test]
    fn census_conserves_frames_and_ignores_order(t in table(), seed in any::<u64>()) {
        let c = census(&t).unwrap();
        prop_assert_eq!(c.total_frames(), t.len() as u64);
        let s = shuffled(&t, seed);
        prop_assert_eq!(census(&s).unwrap(), c.clone());
        prop_assert_eq!(base_rates(&s).unwrap(), base_rates(&t).unwrap());
        prop_assert_eq!(top_pattern_per_task(&s), top_pattern_per_task(&t));
        prop_assert_eq!(c.ranked(), census(&s).unwrap().ranked());
    }

    #[test]
    fn base_rates_are_mean_pattern_vector(t in table()) {
        let k = t.registry().k();
        let mut sum = vec![0.0; k];
        for f in t.frames() {
            for (s, v) in sum.iter_mut().zip(f.pattern.to_f64_vec()) {
                *s += v;
            }
        }
        let want: Vec<f64> = sum.iter().map(|s| s / t.len() as f64).collect();
        prop_assert_eq!(base_rates(&t).unwrap().rates, want);
    }

    #[test]
    fn histogram_sums_to_hundred(t in table()) {
        let h = histogram(&census(&t).unwrap(), &DEFAULT_BIN_EDGES).unwrap();
        prop_assert!((h.iter().sum::<f64>() - 100.0).abs() < 1e-6);
    }

    #[test]
    fn auc_ignores_monotone_transforms(raw in prop::collection::vec((any::<bool>(), 0u8..20), 2..80)) {
        let truth: Vec<bool> = raw.iter().map(|r| r.0).collect();
        let scores: Vec<f64> = raw.iter().map(|r| f64::from(r.1) / 20.0).collect();
        let warped: Vec<f64> = scores.iter().map(|s| s * s * s + 2.0 * s - 7.0).collect();
        prop_assert_eq!(metrics::auc(&truth, &scores).unwrap(), metrics::auc(&truth, &warped).unwrap());
    }

    #[test]
    fn metrics_ignore_joint_permutation(raw in prop::collection::vec((any::<bool>(), any::<bool>(), 0u8..10), 1..80), seed in any::<u64>()) {
        let mut rows = raw.clone();
        Stream::new(seed).shuffle(&mut rows);
        let eval = |r: &[(bool, bool, u8)]| {
            let t: Vec<bool> = r.iter().map(|x| x.0).collect();
            let p: Vec<bool> = r.iter().map(|x| x.1).collect();
            let s: Vec<f64> = r.iter().map(|x| f64::from(x.2)).collect();
            AuMetrics::from_predictions(1, &t, &p, &s).unwrap()
        };
        let (a, b) = (eval(&raw), eval(&rows));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn micro_equals_accuracy(raw in prop::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
        let t: Vec<bool> = raw.iter().map(|x| x.0).collect();
        let p: Vec<bool> = raw.iter().map(|x| x.1).collect();
        let acc = raw.iter().filter(|x| x.0 == x.1).count() as f64 / raw.len() as f64;
        prop_assert_eq!(metrics::f1_micro(&metrics::confusion(&t, &p).unwrap()).value, acc);
    }

    #[test]
    fn pearson_affine_invariance(xy in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3..30), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let x: Vec<f64> = xy.iter().map(|v| v.0).collect();
        let y: Vec<f64> = xy.iter().map(|v| v.1).collect();
        if let Some(r) = pearson(&x, &y).unwrap() {
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let flipped: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&scaled, &y).unwrap().unwrap() - r).abs() < 1e-9);
            prop_assert!((pearson(&flipped, &y).unwrap().unwrap() + r).abs() < 1e-9);
        }
    }

    #[test]
    fn spread_and_correlation_ignore_column_order(
        cols in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.9, 0.0f64..1.0), 6), 2..8),
        rates in prop::collection::vec(0.0f64..1.0, 6),
        seed in any::<u64>(),
    ) {
        let aus: Vec<u16> = (1..=6).collect();
        let named: Vec<(String, Vec<Option<f64>>)> = cols.into_iter().enumerate().map(|(i, c)| (format!("M{i}"), c)).collect();
        let mut permuted = named.clone();
        Stream::new(seed).shuffle(&mut permuted);
        let (a, b) = (MethodScoreTable::new(aus.clone(), named), MethodScoreTable::new(aus.clone(), permuted));
        for ((au, x), (_, y)) in cross_method_std(&a).per_au.iter().zip(&cross_method_std(&b).per_au) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12, "AU{au}"),
                _ => prop_assert_eq!(x, y),
            }
        }
        let rates = BaseRates { codes: aus, rates };
        let (ca, cb) = (imbalance_correlations(&a, &rates).unwrap(), imbalance_correlations(&b, &rates).unwrap());
        for m in &ca.per_method {
            match (m.value, cb.get(&m.method)) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }

    #[test]
    fn ones_closed_form_matches_direct(truth in prop::collection::vec(any::<bool>(), 1..500)) {
        let n = truth.len();
        let p = truth.iter().filter(|&&t| t).count() as f64 / n as f64;
        let direct = AuMetrics::from_predictions(1, &truth, &vec![true; n], &vec![1.0; n]).unwrap();
        let closed = ones_baseline(&BaseRates { codes: vec![1], rates: vec![p] }).rows.remove(0);
        prop_assert!((direct.f1_binary.value - closed.f1_binary.value).abs() < 1e-12);
        prop_assert!((direct.f1_micro.value - closed.f1_micro.value).abs() < 1e-12);
        prop_assert!((direct.f1_macro.value - closed.f1_macro.value).abs() < 1e-12);
        prop_assert_eq!(direct.auc.value, closed.auc.value);
    }

    #[test]
    fn folds_partition_subjects(n in 2usize..60, k in 2usize..6, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("P{i}")).collect();
        match make_folds(&ids, k, seed) {
            Err(_) => prop_assert!(n < k),
            Ok(plan) => {
                plan.validate().unwrap();
                let mut all: Vec<String> = plan.folds.concat();
                all.sort();
                let mut want = ids.clone();
                want.sort();
                prop_assert_eq!(all, want);
                let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
                prop_assert_eq!(plan.hash(), make_folds(&ids, k, seed).unwrap().hash());
            }
        }
    }

    #[test]
    fn decode_picks_a_codebook_pattern(pool in prop::collection::btree_set(0u64..4096, 2..20), weights in prop::collection::vec(0.0f64..1.0, 20)) {
        let patterns: Vec<AuPattern> = pool
            .iter()
            .map(|v| AuPattern::from_bits(&(0..12).map(|j| v >> (11 - j) & 1 == 1).collect::<Vec<_>>()))
            .collect();
        let book = PatternCodebook::from_ordered(patterns.clone());
        let raw = &weights[..patterns.len()];
        let total: f64 = raw.iter().sum::<f64>() + 1e-9;
        let probs: Vec<f64> = raw.iter().map(|w| (w + 1e-9 / raw.len() as f64) / total).collect();
        let (hard, scores) = decode_to_au(&probs, &book).unwrap();
        prop_assert!(book.contains(&hard));
        let best = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(probs[book.class_of(&hard).unwrap()], best);
        prop_assert!(scores.iter().all(|s| (-1e-12..=1.0 + 1e-12).contains(s)));
    }
}
