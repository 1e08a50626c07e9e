//! Slow, obviously-correct reference implementations used to check the
//! library. Nothing here shares code with the functions under test beyond
//! the plain data types.

use std::collections::BTreeMap;

use aupat::au_model::AnnotatedFrame;
use aupat::nn::{Mode, ModelState};
use aupat::rng::Stream;

/// A pattern as a 0/1 string with its frame count.
pub type Counted = (String, u64);

/// Distinct patterns (as 0/1 strings) with frame counts, found by linear
/// search, sorted by pattern string.
pub fn census(frames: &[AnnotatedFrame]) -> Vec<(String, u64)> {
    let mut out: Vec<(String, u64)> = Vec::new();
    for f in frames {
        let key = f.pattern.to_string();
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 += 1,
            None => out.push((key, 1)),
        }
    }
    out.sort();
    out
}

/// Count descending, then pattern string ascending. Insertion sort.
pub fn ranking(census: &[(String, u64)]) -> Vec<(String, u64)> {
    let mut out: Vec<(String, u64)> = Vec::new();
    for e in census {
        let pos = out.iter().position(|o| o.1 < e.1 || (o.1 == e.1 && o.0 > e.0)).unwrap_or(out.len());
        out.insert(pos, e.clone());
    }
    out
}

/// First `top` entries of the ranking and the last `bottom` of what remains.
pub fn top_bottom(ranked: &[Counted], top: usize, bottom: usize) -> (Vec<Counted>, Vec<Counted>) {
    let t: Vec<_> = ranked.iter().take(top).cloned().collect();
    let rest: Vec<_> = ranked.iter().skip(t.len()).cloned().collect();
    let b = rest.iter().skip(rest.len().saturating_sub(bottom)).cloned().collect();
    (t, b)
}

/// Most frequent pattern per task (ties to the smaller pattern string).
pub fn task_tops(frames: &[AnnotatedFrame]) -> BTreeMap<String, (String, u64)> {
    let mut tasks: Vec<String> = frames.iter().map(|f| f.task.clone()).collect();
    tasks.sort();
    tasks.dedup();
    tasks
        .into_iter()
        .map(|t| {
            let sub: Vec<AnnotatedFrame> = frames.iter().filter(|f| f.task == t).cloned().collect();
            let best = ranking(&census(&sub)).into_iter().next().expect("task has frames");
            (t, best)
        })
        .collect()
}

/// Patterns with at least `min_count` frames, in ranking order.
pub fn min_count_selection(census: &[(String, u64)], min_count: u64) -> Vec<String> {
    ranking(census).into_iter().filter(|(_, c)| *c >= min_count).map(|(p, _)| p).collect()
}

/// Fraction of frames with AU `j` active.
pub fn base_rate(frames: &[AnnotatedFrame], j: usize) -> f64 {
    frames.iter().filter(|f| f.pattern.to_string().as_bytes()[j] == b'1').count() as f64 / frames.len() as f64
}

fn harmonic_f1(tp: f64, fp: f64, fn_: f64) -> f64 {
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn counts(truth: &[bool], pred: &[bool], positive: bool) -> (f64, f64, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&t, &p) in truth.iter().zip(pred) {
        match (t == positive, p == positive) {
            (true, true) => tp += 1.0,
            (false, true) => fp += 1.0,
            (true, false) => fn_ += 1.0,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

/// Positive-class F1 as the harmonic mean of precision and recall.
pub fn f1_binary(truth: &[bool], pred: &[bool]) -> f64 {
    let (tp, fp, fn_) = counts(truth, pred, true);
    harmonic_f1(tp, fp, fn_)
}

/// Mean of the positive-class and negative-class F1.
pub fn f1_macro(truth: &[bool], pred: &[bool]) -> f64 {
    let (tp, fp, fn_) = counts(truth, pred, true);
    let (tn, fn2, fp2) = counts(truth, pred, false);
    (harmonic_f1(tp, fp, fn_) + harmonic_f1(tn, fn2, fp2)) / 2.0
}

/// Micro F1 from pooled per-class counts over both classes.
pub fn f1_micro(truth: &[bool], pred: &[bool]) -> f64 {
    let (tp1, fp1, fn1) = counts(truth, pred, true);
    let (tp0, fp0, fn0) = counts(truth, pred, false);
    harmonic_f1(tp1 + tp0, fp1 + fp0, fn1 + fn0)
}

pub fn accuracy(truth: &[bool], pred: &[bool]) -> f64 {
    truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64
}

/// Probability that a positive outscores a negative, ties counting half,
/// over all positive/negative pairs.
pub fn auc_pairwise(truth: &[bool], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &ti) in truth.iter().enumerate() {
        if !ti {
            continue;
        }
        for (j, &tj) in truth.iter().enumerate() {
            if tj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Per-AU marginal: sum over classes of `probs[c] * bit_j(class c)`.
pub fn decode_marginals(probs: &[f64], classes: &[String]) -> Vec<f64> {
    let k = classes[0].len();
    (0..k).map(|j| probs.iter().zip(classes).filter(|(_, c)| c.as_bytes()[j] == b'1').map(|(p, _)| *p).sum()).collect()
}

/// Worst relative error between analytic and central-difference gradients
/// over every trainable parameter, with dropout masks replayed from
/// `mask_seed` so each loss evaluation sees the same network.
pub fn gradient_check(state: &ModelState, x: &[f64], target: &[f64], mask_seed: u64, h: f64) -> f64 {
    let loss = |s: &ModelState| {
        let mut r = Stream::new(mask_seed);
        let f = s.forward(x, Mode::Train(&mut r)).expect("forward");
        s.loss(&f.output, target)
    };
    let mut r = Stream::new(mask_seed);
    let fwd = state.forward(x, Mode::Train(&mut r)).expect("forward");
    let grads = state.backward(&fwd, target).expect("backward");
    let mut worst: f64 = 0.0;
    let mut probe = state.clone();
    for (l, g) in grads.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        for (bias, analytic) in [(false, &g.weights), (true, &g.bias)] {
            for (i, &a) in analytic.iter().enumerate() {
                let orig = *param(&mut probe, l, bias, i);
                *param(&mut probe, l, bias, i) = orig + h;
                let up = loss(&probe);
                *param(&mut probe, l, bias, i) = orig - h;
                let down = loss(&probe);
                *param(&mut probe, l, bias, i) = orig;
                let numeric = (up - down) / (2.0 * h);
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
    }
    worst
}

fn param(s: &mut ModelState, layer: usize, bias: bool, i: usize) -> &mut f64 {
    let p = &mut s.params_mut()[layer];
    if bias {
        &mut p.bias[i]
    } else {
        &mut p.weights[i]
    }
}
