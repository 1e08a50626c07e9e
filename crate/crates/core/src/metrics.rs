//! Per-AU binary detection metrics and pooled-over-folds reports.
//!
//! Conventions:
//! - F1-binary is the positive-class F1, `2tp / (2tp + fp + fn)`.
//! - F1-macro averages positive-class and negative-class F1.
//! - F1-micro pools both one-vs-rest classes, which for a single binary
//!   label reduces to accuracy `(tp + tn) / n`.
//! - AUC is the Mann-Whitney rank statistic with ties counted half.
//!
//! A class-level F1 is flagged degenerate when that class never occurs in
//! the truth (its value is then 0.0, or 0.0 by the zero-denominator rule).
//! AUC is flagged and set to 0.5 when either class is absent.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::au_model::{AuPattern, AuRegistry};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} truths vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("score at position {0} is not finite")]
    NonFiniteScore(usize),
    #[error("fold {0} is empty")]
    EmptyFold(usize),
    #[error("frame {0} is scored by more than one fold")]
    OverlappingFolds(usize),
    #[error("fold {fold}: pattern width {found} does not match registry width {expected}")]
    Width { fold: usize, expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts with positive and negative labels exchanged.
    pub fn swapped(&self) -> Confusion {
        Confusion { tp: self.tn, fp: self.fn_, fn_: self.fp, tn: self.tp }
    }

    fn add(&mut self, truth: bool, pred: bool) {
        match (truth, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// A metric value with its degenerate-case flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

impl Score {
    fn ok(value: f64) -> Self {
        Self { value, degenerate: false }
    }
    fn flagged(value: f64) -> Self {
        Self { value, degenerate: true }
    }
}

pub fn confusion(truth: &[bool], pred: &[bool]) -> Result<Confusion, MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut c = Confusion::default();
    for (&t, &p) in truth.iter().zip(pred) {
        c.add(t, p);
    }
    Ok(c)
}

pub fn f1_binary(c: &Confusion) -> Score {
    let denom = 2 * c.tp + c.fp + c.fn_;
    let value = if denom == 0 { 0.0 } else { (2 * c.tp) as f64 / denom as f64 };
    if c.tp + c.fn_ == 0 {
        Score::flagged(value)
    } else {
        Score::ok(value)
    }
}

pub fn f1_macro(c: &Confusion) -> Score {
    let pos = f1_binary(c);
    let neg = f1_binary(&c.swapped());
    Score { value: 0.5 * (pos.value + neg.value), degenerate: pos.degenerate || neg.degenerate }
}

pub fn f1_micro(c: &Confusion) -> Score {
    let n = c.total();
    if n == 0 {
        return Score::flagged(0.0);
    }
    Score::ok((c.tp + c.tn) as f64 / n as f64)
}

/// Rank-based AUC: average ranks over ties, then
/// `(R+ - P(P+1)/2) / (P N)`.
pub fn auc(truth: &[bool], scores: &[f64]) -> Result<Score, MetricError> {
    if truth.len() != scores.len() {
        return Err(MetricError::LengthMismatch(truth.len(), scores.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore(i));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(Score::flagged(0.5));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tie midranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1, midrank (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u128;
        let positives = order[i..=j].iter().filter(|&&k| truth[k]).count() as u128;
        twice_rank_sum += twice_mid * positives;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(Score::ok(twice_u as f64 / (2 * p * n) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuMetrics {
    pub au: u16,
    pub f1_binary: Score,
    pub f1_micro: Score,
    pub f1_macro: Score,
    pub auc: Score,
    pub confusion: Confusion,
}

impl AuMetrics {
    pub fn from_predictions(au: u16, truth: &[bool], pred: &[bool], scores: &[f64]) -> Result<Self, MetricError> {
        let c = confusion(truth, pred)?;
        Ok(Self { au, f1_binary: f1_binary(&c), f1_micro: f1_micro(&c), f1_macro: f1_macro(&c), auc: auc(truth, scores)?, confusion: c })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Averages {
    pub f1_binary: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<AuMetrics>,
    pub average: Averages,
    pub manifest_id: Option<String>,
}

fn mean_valid(scores: impl Iterator<Item = Score>) -> f64 {
    let (sum, n) = scores.filter(|s| !s.degenerate).fold((0.0, 0usize), |(s, n), x| (s + x.value, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl MetricReport {
    pub fn from_rows(rows: Vec<AuMetrics>) -> Self {
        let average = Averages {
            f1_binary: mean_valid(rows.iter().map(|r| r.f1_binary)),
            f1_micro: mean_valid(rows.iter().map(|r| r.f1_micro)),
            f1_macro: mean_valid(rows.iter().map(|r| r.f1_macro)),
            auc: mean_valid(rows.iter().map(|r| r.auc)),
        };
        Self { rows, average, manifest_id: None }
    }

    pub fn with_manifest(mut self, id: impl Into<String>) -> Self {
        self.manifest_id = Some(id.into());
        self
    }

    pub fn row(&self, au: u16) -> Option<&AuMetrics> {
        self.rows.iter().find(|r| r.au == au)
    }

    pub fn f1_binary_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.f1_binary.value).collect()
    }

    /// `au,f1_binary,f1_micro,f1_macro,auc,tp,fp,fn,tn,flags` plus `AVG`.
    ///
    /// Flags list the degenerate metrics separated by `|` (`b`inary,
    /// m`i`cro, m`a`cro, a`u`c), empty when none.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("au,f1_binary,f1_micro,f1_macro,auc,tp,fp,fn,tn,flags\n");
        for r in &self.rows {
            let flags: Vec<&str> = [
                (r.f1_binary.degenerate, "f1_binary"),
                (r.f1_micro.degenerate, "f1_micro"),
                (r.f1_macro.degenerate, "f1_macro"),
                (r.auc.degenerate, "auc"),
            ]
            .iter()
            .filter(|(d, _)| *d)
            .map(|(_, n)| *n)
            .collect();
            let c = r.confusion;
            let _ = writeln!(
                out,
                "AU{},{},{},{},{},{},{},{},{},{}",
                r.au,
                r.f1_binary.value,
                r.f1_micro.value,
                r.f1_macro.value,
                r.auc.value,
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                flags.join("|")
            );
        }
        let a = self.average;
        let _ = writeln!(out, "AVG,{},{},{},{},,,,,", a.f1_binary, a.f1_micro, a.f1_macro, a.auc);
        out
    }

    /// Fixed-width text table for terminals; degenerate cells carry `*`.
    pub fn to_text(&self) -> String {
        let cell = |s: Score| format!("{:.4}{}", s.value, if s.degenerate { "*" } else { " " });
        let mut out = format!("{:<6}{:>10}{:>10}{:>10}{:>10}\n", "AU", "F1-bin", "F1-micro", "F1-macro", "AUC");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<6}{:>10}{:>10}{:>10}{:>10}",
                format!("AU{}", r.au),
                cell(r.f1_binary),
                cell(r.f1_micro),
                cell(r.f1_macro),
                cell(r.auc)
            );
        }
        let a = self.average;
        let _ = writeln!(out, "{:<6}{:>10.4} {:>9.4} {:>9.4} {:>9.4} ", "Avg", a.f1_binary, a.f1_micro, a.f1_macro, a.auc);
        out
    }
}

/// Held-out predictions of one fold. `frames` index into the evaluated table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPredictions {
    pub frames: Vec<usize>,
    pub truth: Vec<AuPattern>,
    pub pred: Vec<AuPattern>,
    /// Per-frame, per-AU scores used for AUC.
    pub scores: Vec<Vec<f64>>,
}

impl FoldPredictions {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Hard labels by thresholding scores (`score >= threshold` is active).
    pub fn from_scores(frames: Vec<usize>, truth: Vec<AuPattern>, scores: Vec<Vec<f64>>, threshold: f64) -> Self {
        let pred = scores.iter().map(|s| AuPattern::from_bits(&s.iter().map(|&v| v >= threshold).collect::<Vec<_>>())).collect();
        Self { frames, truth, pred, scores }
    }
}

/// Concatenates every fold's predictions and scores each AU once on the
/// pooled sequences; folds are never averaged.
pub fn pooled_report(folds: &[FoldPredictions], registry: &AuRegistry) -> Result<MetricReport, MetricError> {
    let k = registry.k();
    let mut seen = HashSet::new();
    let mut truth: Vec<Vec<bool>> = vec![Vec::new(); k];
    let mut pred: Vec<Vec<bool>> = vec![Vec::new(); k];
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (fi, fold) in folds.iter().enumerate() {
        if fold.is_empty() {
            return Err(MetricError::EmptyFold(fi));
        }
        let n = fold.frames.len();
        if fold.truth.len() != n || fold.pred.len() != n || fold.scores.len() != n {
            return Err(MetricError::LengthMismatch(fold.truth.len(), fold.pred.len()));
        }
        for i in 0..n {
            if !seen.insert(fold.frames[i]) {
                return Err(MetricError::OverlappingFolds(fold.frames[i]));
            }
            let (t, p, s) = (&fold.truth[i], &fold.pred[i], &fold.scores[i]);
            for w in [t.width(), p.width(), s.len()] {
                if w != k {
                    return Err(MetricError::Width { fold: fi, expected: k, found: w });
                }
            }
            for j in 0..k {
                truth[j].push(t.get(j));
                pred[j].push(p.get(j));
                scores[j].push(s[j]);
            }
        }
    }
    if seen.is_empty() {
        return Err(MetricError::Empty);
    }
    let rows = registry
        .codes()
        .iter()
        .enumerate()
        .map(|(j, &au)| AuMetrics::from_predictions(au, &truth[j], &pred[j], &scores[j]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn hand_counted_confusion() {
        let c = confusion(&bits("1100"), &bits("1010")).unwrap();
        assert_eq!(c, Confusion { tp: 1, fp: 1, fn_: 1, tn: 1 });
        let same = confusion(&bits("10110"), &bits("10110")).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        assert_eq!(confusion(&bits("10"), &bits("1")), Err(MetricError::LengthMismatch(2, 1)));
    }

    #[test]
    fn ones_predictor_half_base_rate() {
        let truth: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        let c = confusion(&truth, &vec![true; 1000]).unwrap();
        let f = f1_binary(&c).value;
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert!((f - 2.0 * 0.5 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_degenerate() {
        let c = confusion(&bits("1010"), &bits("1010")).unwrap();
        assert_eq!(f1_binary(&c), Score::ok(1.0));
        assert_eq!(f1_macro(&c), Score::ok(1.0));
        assert_eq!(f1_micro(&c), Score::ok(1.0));
        let empty = Confusion { tp: 0, fp: 0, fn_: 0, tn: 5 };
        assert_eq!(f1_binary(&empty), Score::flagged(0.0));
    }

    #[test]
    fn macro_symmetric_under_label_swap() {
        let t = bits("110100111");
        let p = bits("101100011");
        let a = f1_macro(&confusion(&t, &p).unwrap());
        let neg = |v: &[bool]| v.iter().map(|b| !b).collect::<Vec<_>>();
        let b = f1_macro(&confusion(&neg(&t), &neg(&p)).unwrap());
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn ones_macro_closed_form() {
        // 59 positives of 100: p / (1 + p) = 0.3710...
        let truth: Vec<bool> = (0..100).map(|i| i < 59).collect();
        let c = confusion(&truth, &[true; 100]).unwrap();
        assert!((f1_macro(&c).value - 0.59 / 1.59).abs() < 1e-12);
        assert!((f1_micro(&c).value - 0.59).abs() < 1e-12);
    }

    #[test]
    fn auc_constant_and_separated() {
        let t = bits("10110");
        assert_eq!(auc(&t, &[0.3; 5]).unwrap().value, 0.5);
        assert_eq!(auc(&t, &[0.9, 0.1, 0.8, 0.7, 0.2]).unwrap().value, 1.0);
        assert_eq!(auc(&t, &[0.1, 0.9, 0.2, 0.3, 0.8]).unwrap().value, 0.0);
        assert_eq!(auc(&bits("111"), &[0.1, 0.2, 0.3]).unwrap(), Score::flagged(0.5));
        assert_eq!(auc(&t, &[0.1, f64::NAN, 0.2, 0.3, 0.8]), Err(MetricError::NonFiniteScore(1)));
    }

    fn fold(frames: &[usize], truth: &[&str], pred: &[&str]) -> FoldPredictions {
        let p = |s: &&str| AuPattern::parse(s).unwrap();
        FoldPredictions {
            frames: frames.to_vec(),
            truth: truth.iter().map(p).collect(),
            pred: pred.iter().map(p).collect(),
            scores: pred.iter().map(|s| s.chars().map(|c| if c == '1' { 0.9 } else { 0.1 }).collect()).collect(),
        }
    }

    #[test]
    fn pooling_differs_from_fold_mean() {
        // Fold F1s are 0, 0 and 1; pooled counts give tp=1, fp=1, fn=1.
        let reg = AuRegistry::new(vec![1]).unwrap();
        let folds = [fold(&[0], &["1"], &["0"]), fold(&[1], &["0"], &["1"]), fold(&[2], &["1"], &["1"])];
        let r = pooled_report(&folds, &reg).unwrap();
        assert!((r.rows[0].f1_binary.value - 0.5).abs() < 1e-15);
        let fold_mean = (0.0 + 0.0 + 1.0) / 3.0;
        assert!((r.rows[0].f1_binary.value - fold_mean).abs() > 0.1);
    }

    #[test]
    fn pooled_errors() {
        let reg = AuRegistry::new(vec![1]).unwrap();
        let empty = FoldPredictions { frames: vec![], truth: vec![], pred: vec![], scores: vec![] };
        assert_eq!(pooled_report(&[empty], &reg), Err(MetricError::EmptyFold(0)));
        let dup = [fold(&[0], &["1"], &["1"]), fold(&[0], &["1"], &["1"])];
        assert_eq!(pooled_report(&dup, &reg), Err(MetricError::OverlappingFolds(0)));
    }

    #[test]
    fn csv_layout() {
        let reg = AuRegistry::new(vec![1, 2]).unwrap();
        let r = pooled_report(&[fold(&[0, 1], &["10", "01"], &["10", "11"])], &reg).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "au,f1_binary,f1_micro,f1_macro,auc,tp,fp,fn,tn,flags");
        assert_eq!(lines[1], "AU1,0.6666666666666666,0.5,0.3333333333333333,0.5,1,1,0,0,");
        assert!(lines[3].starts_with("AVG,"));
    }
}
