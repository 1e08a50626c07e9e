//! Subject-level folds and the experiment pipelines: multi-AU, single-AU,
//! pattern pretraining with a frozen split head, all-pattern training and
//! the unseen-pattern evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::variance;
use crate::au_model::{AuPattern, DatasetTable};
use crate::metrics::{pooled_report, FoldPredictions, MetricError, MetricReport};
use crate::nn::{
    freeze_and_split, predict, train, Head, Labels, Loss, ModelState, NnError, Preset, Shape, TrainConfig, DESK_SCALE, SPLIT_HIDDEN,
};
use crate::pattern_mining::{census, restrict_indices, select_patterns_by_min_count, MiningError, PatternCodebook};
use crate::rng::{derive_seed, Stream};
use crate::synthgen::SynthDataset;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("fold plan: {0}")]
    Folds(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("data: {0}")]
    Data(String),
    #[error("missing pretrained pattern models: {0}")]
    MissingPretrained(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Mining(#[from] MiningError),
}

/// Subjects assigned to each fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

/// Sorts and de-duplicates the subjects, shuffles them with the seed and
/// deals them round-robin, so fold sizes differ by at most one.
pub fn make_folds(subjects: &[String], k: usize, seed: u64) -> Result<FoldPlan, ExperimentError> {
    if k < 2 {
        return Err(ExperimentError::Folds(format!("need at least 2 folds, got {k}")));
    }
    let mut ids: Vec<String> = subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < k {
        return Err(ExperimentError::Folds(format!("{} subjects cannot fill {k} folds", ids.len())));
    }
    Stream::derived(seed, "folds").shuffle(&mut ids);
    let mut folds = vec![Vec::new(); k];
    for (i, s) in ids.into_iter().enumerate() {
        folds[i % k].push(s);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(FoldPlan { seed, folds })
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// SHA-256 of the plan's JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("plan serialises");
        hex::encode(Sha256::digest(json))
    }

    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|s| s == subject))
    }

    /// Checks the plan is a partition into non-empty folds.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let mut seen = BTreeSet::new();
        for (i, f) in self.folds.iter().enumerate() {
            if f.is_empty() {
                return Err(ExperimentError::Folds(format!("fold {i} is empty")));
            }
            for s in f {
                if !seen.insert(s) {
                    return Err(ExperimentError::Folds(format!("subject {s} appears in two folds")));
                }
            }
        }
        Ok(())
    }

    /// Train and test frame indices for `fold`, optionally restricted to
    /// `subset`. Fails if any frame's subject is missing from the plan or if
    /// a subject lands on both sides.
    pub fn split(&self, table: &DatasetTable, fold: usize, subset: Option<&[usize]>) -> Result<(Vec<usize>, Vec<usize>), ExperimentError> {
        let all: Vec<usize>;
        let idx = match subset {
            Some(s) => s,
            None => {
                all = (0..table.len()).collect();
                &all
            }
        };
        let (mut train, mut test) = (Vec::new(), Vec::new());
        let (mut train_subj, mut test_subj) = (BTreeSet::new(), BTreeSet::new());
        for &i in idx {
            let s = &table.frames()[i].subject;
            match self.fold_of(s) {
                None => return Err(ExperimentError::Protocol(format!("subject {s} is not in the fold plan"))),
                Some(f) if f == fold => {
                    test.push(i);
                    test_subj.insert(s.as_str());
                }
                Some(_) => {
                    train.push(i);
                    train_subj.insert(s.as_str());
                }
            }
        }
        if let Some(s) = train_subj.intersection(&test_subj).next() {
            return Err(ExperimentError::Protocol(format!("subject {s} is in both train and test of fold {fold}")));
        }
        Ok((train, test))
    }
}

/// Annotations plus one flattened image per frame.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub table: DatasetTable,
    pub inputs: Vec<Vec<f64>>,
    pub shape: Shape,
}

impl ExperimentData {
    pub fn new(table: DatasetTable, inputs: Vec<Vec<f64>>, shape: Shape) -> Result<Self, ExperimentError> {
        if inputs.len() != table.len() {
            return Err(ExperimentError::Data(format!("{} images for {} frames", inputs.len(), table.len())));
        }
        let n: usize = shape.iter().product();
        if let Some(i) = inputs.iter().position(|x| x.len() != n) {
            return Err(ExperimentError::Data(format!("image {i} has {} values, expected {n}", inputs[i].len())));
        }
        Ok(Self { table, inputs, shape })
    }

    pub fn from_synth(ds: &SynthDataset) -> Result<Self, ExperimentError> {
        let side = ds.images.first().map(|i| i.side).unwrap_or(0);
        Self::new(ds.table.clone(), ds.images.iter().map(|i| i.to_f64()).collect(), [1, side, side])
    }

    fn gather(&self, idx: &[usize]) -> Vec<Vec<f64>> {
        idx.iter().map(|&i| self.inputs[i].clone()).collect()
    }

    fn patterns(&self, idx: &[usize]) -> Vec<AuPattern> {
        idx.iter().map(|&i| self.table.frames()[i].pattern).collect()
    }

    fn bits(&self, idx: &[usize]) -> Labels {
        Labels::Bits(idx.iter().map(|&i| self.table.frames()[i].pattern.to_f64_vec()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Dense-width multiplier for the Network-2 preset.
    pub scale: f64,
    pub folds: usize,
    pub min_count: u64,
    pub seed: u64,
    /// Loss is chosen per head; the remaining fields apply to every model.
    pub train: TrainConfig,
    pub split_hidden: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Compact,
            scale: DESK_SCALE,
            folds: 3,
            min_count: 15,
            seed: 0,
            train: TrainConfig::default(),
            split_hidden: SPLIT_HIDDEN,
        }
    }
}

impl ExperimentConfig {
    fn model(&self, shape: Shape, head: Head, label: &str) -> Result<ModelState, ExperimentError> {
        let spec = self.preset.build(shape, head, self.scale, derive_seed(self.seed, &format!("{label}/init")))?;
        Ok(ModelState::init(spec)?)
    }

    fn train_cfg(&self, head: Head, label: &str) -> TrainConfig {
        TrainConfig { loss: Loss::for_head(head), seed: derive_seed(self.seed, &format!("{label}/train")), ..self.train.clone() }
    }
}

/// Pooled evaluation of one model family across all folds.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub report: MetricReport,
    pub folds: Vec<FoldPredictions>,
    pub fold_plan_hash: String,
    /// Subjects behind each fold's training and test frames.
    pub fold_subjects: Vec<FoldSubjects>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSubjects {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl FoldSubjects {
    fn of(table: &DatasetTable, train: &[usize], test: &[usize]) -> Self {
        let ids = |idx: &[usize]| idx.iter().map(|&i| table.frames()[i].subject.clone()).collect();
        Self { train: ids(train), test: ids(test) }
    }
}

impl ModelRun {
    fn pooled(parts: Vec<(FoldPredictions, FoldSubjects)>, plan: &FoldPlan, table: &DatasetTable) -> Result<Self, ExperimentError> {
        let (folds, fold_subjects): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let report = pooled_report(&folds, table.registry())?;
        Ok(Self { report, folds, fold_plan_hash: plan.hash(), fold_subjects })
    }

    /// Sample variance of the per-AU F1-binary values, skipping AUs whose
    /// F1-binary is degenerate (no positives in the evaluated frames).
    pub fn f1_binary_variance(&self) -> f64 {
        let v: Vec<f64> = self.report.rows.iter().filter(|r| !r.f1_binary.degenerate).map(|r| r.f1_binary.value).collect();
        variance(&v).unwrap_or(f64::NAN)
    }
}

fn folds_of(plan: &FoldPlan) -> Result<std::ops::Range<usize>, ExperimentError> {
    plan.validate()?;
    Ok(0..plan.k())
}

fn train_multi_label(
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    train_idx: &[usize],
    label: &str,
) -> Result<ModelState, ExperimentError> {
    let head = Head::Sigmoid(data.table.registry().k());
    let model = cfg.model(data.shape, head, label)?;
    let (model, _) = train(model, &data.gather(train_idx), &data.bits(train_idx), &cfg.train_cfg(head, label))?;
    Ok(model)
}

fn evaluate_sigmoid(
    model: &ModelState,
    data: &ExperimentData,
    test_idx: &[usize],
    threshold: f64,
) -> Result<FoldPredictions, ExperimentError> {
    let scores = predict(model, &data.gather(test_idx))?;
    Ok(FoldPredictions::from_scores(test_idx.to_vec(), data.patterns(test_idx), scores, threshold))
}

/// One 12-unit sigmoid model per fold; held-out predictions pooled.
pub fn exp1_multi_au(data: &ExperimentData, cfg: &ExperimentConfig, plan: &FoldPlan) -> Result<ModelRun, ExperimentError> {
    let folds: Vec<(FoldPredictions, FoldSubjects)> = folds_of(plan)?
        .into_par_iter()
        .map(|f| {
            let (train_idx, test_idx) = plan.split(&data.table, f, None)?;
            let model = train_multi_label(data, cfg, &train_idx, &format!("exp1/fold{f}"))?;
            let pred = evaluate_sigmoid(&model, data, &test_idx, cfg.train.threshold)?;
            Ok((pred, FoldSubjects::of(&data.table, &train_idx, &test_idx)))
        })
        .collect::<Result<_, ExperimentError>>()?;
    ModelRun::pooled(folds, plan, &data.table)
}

/// Labels for a one-unit model: only bit `j` of each frame.
pub fn single_au_labels(table: &DatasetTable, idx: &[usize], j: usize) -> Labels {
    Labels::Bits(idx.iter().map(|&i| vec![f64::from(u8::from(table.frames()[i].pattern.get(j)))]).collect())
}

/// An independent one-unit model per AU and fold, each trained only on
/// that AU's labels; per-AU scores are reassembled into pooled rows.
pub fn exp2_single_au(data: &ExperimentData, cfg: &ExperimentConfig, plan: &FoldPlan) -> Result<ModelRun, ExperimentError> {
    let k = data.table.registry().k();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = folds_of(plan)?.map(|f| plan.split(&data.table, f, None)).collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..splits.len()).flat_map(|f| (0..k).map(move |j| (f, j))).collect();
    let scores: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(f, j)| {
            let (train_idx, test_idx) = &splits[f];
            let label = format!("exp2/fold{f}/au{j}");
            let head = Head::Sigmoid(1);
            let model = cfg.model(data.shape, head, &label)?;
            let labels = single_au_labels(&data.table, train_idx, j);
            let (model, _) = train(model, &data.gather(train_idx), &labels, &cfg.train_cfg(head, &label))?;
            Ok(predict(&model, &data.gather(test_idx))?.into_iter().map(|s| s[0]).collect())
        })
        .collect::<Result<_, ExperimentError>>()?;
    let folds = splits
        .iter()
        .enumerate()
        .map(|(f, (train_idx, test_idx))| {
            let per_frame: Vec<Vec<f64>> = (0..test_idx.len()).map(|i| (0..k).map(|j| scores[f * k + j][i]).collect()).collect();
            let pred = FoldPredictions::from_scores(test_idx.clone(), data.patterns(test_idx), per_frame, cfg.train.threshold);
            (pred, FoldSubjects::of(&data.table, train_idx, test_idx))
        })
        .collect();
    ModelRun::pooled(folds, plan, &data.table)
}

/// Hard AU labels from the most probable class (lowest index on ties) and
/// per-AU marginal scores: the summed probability of classes with that AU.
pub fn decode_to_au(probs: &[f64], codebook: &PatternCodebook) -> Result<(AuPattern, Vec<f64>), ExperimentError> {
    let width = codebook.width().ok_or_else(|| ExperimentError::Data("empty codebook".into()))?;
    if probs.len() != codebook.len() {
        return Err(ExperimentError::Data(format!("{} probabilities for {} classes", probs.len(), codebook.len())));
    }
    let mut best = 0;
    for (c, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = c;
        }
    }
    let mut scores = vec![0.0; width];
    for (c, &p) in probs.iter().enumerate() {
        let pat = codebook.pattern(c);
        for (j, s) in scores.iter_mut().enumerate() {
            if pat.get(j) {
                *s += p;
            }
        }
    }
    Ok((codebook.pattern(best), scores))
}

/// Runs a pattern classifier on `idx` and decodes each frame to AU space.
pub fn eval_pattern_model(
    model: &ModelState,
    data: &ExperimentData,
    idx: &[usize],
    codebook: &PatternCodebook,
) -> Result<FoldPredictions, ExperimentError> {
    let probs = predict(model, &data.gather(idx))?;
    let (pred, scores): (Vec<AuPattern>, Vec<Vec<f64>>) =
        probs.iter().map(|p| decode_to_au(p, codebook)).collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
    Ok(FoldPredictions { frames: idx.to_vec(), truth: data.patterns(idx), pred, scores })
}

#[derive(Debug, Clone)]
pub struct Exp3Output {
    pub codebook: PatternCodebook,
    /// Frames whose pattern is in / outside the codebook.
    pub in_codebook: Vec<usize>,
    pub out_of_codebook: Vec<usize>,
    pub direct: ModelRun,
    pub pattern: ModelRun,
    pub split: ModelRun,
    /// Per-fold pattern classifiers, reused by exp4 and the unseen evaluation.
    pub pattern_models: Vec<ModelState>,
    pub split_models: Vec<ModelState>,
    /// Codebook classes with no training frames in a fold.
    pub flags: Vec<String>,
}

/// Builds the codebook of patterns seen at least `min_count` times, restricts
/// the data to it, and per fold trains a direct multi-label model, a
/// softmax pattern classifier, and a frozen-feature split head on top of the
/// classifier.
pub fn exp3_pattern_pretrain(data: &ExperimentData, cfg: &ExperimentConfig, plan: &FoldPlan) -> Result<Exp3Output, ExperimentError> {
    let codebook = select_patterns_by_min_count(&census(&data.table)?, cfg.min_count)?;
    if codebook.len() < 2 {
        return Err(ExperimentError::Data(format!("min count {} leaves {} pattern(s); need at least 2", cfg.min_count, codebook.len())));
    }
    let (in_idx, out_idx) = restrict_indices(&data.table, &codebook);
    let k = data.table.registry().k();
    let classes = codebook.len();

    struct FoldOut {
        direct: FoldPredictions,
        pattern: FoldPredictions,
        split: FoldPredictions,
        pattern_model: ModelState,
        split_model: ModelState,
        subjects: FoldSubjects,
        flags: Vec<String>,
    }

    let outs: Vec<FoldOut> = folds_of(plan)?
        .into_par_iter()
        .map(|f| {
            let (train_idx, test_idx) = plan.split(&data.table, f, Some(&in_idx))?;
            if train_idx.is_empty() || test_idx.is_empty() {
                return Err(ExperimentError::Data(format!("fold {f} has no codebook frames on one side")));
            }
            let direct_model = train_multi_label(data, cfg, &train_idx, &format!("exp3/direct/fold{f}"))?;
            let direct = evaluate_sigmoid(&direct_model, data, &test_idx, cfg.train.threshold)?;

            let class_of: Vec<usize> =
                train_idx.iter().map(|&i| codebook.class_of(&data.table.frames()[i].pattern).expect("restricted frame")).collect();
            let mut present = vec![false; classes];
            class_of.iter().for_each(|&c| present[c] = true);
            let flags = present
                .iter()
                .enumerate()
                .filter(|(_, p)| !**p)
                .map(|(c, _)| format!("fold {f}: class {c} ({}) has no training frames", codebook.pattern(c)))
                .collect();

            let label = format!("exp3/pattern/fold{f}");
            let head = Head::Softmax(classes);
            let model = cfg.model(data.shape, head, &label)?;
            let (pattern_model, _) = train(model, &data.gather(&train_idx), &Labels::Classes(class_of), &cfg.train_cfg(head, &label))?;
            let pattern = eval_pattern_model(&pattern_model, data, &test_idx, &codebook)?;

            let label = format!("exp3/split/fold{f}");
            let split_init = freeze_and_split(&pattern_model, cfg.split_hidden, k, derive_seed(cfg.seed, &format!("{label}/init")))?;
            let (split_model, _) =
                train(split_init, &data.gather(&train_idx), &data.bits(&train_idx), &cfg.train_cfg(Head::Sigmoid(k), &label))?;
            let split = evaluate_sigmoid(&split_model, data, &test_idx, cfg.train.threshold)?;
            let subjects = FoldSubjects::of(&data.table, &train_idx, &test_idx);
            Ok(FoldOut { direct, pattern, split, pattern_model, split_model, subjects, flags })
        })
        .collect::<Result<_, ExperimentError>>()?;

    let mut direct = Vec::new();
    let mut pattern = Vec::new();
    let mut split = Vec::new();
    let mut pattern_models = Vec::new();
    let mut split_models = Vec::new();
    let mut flags = Vec::new();
    for o in outs {
        direct.push((o.direct, o.subjects.clone()));
        pattern.push((o.pattern, o.subjects.clone()));
        split.push((o.split, o.subjects));
        pattern_models.push(o.pattern_model);
        split_models.push(o.split_model);
        flags.extend(o.flags);
    }
    Ok(Exp3Output {
        direct: ModelRun::pooled(direct, plan, &data.table)?,
        pattern: ModelRun::pooled(pattern, plan, &data.table)?,
        split: ModelRun::pooled(split, plan, &data.table)?,
        codebook,
        in_codebook: in_idx,
        out_of_codebook: out_idx,
        pattern_models,
        split_models,
        flags,
    })
}

#[derive(Debug, Clone)]
pub struct Exp4Output {
    pub direct: ModelRun,
    pub split: ModelRun,
    pub split_models: Vec<ModelState>,
}

/// Direct multi-label models and split heads over the pretrained pattern
/// classifiers' frozen features, both on every frame. `pattern_models[f]`
/// must come from the same fold plan.
pub fn exp4_all_patterns(
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    plan: &FoldPlan,
    pattern_models: &[ModelState],
) -> Result<Exp4Output, ExperimentError> {
    if pattern_models.len() != plan.k() {
        return Err(ExperimentError::MissingPretrained(format!("{} models for {} folds", pattern_models.len(), plan.k())));
    }
    let k = data.table.registry().k();
    let outs: Vec<(FoldPredictions, FoldPredictions, ModelState, FoldSubjects)> = folds_of(plan)?
        .into_par_iter()
        .map(|f| {
            let (train_idx, test_idx) = plan.split(&data.table, f, None)?;
            let direct_model = train_multi_label(data, cfg, &train_idx, &format!("exp4/direct/fold{f}"))?;
            let direct = evaluate_sigmoid(&direct_model, data, &test_idx, cfg.train.threshold)?;
            let label = format!("exp4/split/fold{f}");
            let init = freeze_and_split(&pattern_models[f], cfg.split_hidden, k, derive_seed(cfg.seed, &format!("{label}/init")))?;
            let (split_model, _) = train(init, &data.gather(&train_idx), &data.bits(&train_idx), &cfg.train_cfg(Head::Sigmoid(k), &label))?;
            let split = evaluate_sigmoid(&split_model, data, &test_idx, cfg.train.threshold)?;
            Ok((direct, split, split_model, FoldSubjects::of(&data.table, &train_idx, &test_idx)))
        })
        .collect::<Result<_, ExperimentError>>()?;
    let mut direct = Vec::new();
    let mut split = Vec::new();
    let mut split_models = Vec::new();
    for (d, s, m, subj) in outs {
        direct.push((d, subj.clone()));
        split.push((s, subj));
        split_models.push(m);
    }
    Ok(Exp4Output {
        direct: ModelRun::pooled(direct, plan, &data.table)?,
        split: ModelRun::pooled(split, plan, &data.table)?,
        split_models,
    })
}

/// Each fold's pattern classifier scores the held-out subjects' frames whose
/// patterns are outside the codebook.
pub fn eval_unseen(
    data: &ExperimentData,
    plan: &FoldPlan,
    pattern_models: &[ModelState],
    codebook: &PatternCodebook,
) -> Result<ModelRun, ExperimentError> {
    if pattern_models.len() != plan.k() {
        return Err(ExperimentError::MissingPretrained(format!("{} models for {} folds", pattern_models.len(), plan.k())));
    }
    let (_, out_idx) = restrict_indices(&data.table, codebook);
    if out_idx.is_empty() {
        return Err(ExperimentError::Data("every frame's pattern is in the codebook; nothing unseen to evaluate".into()));
    }
    let mut folds = Vec::new();
    for f in folds_of(plan)? {
        let (_, test_idx) = plan.split(&data.table, f, Some(&out_idx))?;
        if let Some(&i) = test_idx.iter().find(|&&i| codebook.contains(&data.table.frames()[i].pattern)) {
            return Err(ExperimentError::Protocol(format!("frame {i} has a codebook pattern")));
        }
        if !test_idx.is_empty() {
            // The fold's classifier was trained on every other fold's subjects.
            let train = plan.folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, s)| s.iter().cloned()).collect();
            let subjects = FoldSubjects { train, test: FoldSubjects::of(&data.table, &[], &test_idx).test };
            folds.push((eval_pattern_model(&pattern_models[f], data, &test_idx, codebook)?, subjects));
        }
    }
    ModelRun::pooled(folds, plan, &data.table)
}

/// `fold,frame,truth,pred,s1..sk`; scores use shortest round-trip formatting
/// so a report recomputed from this file is bit-identical.
pub fn predictions_csv(folds: &[FoldPredictions]) -> String {
    let k = folds.iter().flat_map(|f| f.scores.first()).map(Vec::len).next().unwrap_or(0);
    let mut out = String::from("fold,frame,truth,pred");
    for j in 0..k {
        let _ = write!(out, ",s{}", j + 1);
    }
    out.push('\n');
    for (fi, f) in folds.iter().enumerate() {
        for i in 0..f.len() {
            let _ = write!(out, "{fi},{},{},{}", f.frames[i], f.truth[i], f.pred[i]);
            for s in &f.scores[i] {
                let _ = write!(out, ",{s}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_predictions_csv(text: &str) -> Result<Vec<FoldPredictions>, ExperimentError> {
    let err = |line: usize, m: &str| ExperimentError::Data(format!("predictions line {line}: {m}"));
    let mut folds: Vec<FoldPredictions> = Vec::new();
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    for (n, rec) in rdr.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| err(line, &e.to_string()))?;
        let fold: usize = rec[0].parse().map_err(|_| err(line, "bad fold"))?;
        if fold > folds.len() {
            return Err(err(line, "folds out of order"));
        }
        if fold == folds.len() {
            folds.push(FoldPredictions { frames: vec![], truth: vec![], pred: vec![], scores: vec![] });
        }
        let f = &mut folds[fold];
        f.frames.push(rec[1].parse().map_err(|_| err(line, "bad frame"))?);
        f.truth.push(AuPattern::parse(&rec[2]).map_err(|e| err(line, &e.to_string()))?);
        f.pred.push(AuPattern::parse(&rec[3]).map_err(|e| err(line, &e.to_string()))?);
        f.scores.push(rec.iter().skip(4).map(|s| s.parse::<f64>().map_err(|_| err(line, "bad score"))).collect::<Result<_, _>>()?);
    }
    Ok(folds)
}

/// Hex SHA-256 of a report's CSV rendering.
pub fn report_hash(report: &MetricReport) -> String {
    hex::encode(Sha256::digest(report.to_csv().as_bytes()))
}

/// Everything needed to re-run an experiment and locate its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub created_unix: u64,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Data source description (synthetic spec or annotation path).
    pub data: serde_json::Value,
    pub codebook: Option<Vec<AuPattern>>,
    pub folds: Vec<Vec<String>>,
    pub fold_plan_hash: String,
    pub fixture_hashes: BTreeMap<String, String>,
    /// Output file name -> SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
    pub flags: Vec<String>,
}
