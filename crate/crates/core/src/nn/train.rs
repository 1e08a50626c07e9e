use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Head, LayerParams, Mode, ModelState, NnError};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    BinaryCrossEntropy,
    CategoricalCrossEntropy,
}

impl Loss {
    /// The loss paired with a head.
    pub fn for_head(head: Head) -> Self {
        match head {
            Head::Sigmoid(_) => Loss::BinaryCrossEntropy,
            Head::Softmax(_) => Loss::CategoricalCrossEntropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Score at or above which a sigmoid unit counts as active.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { loss: Loss::BinaryCrossEntropy, learning_rate: 0.05, momentum: 0.9, batch_size: 32, epochs: 20, threshold: 0.5, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let err = |m: &str| Err(NnError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return err("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return err("batch size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return err("threshold must be in [0, 1]");
        }
        Ok(())
    }
}

/// Training targets: per-unit bits for a sigmoid head, class indices for a
/// softmax head.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Bits(Vec<Vec<f64>>),
    Classes(Vec<usize>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Bits(v) => v.len(),
            Labels::Classes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn targets(&self, head: Head) -> Result<Vec<Vec<f64>>, NnError> {
        match (self, head) {
            (Labels::Bits(v), Head::Sigmoid(k)) => {
                if let Some(bad) = v.iter().find(|t| t.len() != k) {
                    return Err(NnError::Labels(format!("bit vector of length {} for {k} units", bad.len())));
                }
                Ok(v.clone())
            }
            (Labels::Classes(v), Head::Softmax(k)) => v
                .iter()
                .map(|&c| {
                    if c >= k {
                        return Err(NnError::Labels(format!("class {c} out of range for {k} classes")));
                    }
                    let mut t = vec![0.0; k];
                    t[c] = 1.0;
                    Ok(t)
                })
                .collect(),
            (Labels::Bits(_), Head::Softmax(_)) => Err(NnError::Labels("softmax head needs class indices".into())),
            (Labels::Classes(_), Head::Sigmoid(_)) => Err(NnError::Labels("sigmoid head needs bit vectors".into())),
        }
    }
}

/// Mini-batch SGD with momentum (`v = m v - lr g`, `p += v`) on the mean
/// per-sample loss. Sample order is reshuffled every epoch. Returns the
/// trained state and the mean training loss of each epoch.
pub fn train(mut state: ModelState, inputs: &[Vec<f64>], labels: &Labels, cfg: &TrainConfig) -> Result<(ModelState, Vec<f64>), NnError> {
    cfg.validate()?;
    let head = state.spec().head();
    if cfg.loss != Loss::for_head(head) {
        return Err(NnError::Config(format!("{:?} does not match a {head:?} head", cfg.loss)));
    }
    if inputs.len() != labels.len() {
        return Err(NnError::Labels(format!("{} inputs but {} labels", inputs.len(), labels.len())));
    }
    if inputs.is_empty() {
        return Err(NnError::Labels("no training samples".into()));
    }
    let targets = labels.targets(head)?;
    let mut velocity: Vec<LayerParams> =
        state.params.iter().map(|p| LayerParams { weights: vec![0.0; p.weights.len()], bias: vec![0.0; p.bias.len()] }).collect();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut shuffler = Stream::derived(cfg.seed, "shuffle");
    let mut dropout = Stream::derived(cfg.seed, "dropout");
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        shuffler.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Option<LayerParams>> = vec![None; state.params.len()];
            let mut batch_loss = 0.0;
            for &i in chunk {
                let fwd = state.forward(&inputs[i], Mode::Train(&mut dropout))?;
                batch_loss += state.loss(&fwd.output, &targets[i]);
                let grads = state.backward(&fwd, &targets[i])?;
                for (slot, g) in acc.iter_mut().zip(grads.layers) {
                    let Some(g) = g else { continue };
                    match slot {
                        None => *slot = Some(g),
                        Some(a) => {
                            a.weights.iter_mut().zip(&g.weights).for_each(|(a, g)| *a += g);
                            a.bias.iter_mut().zip(&g.bias).for_each(|(a, g)| *a += g);
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch });
            }
            epoch_loss += batch_loss;
            let step = cfg.learning_rate / chunk.len() as f64;
            for ((p, v), g) in state.params.iter_mut().zip(&mut velocity).zip(acc) {
                let Some(g) = g else { continue };
                for ((p, v), g) in p.weights.iter_mut().zip(&mut v.weights).zip(&g.weights) {
                    *v = cfg.momentum * *v - step * g;
                    *p += *v;
                }
                for ((p, v), g) in p.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
                    *v = cfg.momentum * *v - step * g;
                    *p += *v;
                }
            }
            let finite = state.params.iter().all(|p| p.weights.iter().chain(&p.bias).all(|v| v.is_finite()));
            if !finite {
                return Err(NnError::NonFiniteLoss { epoch, batch });
            }
        }
        history.push(epoch_loss / inputs.len() as f64);
    }
    Ok((state, history))
}

/// Eval-mode outputs for many samples, in input order.
pub fn predict(state: &ModelState, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NnError> {
    inputs.par_iter().map(|x| state.infer(x)).collect()
}
