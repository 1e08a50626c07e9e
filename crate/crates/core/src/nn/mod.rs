//! Small CNN engine: layer specs and presets, seeded initialisation, explicit
//! per-sample forward/backward passes, SGD with momentum, freeze-and-split
//! and binary checkpoints.

mod checkpoint;
mod layers;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Stream;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use train::{predict, train, Labels, Loss, TrainConfig};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("input has {found} values, model expects {expected}")]
    Shape { expected: usize, found: usize },
    #[error("backward needs a train-mode forward cache")]
    MissingCache,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("labels do not match the head: {0}")]
    Labels(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Layer descriptors. Convolutions are 3x3, stride 1, same padding; pools are
/// 2x2 with stride 2. Heads own a dense layer followed by their activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { out_channels: usize },
    MaxPool2,
    Relu,
    Dropout { rate: f64 },
    Flatten,
    Dense { units: usize },
    SigmoidHead { units: usize },
    SoftmaxHead { units: usize },
}

impl LayerSpec {
    pub fn is_head(&self) -> bool {
        matches!(self, LayerSpec::SigmoidHead { .. } | LayerSpec::SoftmaxHead { .. })
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. }) || self.is_head()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Sigmoid(usize),
    Softmax(usize),
}

impl Head {
    fn layer(self) -> LayerSpec {
        match self {
            Head::Sigmoid(units) => LayerSpec::SigmoidHead { units },
            Head::Softmax(units) => LayerSpec::SoftmaxHead { units },
        }
    }
}

/// `[channels, height, width]`; flat vectors are `[n, 1, 1]`.
pub type Shape = [usize; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(input: Shape, layers: Vec<LayerSpec>, seed: u64) -> Result<Self, NnError> {
        let spec = Self { input, layers, seed };
        spec.shapes()?;
        Ok(spec)
    }

    /// Input shape of every layer followed by the output shape; validates
    /// chaining, head placement and dropout rates.
    pub fn shapes(&self) -> Result<Vec<Shape>, NnError> {
        let err = |m: String| Err(NnError::Spec(m));
        if self.input.contains(&0) {
            return err("input dimensions must be positive".into());
        }
        match self.layers.last() {
            Some(l) if l.is_head() => {}
            _ => return err("last layer must be a head".into()),
        }
        if self.layers.iter().filter(|l| l.is_head()).count() != 1 {
            return err("exactly one head is allowed".into());
        }
        let mut shapes = vec![self.input];
        let mut s = self.input;
        for (i, l) in self.layers.iter().enumerate() {
            let flat = s[1] == 1 && s[2] == 1;
            s = match *l {
                LayerSpec::Conv2d { out_channels } => {
                    if flat {
                        return err(format!("layer {i}: convolution after flatten"));
                    }
                    if out_channels == 0 {
                        return err(format!("layer {i}: zero channels"));
                    }
                    [out_channels, s[1], s[2]]
                }
                LayerSpec::MaxPool2 => {
                    if s[1] < 2 || s[2] < 2 {
                        return err(format!("layer {i}: {}x{} too small to pool", s[1], s[2]));
                    }
                    [s[0], s[1] / 2, s[2] / 2]
                }
                LayerSpec::Relu => s,
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return err(format!("layer {i}: dropout rate {rate} outside [0, 1)"));
                    }
                    s
                }
                LayerSpec::Flatten => [s.iter().product(), 1, 1],
                LayerSpec::Dense { units } | LayerSpec::SigmoidHead { units } | LayerSpec::SoftmaxHead { units } => {
                    if !flat {
                        return err(format!("layer {i}: dense input must be flattened"));
                    }
                    if units == 0 {
                        return err(format!("layer {i}: zero units"));
                    }
                    [units, 1, 1]
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn head(&self) -> Head {
        match self.layers.last() {
            Some(LayerSpec::SigmoidHead { units }) => Head::Sigmoid(*units),
            Some(LayerSpec::SoftmaxHead { units }) => Head::Softmax(*units),
            _ => unreachable!("validated spec ends with a head"),
        }
    }

    /// Same body with a different head.
    pub fn with_head(&self, head: Head) -> Self {
        let mut s = self.clone();
        *s.layers.last_mut().expect("non-empty") = head.layer();
        s
    }

    /// `(weights, bias)` lengths per layer (zero for parameter-free layers).
    pub fn param_shapes(&self) -> Result<Vec<(usize, usize)>, NnError> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let inp = shapes[i];
                match *l {
                    LayerSpec::Conv2d { out_channels } => (out_channels * inp[0] * 9, out_channels),
                    LayerSpec::Dense { units } | LayerSpec::SigmoidHead { units } | LayerSpec::SoftmaxHead { units } => {
                        (units * inp[0], units)
                    }
                    _ => (0, 0),
                }
            })
            .collect())
    }

    pub fn param_count(&self) -> Result<usize, NnError> {
        Ok(self.param_shapes()?.iter().map(|(w, b)| w + b).sum())
    }
}

/// Conv 8/16, pool, conv 16/20, pool, three dense layers (4096, 4096, 512
/// times `scale`, at least 1) with dropout 0.4 after the first two.
pub fn preset_network2(input: Shape, head: Head, scale: f64, seed: u64) -> Result<ModelSpec, NnError> {
    if input[1] < 4 || input[2] < 4 {
        return Err(NnError::Spec(format!("input {}x{} too small for two 2x2 pools", input[1], input[2])));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(NnError::Spec(format!("width multiplier {scale} must be positive")));
    }
    let width = |n: f64| ((n * scale).round() as usize).max(1);
    use LayerSpec::*;
    ModelSpec::new(
        input,
        vec![
            Conv2d { out_channels: 8 },
            Relu,
            Conv2d { out_channels: 16 },
            Relu,
            MaxPool2,
            Conv2d { out_channels: 16 },
            Relu,
            Conv2d { out_channels: 20 },
            Relu,
            MaxPool2,
            Flatten,
            Dense { units: width(4096.0) },
            Relu,
            Dropout { rate: 0.4 },
            Dense { units: width(4096.0) },
            Relu,
            Dropout { rate: 0.4 },
            Dense { units: width(512.0) },
            Relu,
            head.layer(),
        ],
        seed,
    )
}

/// Default width multiplier for the desk-scale Network-2 preset.
pub const DESK_SCALE: f64 = 1.0 / 16.0;

/// Two conv/pool stages and one hidden dense layer.
pub fn preset_compact(input: Shape, head: Head, seed: u64) -> Result<ModelSpec, NnError> {
    if input[1] < 4 || input[2] < 4 {
        return Err(NnError::Spec(format!("input {}x{} too small for two 2x2 pools", input[1], input[2])));
    }
    use LayerSpec::*;
    ModelSpec::new(
        input,
        vec![
            Conv2d { out_channels: 8 },
            Relu,
            MaxPool2,
            Conv2d { out_channels: 16 },
            Relu,
            MaxPool2,
            Flatten,
            Dense { units: 64 },
            Relu,
            head.layer(),
        ],
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Compact,
    Network2,
}

impl Preset {
    pub fn build(self, input: Shape, head: Head, scale: f64, seed: u64) -> Result<ModelSpec, NnError> {
        match self {
            Preset::Compact => preset_compact(input, head, seed),
            Preset::Network2 => preset_network2(input, head, scale, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    spec: ModelSpec,
    shapes: Vec<Shape>,
    pub(crate) params: Vec<LayerParams>,
    pub(crate) trainable: Vec<bool>,
}

impl ModelState {
    /// Glorot-uniform weights (bound `sqrt(6 / (fan_in + fan_out))`), zero
    /// biases; each layer draws from its own stream derived from the model seed.
    pub fn init(spec: ModelSpec) -> Result<Self, NnError> {
        let shapes = spec.shapes()?;
        let params = spec
            .param_shapes()?
            .into_iter()
            .enumerate()
            .map(|(i, (nw, nb))| {
                if nw == 0 {
                    return LayerParams { weights: Vec::new(), bias: Vec::new() };
                }
                let (fan_in, fan_out) = match spec.layers[i] {
                    LayerSpec::Conv2d { out_channels } => (shapes[i][0] * 9, out_channels * 9),
                    _ => (shapes[i][0], nb),
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = Stream::derived(spec.seed, &format!("layer{i}"));
                LayerParams { weights: (0..nw).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect(), bias: vec![0.0; nb] }
            })
            .collect();
        let trainable = spec.layers.iter().map(LayerSpec::has_params).collect();
        Ok(Self { spec, shapes, params, trainable })
    }

    pub(crate) fn from_parts(spec: ModelSpec, params: Vec<LayerParams>, trainable: Vec<bool>) -> Result<Self, NnError> {
        let shapes = spec.shapes()?;
        let expected = spec.param_shapes()?;
        if params.len() != expected.len() || trainable.len() != expected.len() {
            return Err(NnError::Spec("layer count mismatch".into()));
        }
        for (i, (p, (nw, nb))) in params.iter().zip(&expected).enumerate() {
            if p.weights.len() != *nw || p.bias.len() != *nb {
                return Err(NnError::Spec(format!("layer {i}: parameter shape mismatch")));
            }
        }
        Ok(Self { spec, shapes, params, trainable })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    pub fn set_trainable(&mut self, layer: usize, on: bool) {
        self.trainable[layer] = on && self.spec.layers[layer].has_params();
    }

    /// Forward pass on one flattened sample. Train mode draws dropout masks
    /// from `rng` and keeps the activations needed by [`ModelState::backward`].
    pub fn forward(&self, x: &[f64], mode: Mode<'_>) -> Result<Forward, NnError> {
        if x.len() != self.spec.input_len() {
            return Err(NnError::Shape { expected: self.spec.input_len(), found: x.len() });
        }
        let (train, mut rng) = match mode {
            Mode::Eval => (false, None),
            Mode::Train(r) => (true, Some(r)),
        };
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut aux: Vec<Aux> = Vec::with_capacity(self.spec.layers.len());
        let mut cur = x.to_vec();
        for (i, l) in self.spec.layers.iter().enumerate() {
            let [c, h, w] = self.shapes[i];
            let p = &self.params[i];
            let (next, a) = match *l {
                LayerSpec::Conv2d { .. } => (layers::conv3x3_forward(&cur, c, h, w, &p.weights, &p.bias), Aux::None),
                LayerSpec::MaxPool2 => {
                    let (o, arg) = layers::maxpool2_forward(&cur, c, h, w);
                    (o, Aux::Argmax(arg))
                }
                LayerSpec::Relu => (cur.iter().map(|v| v.max(0.0)).collect(), Aux::None),
                LayerSpec::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) if rate > 0.0 => {
                        let keep = 1.0 / (1.0 - rate);
                        let mask: Vec<f64> = (0..cur.len()).map(|_| if r.uniform() >= rate { keep } else { 0.0 }).collect();
                        (cur.iter().zip(&mask).map(|(v, m)| v * m).collect(), Aux::Mask(mask))
                    }
                    _ => (cur.clone(), Aux::None),
                },
                LayerSpec::Flatten => (cur.clone(), Aux::None),
                LayerSpec::Dense { .. } => (layers::dense_forward(&cur, &p.weights, &p.bias), Aux::None),
                LayerSpec::SigmoidHead { .. } => {
                    let z = layers::dense_forward(&cur, &p.weights, &p.bias);
                    (z.into_iter().map(layers::sigmoid).collect(), Aux::None)
                }
                LayerSpec::SoftmaxHead { .. } => (layers::softmax(&layers::dense_forward(&cur, &p.weights, &p.bias)), Aux::None),
            };
            if train {
                acts.push(std::mem::replace(&mut cur, next));
                aux.push(a);
            } else {
                cur = next;
            }
        }
        let cache = train.then_some(Cache { acts, aux });
        Ok(Forward { output: cur, cache })
    }

    /// Per-sample loss of a forward output against a target vector (bits
    /// for a sigmoid head, a distribution for a softmax head).
    pub fn loss(&self, output: &[f64], target: &[f64]) -> f64 {
        match self.spec.head() {
            Head::Sigmoid(_) => layers::bce(output, target),
            Head::Softmax(_) => layers::cross_entropy(output, target),
        }
    }

    /// Gradients of [`ModelState::loss`] for every trainable layer; frozen
    /// and parameter-free layers get `None`.
    pub fn backward(&self, fwd: &Forward, target: &[f64]) -> Result<Gradients, NnError> {
        let cache = fwd.cache.as_ref().ok_or(NnError::MissingCache)?;
        if target.len() != fwd.output.len() {
            return Err(NnError::Labels(format!("target has {} values, head has {}", target.len(), fwd.output.len())));
        }
        let n = self.spec.layers.len();
        let mut grads: Vec<Option<LayerParams>> = vec![None; n];
        // Both heads pair with their canonical loss, so d loss / d logit is
        // p - y, divided by the unit count for the unit-averaged sigmoid loss.
        let scale = match self.spec.head() {
            Head::Sigmoid(units) => 1.0 / units as f64,
            Head::Softmax(_) => 1.0,
        };
        let mut g: Vec<f64> = fwd.output.iter().zip(target).map(|(p, y)| (p - y) * scale).collect();
        // Layers below the lowest trainable one need no input gradient.
        let lowest = self.trainable.iter().position(|&t| t).unwrap_or(n);
        for i in (lowest..n).rev() {
            let [c, h, w] = self.shapes[i];
            let x = &cache.acts[i];
            let p = &self.params[i];
            let need_dx = i > lowest;
            let mut slot = self.trainable[i].then(|| LayerParams { weights: vec![0.0; p.weights.len()], bias: vec![0.0; p.bias.len()] });
            let dw = slot.as_mut().map(|s| (s.weights.as_mut_slice(), s.bias.as_mut_slice()));
            g = match self.spec.layers[i] {
                LayerSpec::Conv2d { .. } => layers::conv3x3_backward(x, &g, c, h, w, &p.weights, dw, need_dx),
                LayerSpec::Dense { .. } | LayerSpec::SigmoidHead { .. } | LayerSpec::SoftmaxHead { .. } => {
                    layers::dense_backward(x, &g, &p.weights, dw, need_dx)
                }
                LayerSpec::MaxPool2 => {
                    let Aux::Argmax(arg) = &cache.aux[i] else { unreachable!("pool cache") };
                    let mut dx = vec![0.0; x.len()];
                    for (gi, &a) in g.iter().zip(arg) {
                        dx[a] += gi;
                    }
                    dx
                }
                LayerSpec::Relu => g.iter().zip(x).map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 }).collect(),
                LayerSpec::Dropout { .. } => match &cache.aux[i] {
                    Aux::Mask(m) => g.iter().zip(m).map(|(gi, mi)| gi * mi).collect(),
                    _ => g,
                },
                LayerSpec::Flatten => g,
            };
            grads[i] = slot;
        }
        Ok(Gradients { layers: grads })
    }

    /// Eval-mode output for one sample.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward(x, Mode::Eval)?.output)
    }
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut Stream),
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Argmax(Vec<usize>),
    Mask(Vec<f64>),
}

/// Activations kept by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Vec<f64>,
    pub cache: Option<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `None` for frozen or parameter-free layers.
    pub layers: Vec<Option<LayerParams>>,
}

/// Hidden width and output units of the head attached by [`freeze_and_split`].
pub const SPLIT_HIDDEN: usize = 400;
pub const SPLIT_OUTPUTS: usize = 12;

/// Keeps the source's convolutional stage (through the last conv/pool layer
/// and any activation right after it) frozen, then appends flatten,
/// `dense(hidden)`, relu and a fresh `sigmoid(outputs)` head.
pub fn freeze_and_split(source: &ModelState, hidden: usize, outputs: usize, seed: u64) -> Result<ModelState, NnError> {
    let layers = &source.spec.layers;
    let last_conv = layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Conv2d { .. } | LayerSpec::MaxPool2))
        .ok_or_else(|| NnError::Spec("model has no convolutional stage to reuse".into()))?;
    let mut cut = last_conv + 1;
    while matches!(layers.get(cut), Some(LayerSpec::Relu)) {
        cut += 1;
    }
    let mut new_layers = layers[..cut].to_vec();
    new_layers.extend([LayerSpec::Flatten, LayerSpec::Dense { units: hidden }, LayerSpec::Relu, LayerSpec::SigmoidHead { units: outputs }]);
    let spec = ModelSpec::new(source.spec.input, new_layers, seed)?;
    let mut state = ModelState::init(spec)?;
    for i in 0..cut {
        state.params[i] = source.params[i].clone();
        state.trainable[i] = false;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(head: Head) -> ModelSpec {
        use LayerSpec::*;
        ModelSpec::new([1, 8, 8], vec![Conv2d { out_channels: 2 }, Relu, MaxPool2, Flatten, Dense { units: 4 }, Relu, head.layer()], 3)
            .unwrap()
    }

    #[test]
    fn network2_widths() {
        let full = preset_network2([1, 32, 32], Head::Sigmoid(12), 1.0, 0).unwrap();
        let units: Vec<usize> = full
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { units } => Some(*units),
                _ => None,
            })
            .collect();
        assert_eq!(units, vec![4096, 4096, 512]);
        let desk = preset_network2([1, 32, 32], Head::Sigmoid(12), DESK_SCALE, 0).unwrap();
        assert_eq!(desk.layers[11], LayerSpec::Dense { units: 256 });
        assert_eq!(desk.layers[14], LayerSpec::Dense { units: 256 });
        assert_eq!(desk.layers[17], LayerSpec::Dense { units: 32 });
        assert!(preset_network2([1, 3, 32], Head::Sigmoid(12), 1.0, 0).is_err());
    }

    #[test]
    fn spec_validation() {
        use LayerSpec::*;
        assert!(ModelSpec::new([1, 4, 4], vec![Flatten, Dense { units: 2 }], 0).is_err());
        assert!(ModelSpec::new([1, 4, 4], vec![Dense { units: 2 }, SigmoidHead { units: 1 }], 0).is_err());
        assert!(ModelSpec::new([1, 4, 4], vec![Flatten, Dropout { rate: 1.0 }, SigmoidHead { units: 1 }], 0).is_err());
        assert!(ModelSpec::new([1, 4, 4], vec![Flatten, SigmoidHead { units: 1 }, SoftmaxHead { units: 2 }], 0).is_err());
    }

    #[test]
    fn zero_weights_give_half() {
        let mut st = ModelState::init(tiny(Head::Sigmoid(3))).unwrap();
        for p in st.params_mut() {
            p.weights.fill(0.0);
        }
        let out = st.infer(&[0.3; 64]).unwrap();
        assert_eq!(out, vec![0.5; 3]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let st = ModelState::init(tiny(Head::Softmax(5))).unwrap();
        let mut r = Stream::new(1);
        let x: Vec<f64> = (0..64).map(|_| r.uniform()).collect();
        let out = st.infer(&x).unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backward_without_cache_errors() {
        let st = ModelState::init(tiny(Head::Sigmoid(1))).unwrap();
        let f = st.forward(&[0.0; 64], Mode::Eval).unwrap();
        assert!(matches!(st.backward(&f, &[1.0]), Err(NnError::MissingCache)));
    }

    #[test]
    fn split_head_shape() {
        let src = ModelState::init(tiny(Head::Softmax(7))).unwrap();
        let split = freeze_and_split(&src, SPLIT_HIDDEN, SPLIT_OUTPUTS, 9).unwrap();
        // conv, relu, pool kept; flat = 2 * 4 * 4
        assert_eq!(&split.spec().layers[..3], &src.spec().layers[..3]);
        assert_eq!(split.trainable()[..3], [false, false, false]);
        let head: usize = split.spec().param_shapes().unwrap()[3..].iter().map(|(w, b)| w + b).sum();
        assert_eq!(head, (32 + 1) * 400 + 401 * 12);
    }
}
