//! Small feed-forward network with dense and 1-D convolution layers,
//! manual backpropagation of the MSE loss and the Adam optimizer.
//!
//! Activations are batch-major `Array2<f64>` of shape `(batch, features)`.
//! Sequence tensors are stored channel-major: feature `c · len + i` is
//! position `i` of channel `c`.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Dense,
    Conv1D,
    ReLU,
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output width (Dense) or output channels (Conv1D).
    #[serde(default)]
    pub units: usize,
    #[serde(default)]
    pub kernel: usize,
    #[serde(default)]
    pub padding: Padding,
}

impl LayerSpec {
    pub fn dense(units: usize) -> Self {
        Self {
            kind: LayerKind::Dense,
            units,
            kernel: 0,
            padding: Padding::Same,
        }
    }

    pub fn conv1d(channels: usize, kernel: usize) -> Self {
        Self {
            kind: LayerKind::Conv1D,
            units: channels,
            kernel,
            padding: Padding::Same,
        }
    }

    pub fn relu() -> Self {
        Self {
            kind: LayerKind::ReLU,
            units: 0,
            kernel: 0,
            padding: Padding::Same,
        }
    }

    pub fn flatten() -> Self {
        Self {
            kind: LayerKind::Flatten,
            units: 0,
            kernel: 0,
            padding: Padding::Same,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Seq { channels: usize, len: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Seq { channels, len } => channels * len,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        /// `outputs × inputs`
        weight: Array2<f64>,
        bias: Array1<f64>,
    },
    Conv1D {
        len: usize,
        kernel: usize,
        /// `out_channels × (in_channels · kernel)`
        weight: Array2<f64>,
        bias: Array1<f64>,
    },
    ReLU,
    Flatten,
}

impl Layer {
    fn params(&self) -> Option<(&Array2<f64>, &Array1<f64>)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv1D { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Array2<f64>, &mut Array1<f64>)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv1D { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }
}

fn shape_err(layer: usize, expected: impl Into<String>, got: impl std::fmt::Debug) -> Error {
    Error::ShapeMismatch {
        layer,
        expected: expected.into(),
        got: format!("{got:?}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: Shape,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

/// Activations recorded by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input of every dense and ReLU layer; `inputs[i]` feeds layer `i`.
    inputs: Vec<Option<Array2<f64>>>,
    /// im2col matrices of the convolution layers.
    cols: Vec<Option<Array2<f64>>>,
    output: Array2<f64>,
}

impl Cache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Gradient of the loss for every parameterized layer, `None` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<(Array2<f64>, Array1<f64>)>>,
}

impl Gradients {
    /// Zero gradients shaped like the parameters of `net`.
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    l.params()
                        .map(|(w, b)| (Array2::zeros(w.dim()), Array1::zeros(b.len())))
                })
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|(w, b)| [w.as_slice().unwrap(), b.as_slice().unwrap()])
            .collect()
    }
}

fn conv_padding(kernel: usize) -> usize {
    (kernel - 1) / 2
}

fn im2col(x: ArrayView2<f64>, channels: usize, len: usize, kernel: usize) -> Array2<f64> {
    let batch = x.nrows();
    let pad = conv_padding(kernel) as isize;
    let mut cols = Array2::<f64>::zeros((batch * len, channels * kernel));
    for b in 0..batch {
        let row = x.row(b);
        for c in 0..channels {
            for j in 0..kernel {
                for i in 0..len {
                    let src = i as isize + j as isize - pad;
                    if src >= 0 && (src as usize) < len {
                        cols[[b * len + i, c * kernel + j]] = row[c * len + src as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, batch: usize, channels: usize, len: usize, kernel: usize) -> Array2<f64> {
    let pad = conv_padding(kernel) as isize;
    let mut dx = Array2::<f64>::zeros((batch, channels * len));
    for b in 0..batch {
        for i in 0..len {
            let src_row = dcols.row(b * len + i);
            for c in 0..channels {
                for j in 0..kernel {
                    let dst = i as isize + j as isize - pad;
                    if dst >= 0 && (dst as usize) < len {
                        dx[[b, c * len + dst as usize]] += src_row[c * kernel + j];
                    }
                }
            }
        }
    }
    dx
}

impl Network {
    /// Builds a network with He-uniform weights and zero biases.
    pub fn new(input: Shape, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        let mut shapes = Vec::with_capacity(specs.len() + 1);
        shapes.push(shape);
        if shape.size() == 0 {
            return Err(shape_err(0, "non-empty input", shape));
        }
        for (i, spec) in specs.iter().enumerate() {
            let (layer, out) = match (spec.kind, shape) {
                (LayerKind::Dense, Shape::Flat(inputs)) => {
                    if spec.units == 0 {
                        return Err(shape_err(i, "dense width >= 1", spec.units));
                    }
                    let limit = (6.0 / inputs as f64).sqrt();
                    let weight = Array2::from_shape_fn((spec.units, inputs), |_| rng.random_range(-limit..limit));
                    (
                        Layer::Dense {
                            weight,
                            bias: Array1::zeros(spec.units),
                        },
                        Shape::Flat(spec.units),
                    )
                }
                (LayerKind::Conv1D, Shape::Seq { channels, len }) => {
                    if spec.units == 0 || spec.kernel == 0 {
                        return Err(shape_err(i, "conv channels and kernel >= 1", spec));
                    }
                    let fan_in = channels * spec.kernel;
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let weight = Array2::from_shape_fn((spec.units, fan_in), |_| rng.random_range(-limit..limit));
                    (
                        Layer::Conv1D {
                            len,
                            kernel: spec.kernel,
                            weight,
                            bias: Array1::zeros(spec.units),
                        },
                        Shape::Seq {
                            channels: spec.units,
                            len,
                        },
                    )
                }
                (LayerKind::ReLU, s) => (Layer::ReLU, s),
                (LayerKind::Flatten, s) => (Layer::Flatten, Shape::Flat(s.size())),
                (LayerKind::Dense, s) => return Err(shape_err(i, "flat input for Dense", s)),
                (LayerKind::Conv1D, s) => return Err(shape_err(i, "sequence input for Conv1D", s)),
            };
            layers.push(layer);
            shapes.push(out);
            shape = out;
        }
        Ok(Self {
            input,
            specs: specs.to_vec(),
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_size(&self) -> usize {
        self.shapes.last().unwrap().size()
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn count(&self, kind: LayerKind) -> usize {
        self.specs.iter().filter(|s| s.kind == kind).count()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .flat_map(|(w, b)| [w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()])
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|(w, b)| [w.as_slice().unwrap(), b.as_slice().unwrap()])
            .collect()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input.size() {
            return Err(shape_err(0, format!("{} input features", self.input.size()), x.ncols()));
        }
        Ok(())
    }

    /// Evaluates one layer; returns the output and, for convolutions, the
    /// im2col matrix.
    fn apply(&self, i: usize, x: &Array2<f64>) -> (Array2<f64>, Option<Array2<f64>>) {
        match &self.layers[i] {
            Layer::Dense { weight, bias } => (x.dot(&weight.t()) + bias, None),
            Layer::Conv1D {
                len,
                kernel,
                weight,
                bias,
            } => {
                let channels = weight.ncols() / kernel;
                let batch = x.nrows();
                let cols = im2col(x.view(), channels, *len, *kernel);
                let y = cols.dot(&weight.t());
                let out_ch = weight.nrows();
                let mut out = Array2::<f64>::zeros((batch, out_ch * len));
                for b in 0..batch {
                    let mut row = out.row_mut(b);
                    for p in 0..*len {
                        let src = y.row(b * len + p);
                        for o in 0..out_ch {
                            row[o * len + p] = src[o] + bias[o];
                        }
                    }
                }
                (out, Some(cols))
            }
            Layer::ReLU => (x.mapv(|v| v.max(0.0)), None),
            Layer::Flatten => (x.clone(), None),
        }
    }

    /// Runs the network on a batch and keeps what the backward pass needs.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Cache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cols = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Flatten) {
                inputs.push(None);
                cols.push(None);
                continue;
            }
            let (next, c) = self.apply(i, &cur);
            // convolutions only need their im2col matrix
            inputs.push(c.is_none().then_some(cur));
            cols.push(c);
            cur = next;
        }
        Ok((
            cur.clone(),
            Cache {
                inputs,
                cols,
                output: cur,
            },
        ))
    }

    /// Runs the network on a batch without recording activations.
    pub fn infer(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            cur = self.apply(i, &cur).0;
        }
        Ok(cur)
    }

    /// Gradients of `mean((y - target)²)` over every output element.
    pub fn backward(&self, cache: &Cache, target: &Array2<f64>) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, target, &mut grads)?;
        Ok(grads)
    }

    /// [`Network::backward`] writing into an existing gradient buffer.
    pub fn backward_into(&self, cache: &Cache, target: &Array2<f64>, grads: &mut Gradients) -> Result<()> {
        let y = &cache.output;
        if y.dim() != target.dim() || cache.inputs.len() != self.layers.len() {
            return Err(shape_err(
                self.layers.len(),
                format!("target of shape {:?}", y.dim()),
                target.dim(),
            ));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(shape_err(
                self.layers.len(),
                "gradient buffer for this network",
                grads.layers.len(),
            ));
        }
        let n = y.len() as f64;
        let mut delta = (y - target) * (2.0 / n);
        let missing = |i: usize| shape_err(i, "cached activation", "none");
        for i in (0..self.layers.len()).rev() {
            match (&self.layers[i], grads.layers[i].as_mut()) {
                (Layer::Dense { weight, .. }, Some((dw, db))) => {
                    let x = cache.inputs[i].as_ref().ok_or_else(|| missing(i))?;
                    general_mat_mul(1.0, &delta.t(), x, 0.0, dw);
                    db.assign(&delta.sum_axis(Axis(0)));
                    if i > 0 {
                        delta = delta.dot(weight);
                    }
                }
                (
                    Layer::Conv1D {
                        len, kernel, weight, ..
                    },
                    Some((dw, db)),
                ) => {
                    let len = *len;
                    let batch = delta.nrows();
                    let out_ch = weight.nrows();
                    let channels = weight.ncols() / kernel;
                    let dy = Array2::from_shape_fn((batch * len, out_ch), |(r, o)| delta[[r / len, o * len + r % len]]);
                    let cols = cache.cols[i].as_ref().ok_or_else(|| missing(i))?;
                    general_mat_mul(1.0, &dy.t(), cols, 0.0, dw);
                    db.assign(&dy.sum_axis(Axis(0)));
                    if i > 0 {
                        let dcols = dy.dot(weight);
                        delta = col2im(&dcols, batch, channels, len, *kernel);
                    }
                }
                (Layer::ReLU, _) => {
                    let x = cache.inputs[i].as_ref().ok_or_else(|| missing(i))?;
                    delta.zip_mut_with(x, |d, &xi| {
                        if xi <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
                (Layer::Flatten, _) => {}
                _ => return Err(shape_err(i, "gradient buffer for this network", "mismatch")),
            }
        }
        Ok(())
    }

    /// Writes `<stem>.json` (topology) and `<stem>.bin` (little-endian f64
    /// parameters in layer order, weights row-major then biases).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (json_path, bin_path) = model_paths(stem);
        let topo = Topology {
            format: "uegroup-network".into(),
            version: MODEL_FORMAT_VERSION,
            input: self.input,
            layers: self.specs.clone(),
            parameter_count: self.parameter_count(),
        };
        std::fs::write(&json_path, serde_json::to_string_pretty(&topo)?).map_err(|e| Error::io(&json_path, e))?;
        let mut bytes = Vec::with_capacity(8 * topo.parameter_count);
        for s in self.param_slices() {
            for v in s {
                bytes.write_all(&v.to_le_bytes()).unwrap();
            }
        }
        std::fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (json_path, bin_path) = model_paths(stem);
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let topo: Topology = serde_json::from_str(&text)?;
        if topo.version != MODEL_FORMAT_VERSION {
            return Err(Error::Malformed {
                path: json_path,
                reason: format!("unsupported model version {}", topo.version),
            });
        }
        let mut net = Network::new(topo.input, &topo.layers, 0)?;
        let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        if bytes.len() != 8 * net.parameter_count() {
            return Err(Error::Malformed {
                path: bin_path,
                reason: format!("{} bytes for {} parameters", bytes.len(), net.parameter_count()),
            });
        }
        let mut chunks = bytes.chunks_exact(8);
        for s in net.param_slices_mut() {
            for v in s.iter_mut() {
                *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
            }
        }
        Ok(net)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Topology {
    format: String,
    version: u32,
    input: Shape,
    layers: Vec<LayerSpec>,
    parameter_count: usize,
}

fn model_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Mean squared error over every element.
pub fn mse(y: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let n = y.len().max(1) as f64;
    y.iter().zip(target.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[&[f64]]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn for_network(config: AdamConfig, net: &Network) -> Self {
        Self::new(config, &net.param_slices())
    }
}

/// One bias-corrected Adam update. Nothing is modified when a gradient is
/// non-finite or shapes disagree.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::WrongCount {
            what: "parameter tensors",
            expected: state.first_moment.len(),
            got: grads.len(),
        });
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[k].len() {
            return Err(Error::WrongCount {
                what: "gradient entries",
                expected: p.len(),
                got: g.len(),
            });
        }
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("gradient"));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let step = lr / (1.0 - beta1.powi(t));
    let inv_c2 = 1.0 / (1.0 - beta2.powi(t));
    let moments = state.first_moment.iter_mut().zip(state.second_moment.iter_mut());
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(moments) {
        for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= step * *m / ((*v * inv_c2).sqrt() + epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Loss {
    #[default]
    #[serde(rename = "MSE")]
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: Loss,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 200,
            loss: Loss::Mse,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Sample-weighted mean of the mini-batch losses seen during the epoch.
    pub loss: f64,
}

/// Mini-batch Adam training on `(inputs, targets)` rows, reshuffled every
/// epoch from `cfg.seed`.
pub fn train(
    net: &mut Network,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    if targets.nrows() != n || targets.ncols() != net.output_size() {
        return Err(shape_err(
            net.layers.len(),
            format!("{n} × {} targets", net.output_size()),
            targets.dim(),
        ));
    }
    if targets.iter().any(|v| !v.is_finite()) || inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("batch_size and epochs must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::for_network(cfg.adam, net);
    let mut grads = Gradients::zeros_like(net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = inputs.select(Axis(0), batch);
            let t = targets.select(Axis(0), batch);
            let (y, cache) = net.forward(&x)?;
            total += mse(&y, &t) * batch.len() as f64;
            net.backward_into(&cache, &t, &mut grads)?;
            let grad_slices = grads.slices();
            adam_step(&mut adam, &mut net.param_slices_mut(), &grad_slices)?;
        }
        curve.push(EpochLoss {
            epoch,
            loss: total / n as f64,
        });
    }
    Ok(curve)
}
