//! Toy bi-encoders: linear maps (optionally with one tanh hidden layer) over
//! hashed text features and visual feature vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::features::{SparseVec, TextFeaturizer};
use crate::linalg::{normalize_backward, normalize_in_place, Matrix};
use crate::{Error, Result};

/// Network input: hashed sparse text features or a dense visual vector.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Sparse(&'a SparseVec),
    Dense(&'a [f64]),
}

/// Stack of weight matrices (`in × out`) with tanh between consecutive layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStack {
    layers: Vec<Matrix>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct StackCache {
    /// Post-tanh activations of each hidden layer.
    hidden: Vec<Vec<f64>>,
}

impl LinearStack {
    /// Seeded Gaussian initialization with standard deviation `1/√fan_in`.
    pub fn init(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, 1.0 / (w[0] as f64).sqrt()).expect("positive std");
                let data = (0..w[0] * w[1]).map(|_| normal.sample(rng)).collect();
                Matrix::from_vec(w[0], w[1], data).expect("shape")
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() || layers.windows(2).any(|w| w[0].cols() != w[1].rows()) {
            return Err(Error::invalid("layer shapes do not chain"));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").cols()
    }

    pub fn zero_grads(&self) -> Vec<Matrix> {
        self.layers.iter().map(|l| Matrix::zeros(l.rows(), l.cols())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }

    fn first_layer(&self, input: Input<'_>) -> Result<Vec<f64>> {
        let w = &self.layers[0];
        let mut out = vec![0.0; w.cols()];
        match input {
            Input::Sparse(features) => {
                for &(idx, val) in features {
                    let idx = idx as usize;
                    if idx >= w.rows() {
                        return Err(Error::DimensionMismatch { expected: w.rows(), got: idx + 1 });
                    }
                    for (o, &wv) in out.iter_mut().zip(w.row(idx)) {
                        *o += val * wv;
                    }
                }
            }
            Input::Dense(x) => {
                if x.len() != w.rows() {
                    return Err(Error::DimensionMismatch { expected: w.rows(), got: x.len() });
                }
                for (p, &xv) in x.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (o, &wv) in out.iter_mut().zip(w.row(p)) {
                        *o += xv * wv;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&self, input: Input<'_>) -> Result<(Vec<f64>, StackCache)> {
        let mut h = self.first_layer(input)?;
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        for w in &self.layers[1..] {
            h.iter_mut().for_each(|x| *x = x.tanh());
            let mut next = vec![0.0; w.cols()];
            for (p, &a) in h.iter().enumerate() {
                for (o, &wv) in next.iter_mut().zip(w.row(p)) {
                    *o += a * wv;
                }
            }
            hidden.push(std::mem::replace(&mut h, next));
        }
        Ok((h, StackCache { hidden }))
    }

    /// Accumulates `d loss / d weights` into `grads` given `d loss / d output`.
    pub fn backward(&self, input: Input<'_>, cache: &StackCache, grad_out: &[f64], grads: &mut [Matrix]) {
        let mut delta = grad_out.to_vec();
        for l in (1..self.layers.len()).rev() {
            let a = &cache.hidden[l - 1];
            let g = &mut grads[l];
            for (p, &av) in a.iter().enumerate() {
                for (gv, &dv) in g.row_mut(p).iter_mut().zip(&delta) {
                    *gv += av * dv;
                }
            }
            let w = &self.layers[l];
            delta = (0..w.rows())
                .map(|p| {
                    let back: f64 = w.row(p).iter().zip(&delta).map(|(wv, dv)| wv * dv).sum();
                    back * (1.0 - a[p] * a[p])
                })
                .collect();
        }
        let g = &mut grads[0];
        match input {
            Input::Sparse(features) => {
                for &(idx, val) in features {
                    for (gv, &dv) in g.row_mut(idx as usize).iter_mut().zip(&delta) {
                        *gv += val * dv;
                    }
                }
            }
            Input::Dense(x) => {
                for (p, &xv) in x.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (gv, &dv) in g.row_mut(p).iter_mut().zip(&delta) {
                        *gv += xv * dv;
                    }
                }
            }
        }
    }
}

/// Unit-norm output of an encoder plus what backpropagation needs.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub unit: Vec<f64>,
    pub norm: f64,
    pub cache: StackCache,
}

fn encode(net: &LinearStack, input: Input<'_>) -> Result<Encoded> {
    let (mut out, cache) = net.forward(input)?;
    let norm = normalize_in_place(&mut out)?;
    Ok(Encoded { unit: out, norm, cache })
}

fn encode_backward(net: &LinearStack, input: Input<'_>, enc: &Encoded, grad_unit: &[f64], grads: &mut [Matrix]) {
    let grad_raw = normalize_backward(&enc.unit, enc.norm, grad_unit);
    net.backward(input, &enc.cache, &grad_raw, grads);
}

/// Text encoder: hashed n-gram counts → linear stack → L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTextEncoder {
    pub featurizer: TextFeaturizer,
    pub net: LinearStack,
}

impl ToyTextEncoder {
    pub fn features(&self, text: &str) -> SparseVec {
        self.featurizer.featurize(text)
    }

    pub fn encode_features(&self, features: &SparseVec) -> Result<Encoded> {
        encode(&self.net, Input::Sparse(features))
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.encode_features(&self.features(text))?.unit)
    }

    pub fn backward(&self, features: &SparseVec, enc: &Encoded, grad_unit: &[f64], grads: &mut [Matrix]) {
        encode_backward(&self.net, Input::Sparse(features), enc, grad_unit, grads);
    }
}

/// Visual encoder: dense visual features → linear stack → L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVisualEncoder {
    pub net: LinearStack,
}

impl ToyVisualEncoder {
    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Encoded> {
        encode(&self.net, Input::Dense(x))
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode(x)?.unit)
    }

    pub fn backward(&self, x: &[f64], enc: &Encoded, grad_unit: &[f64], grads: &mut [Matrix]) {
        encode_backward(&self.net, Input::Dense(x), enc, grad_unit, grads);
    }
}

/// Shape of a [`ToyModel`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub featurizer: TextFeaturizer,
    pub visual_dim: usize,
    pub embed_dim: usize,
    /// Width of the optional tanh hidden layer in both encoders.
    pub hidden: Option<usize>,
}

impl ModelConfig {
    pub fn new(visual_dim: usize, embed_dim: usize) -> Self {
        Self { featurizer: TextFeaturizer::default(), visual_dim, embed_dim, hidden: None }
    }

    fn dims(&self, input: usize) -> Vec<usize> {
        match self.hidden {
            Some(h) => vec![input, h, self.embed_dim],
            None => vec![input, self.embed_dim],
        }
    }
}

/// A text encoder and a visual encoder sharing one embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub text: ToyTextEncoder,
    pub visual: ToyVisualEncoder,
}

impl ToyModel {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.featurizer.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = LinearStack::init(&cfg.dims(cfg.featurizer.hash_dim), &mut rng)?;
        let visual = LinearStack::init(&cfg.dims(cfg.visual_dim), &mut rng)?;
        Ok(Self { text: ToyTextEncoder { featurizer: cfg.featurizer.clone(), net: text }, visual: ToyVisualEncoder { net: visual } })
    }

    pub fn config(&self) -> ModelConfig {
        let layers = self.text.net.layers();
        ModelConfig {
            featurizer: self.text.featurizer.clone(),
            visual_dim: self.visual.input_dim(),
            embed_dim: self.text.net.output_dim(),
            hidden: (layers.len() > 1).then(|| layers[0].cols()),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.text.net.output_dim()
    }

    /// All weight tensors, text encoder first.
    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.text.net.layers().iter().chain(self.visual.net.layers())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.text.net.layers_mut().iter_mut().chain(self.visual.net.layers_mut().iter_mut())
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads { text: self.text.net.zero_grads(), visual: self.visual.net.zero_grads() }
    }
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub text: Vec<Matrix>,
    pub visual: Vec<Matrix>,
}

impl ModelGrads {
    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.text.iter().chain(&self.visual)
    }
}
