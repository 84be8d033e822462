use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, x: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => x.mapv_inplace(sigmoid),
            Activation::Tanh => x.mapv_inplace(f64::tanh),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y = act(x·W + b)` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

/// Feedforward stack with an optional bias-free tail whose weights are set
/// from outside and never trained.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
    frozen_last: Option<Array2<f64>>,
    generation: u64,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
    frozen: Option<Array2<f64>>,
}

impl ForwardCache {
    /// Output of the trainable layers, before any frozen tail.
    pub fn body_output(&self) -> &Array2<f64> {
        self.outputs.last().expect("nets have at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub layers: Vec<LayerGrad>,
}

impl DenseGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &DenseGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    /// Same order as [`DenseNet::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|&v| v == 0.0) && l.bias.iter().all(|&v| v == 0.0))
    }
}

pub(crate) fn sgd_update(p: &mut f64, g: f64, lr: f64, weight_decay: f64) {
    *p -= lr * (g + weight_decay * *p);
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("a network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: bias of {} for {} outputs",
                    l.bias.len(),
                    l.outputs()
                )));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} emits {} but layer {} takes {}",
                    w[0].outputs(),
                    i + 1,
                    w[1].inputs()
                )));
            }
        }
        Ok(Self {
            layers,
            frozen_last: None,
            generation: next_generation(),
        })
    }

    /// Uniform `±√(6 / (fan_in + fan_out))` weights, zero biases.
    /// `widths` has one more entry than `activations`.
    pub fn new<R: Rng>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if widths.len() != activations.len() + 1 || activations.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} widths for {} activations",
                widths.len(),
                activations.len()
            )));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..=bound)),
                    bias: Array1::zeros(w[1]),
                    activation,
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn body_width(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    pub fn output_width(&self) -> usize {
        self.frozen_last.as_ref().map_or(self.body_width(), |f| f.ncols())
    }

    pub fn frozen_last(&self) -> Option<&Array2<f64>> {
        self.frozen_last.as_ref()
    }

    pub fn set_frozen_last(&mut self, map: Option<Array2<f64>>) -> Result<()> {
        if let Some(m) = &map {
            if m.nrows() != self.body_width() {
                return Err(Error::ShapeMismatch(format!(
                    "frozen map takes {} inputs, body emits {}",
                    m.nrows(),
                    self.body_width()
                )));
            }
        }
        self.frozen_last = map;
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every weight (row-major) then bias, layer by layer.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                params.len(),
                self.n_params()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        self.generation = next_generation();
        Ok(())
    }

    /// `(name, shape, row-major values)` per trainable array.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((
                format!("{prefix}.{i}.weight"),
                l.weight.shape().to_vec(),
                l.weight.iter().copied().collect(),
            ));
            out.push((format!("{prefix}.{i}.bias"), vec![l.bias.len()], l.bias.to_vec()));
        }
        out
    }

    /// `p ← p − lr·(g + weight_decay·p)` over the trainable layers. The
    /// frozen tail is not touched.
    pub fn apply_sgd(&mut self, grads: &DenseGrads, lr: f64, weight_decay: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradient layers for {} layers",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            if l.weight.dim() != g.weight.dim() || l.bias.len() != g.bias.len() {
                return Err(Error::ShapeMismatch("gradient shape differs from parameter".into()));
            }
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            Zip::from(&mut l.weight).and(&g.weight).for_each(|p, &g| sgd_update(p, g, lr, weight_decay));
            Zip::from(&mut l.bias).and(&g.bias).for_each(|p, &g| sgd_update(p, g, lr, weight_decay));
        }
        self.generation = next_generation();
        Ok(())
    }

    fn run(&self, x: ArrayView2<f64>, with_frozen: bool) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.input_width() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_width()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut y = h.dot(&l.weight);
            y += &l.bias;
            l.activation.apply(&mut y);
            inputs.push(h);
            outputs.push(y.clone());
            h = y;
        }
        let frozen = if with_frozen { self.frozen_last.clone() } else { None };
        let out = match &frozen {
            Some(f) => h.dot(f),
            None => h,
        };
        Ok((
            out,
            ForwardCache {
                generation: self.generation,
                inputs,
                outputs,
                frozen,
            },
        ))
    }

    /// Full forward pass including the frozen tail when one is set.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.run(x, true)
    }

    /// Forward pass through the trainable layers only.
    pub fn forward_body(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.run(x, false)
    }

    /// Reverse pass from `∂L/∂output`; returns parameter gradients and
    /// `∂L/∂input`. A frozen tail recorded in the cache passes gradient
    /// through without receiving any.
    pub fn backward(&self, upstream: ArrayView2<f64>, cache: &ForwardCache) -> Result<(DenseGrads, Array2<f64>)> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        let mut g = match &cache.frozen {
            Some(f) => {
                if upstream.ncols() != f.ncols() {
                    return Err(Error::ShapeMismatch("upstream width differs from frozen output".into()));
                }
                upstream.dot(&f.t())
            }
            None => upstream.to_owned(),
        };
        if g.dim() != cache.body_output().dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} for output {:?}",
                g.dim(),
                cache.body_output().dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let act = l.activation;
            Zip::from(&mut g).and(&cache.outputs[i]).for_each(|g, &y| *g *= act.derivative(y));
            let weight = cache.inputs[i].t().dot(&g);
            let bias = g.sum_axis(Axis(0));
            grads.push(LayerGrad { weight, bias });
            g = g.dot(&l.weight.t());
        }
        grads.reverse();
        Ok((DenseGrads { layers: grads }, g))
    }
}
