use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, STEM_CHANNELS};

/// Standard deviation of the zero-mean normal used for the transformer's
/// linear weights, the positional embedding and the query prototype.
/// Convolutions use He-normal instead. Biases start at zero.
pub const INIT_STD: f64 = 0.02;

/// Dilation rates of the parallel head branches.
pub const ATROUS_RATES: [usize; 3] = [1, 3, 6];

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        Self {
            shape: shape.to_vec(),
            data: (0..shape.iter().product()).map(|_| dist.sample(rng)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Square-kernel convolution: weight `out×in×k×k`, bias `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    /// He-normal weights, std `sqrt(2 / fan_in)`.
    fn init<R: Rng + ?Sized>(out_c: usize, in_c: usize, kernel: usize, rng: &mut R) -> Self {
        let std = (2.0 / (in_c * kernel * kernel) as f64).sqrt();
        Self {
            weight: Tensor::normal(&[out_c, in_c, kernel, kernel], std, rng),
            bias: Tensor::zeros(&[out_c]),
        }
    }
}

/// Fully connected layer with weight stored `in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::normal(&[in_dim, out_dim], INIT_STD, rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl NormParams {
    fn init(dim: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
        }
    }
}

/// One encoder layer: attention, MLP and the boundary gate projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub norm1: NormParams,
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
    pub norm2: NormParams,
    pub mlp_in: LinearParams,
    pub mlp_out: LinearParams,
    /// 1×1 projection `C → 1` producing the gate logits.
    pub gate: LinearParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub branches: Vec<ConvParams>,
    pub project: ConvParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub stem: Vec<ConvParams>,
    /// `L×C`
    pub pos_embed: Tensor,
    pub layers: Vec<LayerParams>,
    /// Boundary context prototype compared against every patch embedding.
    pub boundary_query: Tensor,
    pub head: HeadParams,
}

impl ParameterSet {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.channels;
        let mut stem = Vec::with_capacity(4);
        let mut in_c = 3;
        for out_c in STEM_CHANNELS.iter().copied().chain(std::iter::once(c)) {
            stem.push(ConvParams::init(out_c, in_c, 3, rng));
            in_c = out_c;
        }
        let pos_embed = Tensor::normal(&[cfg.seq_len(), c], INIT_STD, rng);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                norm1: NormParams::init(c),
                query: LinearParams::init(c, c, rng),
                key: LinearParams::init(c, c, rng),
                value: LinearParams::init(c, c, rng),
                output: LinearParams::init(c, c, rng),
                norm2: NormParams::init(c),
                mlp_in: LinearParams::init(c, cfg.mlp_hidden, rng),
                mlp_out: LinearParams::init(cfg.mlp_hidden, c, rng),
                gate: LinearParams::init(c, 1, rng),
            })
            .collect();
        let boundary_query = Tensor::normal(&[c], INIT_STD, rng);
        let branches = ATROUS_RATES.iter().map(|_| ConvParams::init(c, c, 3, rng)).collect();
        let project = ConvParams::init(1, c * ATROUS_RATES.len(), 1, rng);
        Self {
            stem,
            pos_embed,
            layers,
            boundary_query,
            head: HeadParams { branches, project },
        }
    }

    /// Same shapes, all zeros. Used as the gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Every tensor with its dotted path, in declaration order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, conv) in self.stem.iter().enumerate() {
            out.push((format!("stem.{i}.weight"), &conv.weight));
            out.push((format!("stem.{i}.bias"), &conv.bias));
        }
        out.push(("pos_embed".to_string(), &self.pos_embed));
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.norm1.gamma"), &layer.norm1.gamma));
            out.push((format!("{p}.norm1.beta"), &layer.norm1.beta));
            for (name, lin) in [
                ("query", &layer.query),
                ("key", &layer.key),
                ("value", &layer.value),
                ("output", &layer.output),
            ] {
                out.push((format!("{p}.{name}.weight"), &lin.weight));
                out.push((format!("{p}.{name}.bias"), &lin.bias));
            }
            out.push((format!("{p}.norm2.gamma"), &layer.norm2.gamma));
            out.push((format!("{p}.norm2.beta"), &layer.norm2.beta));
            for (name, lin) in [("mlp_in", &layer.mlp_in), ("mlp_out", &layer.mlp_out), ("gate", &layer.gate)] {
                out.push((format!("{p}.{name}.weight"), &lin.weight));
                out.push((format!("{p}.{name}.bias"), &lin.bias));
            }
        }
        out.push(("boundary_query".to_string(), &self.boundary_query));
        for (conv, rate) in self.head.branches.iter().zip(ATROUS_RATES) {
            out.push((format!("head.rate{rate}.weight"), &conv.weight));
            out.push((format!("head.rate{rate}.bias"), &conv.bias));
        }
        out.push(("head.project.weight".to_string(), &self.head.project.weight));
        out.push(("head.project.bias".to_string(), &self.head.project.bias));
        out
    }

    /// Mutable twin of [`ParameterSet::tensors`]; same order and names.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, conv) in self.stem.iter_mut().enumerate() {
            out.push((format!("stem.{i}.weight"), &mut conv.weight));
            out.push((format!("stem.{i}.bias"), &mut conv.bias));
        }
        out.push(("pos_embed".to_string(), &mut self.pos_embed));
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.norm1.gamma"), &mut layer.norm1.gamma));
            out.push((format!("{p}.norm1.beta"), &mut layer.norm1.beta));
            for (name, lin) in [
                ("query", &mut layer.query),
                ("key", &mut layer.key),
                ("value", &mut layer.value),
                ("output", &mut layer.output),
            ] {
                out.push((format!("{p}.{name}.weight"), &mut lin.weight));
                out.push((format!("{p}.{name}.bias"), &mut lin.bias));
            }
            out.push((format!("{p}.norm2.gamma"), &mut layer.norm2.gamma));
            out.push((format!("{p}.norm2.beta"), &mut layer.norm2.beta));
            for (name, lin) in [
                ("mlp_in", &mut layer.mlp_in),
                ("mlp_out", &mut layer.mlp_out),
                ("gate", &mut layer.gate),
            ] {
                out.push((format!("{p}.{name}.weight"), &mut lin.weight));
                out.push((format!("{p}.{name}.bias"), &mut lin.bias));
            }
        }
        out.push(("boundary_query".to_string(), &mut self.boundary_query));
        for (conv, rate) in self.head.branches.iter_mut().zip(ATROUS_RATES) {
            out.push((format!("head.rate{rate}.weight"), &mut conv.weight));
            out.push((format!("head.rate{rate}.bias"), &mut conv.bias));
        }
        out.push(("head.project.weight".to_string(), &mut self.head.project.weight));
        out.push(("head.project.bias".to_string(), &mut self.head.project.bias));
        out
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Path of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.data.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }

    /// Adds `scale * other` into `self`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ParameterSet, scale: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }
}
