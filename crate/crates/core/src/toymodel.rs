//! A small int8 dense inference engine used to exercise the split pipeline
//! end to end.
//!
//! Layers compute an int32 accumulation of int8 products plus bias, then
//! requantize into the next layer's input parameters (round half away from
//! zero) with an optional relu6 clamp applied in the quantized domain. The
//! construction guarantees that adjacent layers share boundary parameters, so
//! splitting at any layer and shipping the boundary tensor — bytes, scale and
//! zero point — reproduces the monolithic result bit for bit.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::quant::{QuantParams, QuantTensor};

/// Labels for the ten-class demo model.
pub const DOG_LABELS: [&str; 10] = [
    "German shepherd",
    "Leonberg",
    "malinois",
    "chow",
    "Irish terrier",
    "beagle",
    "boxer",
    "pug",
    "Siberian husky",
    "golden retriever",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    None,
    Relu6,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToyError {
    DimensionMismatch { expected: usize, got: usize },
    ParamsNotChained { layer: usize },
    BadWeightCount { layer: usize },
    BadBiasCount { layer: usize },
    LabelCountMismatch { labels: usize, classes: usize },
    InputParamsMismatch,
    SplitIndexOutOfRange { index: usize, layers: usize },
    EmptyScores,
    InvalidK,
    NoLayers,
}

impl fmt::Display for ToyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch { expected, got } => {
                write!(f, "input has {got} elements, layer expects {expected}")
            }
            Self::ParamsNotChained { layer } => {
                write!(f, "layer {layer} input params differ from previous output params")
            }
            Self::BadWeightCount { layer } => write!(f, "layer {layer} weight count mismatch"),
            Self::BadBiasCount { layer } => write!(f, "layer {layer} bias count mismatch"),
            Self::LabelCountMismatch { labels, classes } => {
                write!(f, "{labels} labels for {classes} classes")
            }
            Self::InputParamsMismatch => {
                write!(f, "input tensor params differ from the model's input params")
            }
            Self::SplitIndexOutOfRange { index, layers } => {
                write!(f, "split index {index} outside 1..{layers}")
            }
            Self::EmptyScores => write!(f, "score vector is empty"),
            Self::InvalidK => write!(f, "k must be at least 1"),
            Self::NoLayers => write!(f, "model has no layers"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ToyError {}

/// One dense layer. Weights are row-major `[out_dim][in_dim]`; bias is in
/// accumulator units (input scale times integer-valued weights).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
    pub input_params: QuantParams,
    pub output_params: QuantParams,
    pub activation: Activation,
}

impl DenseLayer {
    fn validate(&self, index: usize) -> Result<(), ToyError> {
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(ToyError::BadWeightCount { layer: index });
        }
        if self.bias.len() != self.out_dim {
            return Err(ToyError::BadBiasCount { layer: index });
        }
        Ok(())
    }

    /// int8 products accumulated in int32 (saturating), then requantized to
    /// the output parameters with the optional relu6 clamp.
    fn forward(&self, input: &QuantTensor) -> Result<QuantTensor, ToyError> {
        if input.len() != self.in_dim {
            return Err(ToyError::DimensionMismatch { expected: self.in_dim, got: input.len() });
        }
        if input.params != self.input_params {
            return Err(ToyError::InputParamsMismatch);
        }
        let z_in = self.input_params.zero_point() as i64;
        let s_in = self.input_params.scale();
        let s_out = self.output_params.scale();
        let z_out = self.output_params.zero_point() as i32;
        let q6 = self.output_params.quantize_value(6.0);

        let mut out = Vec::with_capacity(self.out_dim);
        for row in 0..self.out_dim {
            let w = &self.weights[row * self.in_dim..(row + 1) * self.in_dim];
            let mut acc: i64 = 0;
            for (wi, xi) in w.iter().zip(&input.data) {
                acc += *wi as i64 * (*xi as i64 - z_in);
            }
            acc += self.bias[row] as i64;
            let acc = acc.clamp(i32::MIN as i64, i32::MAX as i64);
            // the accumulator's real value is acc * s_in; requantize to the
            // output parameters
            let mut q = (math::round(acc as f64 * s_in / s_out) as i64 + z_out as i64)
                .clamp(i8::MIN as i64, i8::MAX as i64) as i8;
            if self.activation == Activation::Relu6 {
                q = q.clamp(z_out as i8, q6);
            }
            out.push(q);
        }
        Ok(QuantTensor {
            shape: vec![self.out_dim as u32],
            params: self.output_params,
            data: out,
        })
    }
}

/// A sequential int8 dense model with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub name: String,
    pub labels: Vec<String>,
    layers: Vec<DenseLayer>,
}

impl ToyModel {
    /// Validates dimension and quant-parameter chaining between layers.
    pub fn new(name: &str, labels: Vec<String>, layers: Vec<DenseLayer>) -> Result<Self, ToyError> {
        if layers.is_empty() {
            return Err(ToyError::NoLayers);
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(i)?;
            if i > 0 {
                let prev = &layers[i - 1];
                if prev.out_dim != layer.in_dim {
                    return Err(ToyError::DimensionMismatch {
                        expected: prev.out_dim,
                        got: layer.in_dim,
                    });
                }
                if prev.output_params != layer.input_params {
                    return Err(ToyError::ParamsNotChained { layer: i });
                }
            }
        }
        let classes = layers.last().unwrap().out_dim;
        if labels.len() != classes {
            return Err(ToyError::LabelCountMismatch { labels: labels.len(), classes });
        }
        Ok(Self { name: name.to_string(), labels, layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn input_params(&self) -> QuantParams {
        self.layers[0].input_params
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Deterministic pseudo-random model over the given layer dimensions
    /// (`dims[0]` is the input width, `dims.last()` the class count).
    /// Hidden layers use relu6; the head is linear.
    pub fn generate(seed: u64, dims: &[usize], labels: Vec<String>) -> Result<Self, ToyError> {
        if dims.len() < 2 {
            return Err(ToyError::NoLayers);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(dims.len());
        for _ in 0..dims.len() {
            // draw in f32 so the scale narrows losslessly onto the wire
            let scale = rng.random_range(0.02f32..0.25) as f64;
            let zp = rng.random_range(-10i32..=10) as i8;
            params.push(QuantParams::new(scale, zp).expect("scale in range"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[i], dims[i + 1]);
            let weights = (0..in_dim * out_dim)
                .map(|_| rng.random_range(-4i32..=4) as i8)
                .collect();
            let bias = (0..out_dim).map(|_| rng.random_range(-64i32..=64)).collect();
            let last = i + 1 == dims.len() - 1;
            layers.push(DenseLayer {
                in_dim,
                out_dim,
                weights,
                bias,
                input_params: params[i],
                output_params: params[i + 1],
                activation: if last { Activation::None } else { Activation::Relu6 },
            });
        }
        Self::new(&format!("toy-{seed}"), labels, layers)
    }

    /// The ten-class demo model used by the session runtime.
    pub fn demo(seed: u64) -> Self {
        let labels = DOG_LABELS.iter().map(|s| s.to_string()).collect();
        Self::generate(seed, &[16, 24, 16, 10], labels).expect("demo dims are valid")
    }

    /// A deterministic in-range input tensor for this model.
    pub fn sample_input(&self, seed: u64) -> QuantTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..self.input_dim()).map(|_| rng.random_range(-128i32..=127) as i8).collect();
        QuantTensor {
            shape: vec![self.input_dim() as u32],
            params: self.input_params(),
            data,
        }
    }
}

/// Run a slice of chained layers over a quantized input.
pub fn run_layers(layers: &[DenseLayer], input: &QuantTensor) -> Result<QuantTensor, ToyError> {
    let mut cur = input.clone();
    for layer in layers {
        cur = layer.forward(&cur)?;
    }
    Ok(cur)
}

/// Dequantize the head's output and normalize with softmax so scores lie in
/// [0, 1] and sum to 1.
pub fn scores_from_logits(logits: &QuantTensor) -> Vec<f32> {
    let vals: Vec<f64> = logits
        .data
        .iter()
        .map(|&q| logits.params.dequantize_value(q) as f64)
        .collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = vals.iter().map(|&v| math::exp(v - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / sum) as f32).collect()
}

/// Full forward pass: per-layer int8 inference then softmax scores.
pub fn infer_full(model: &ToyModel, input: &QuantTensor) -> Result<Vec<f32>, ToyError> {
    let out = run_layers(model.layers(), input)?;
    Ok(scores_from_logits(&out))
}

/// One half of a split model. The second part carries the class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPart {
    pub layers: Vec<DenseLayer>,
    pub labels: Option<Vec<String>>,
}

/// Output of running one part: an intermediate boundary tensor, or final
/// class scores when the part contains the head.
#[derive(Debug, Clone, PartialEq)]
pub enum PartOutput {
    Boundary(QuantTensor),
    Scores(Vec<f32>),
}

impl ToyPart {
    pub fn boundary_params(&self) -> QuantParams {
        self.layers.last().expect("parts are non-empty").output_params
    }

    pub fn input_params(&self) -> QuantParams {
        self.layers.first().expect("parts are non-empty").input_params
    }

    pub fn infer(&self, input: &QuantTensor) -> Result<PartOutput, ToyError> {
        let out = run_layers(&self.layers, input)?;
        match self.labels {
            Some(_) => Ok(PartOutput::Scores(scores_from_logits(&out))),
            None => Ok(PartOutput::Boundary(out)),
        }
    }
}

/// Split the model before layer `index` (so part 1 holds `index` layers).
/// By construction the boundary parameters of part 1 equal the input
/// parameters of part 2.
pub fn split_toy(model: &ToyModel, index: usize) -> Result<(ToyPart, ToyPart), ToyError> {
    let n = model.layers().len();
    if index == 0 || index >= n {
        return Err(ToyError::SplitIndexOutOfRange { index, layers: n });
    }
    let part1 = ToyPart { layers: model.layers()[..index].to_vec(), labels: None };
    let part2 = ToyPart {
        layers: model.layers()[index..].to_vec(),
        labels: Some(model.labels.clone()),
    };
    Ok((part1, part2))
}

/// One ranked prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_id: u16,
    pub label: String,
    pub confidence: f32,
}

/// Top-k classes by descending confidence; ties break by ascending class id.
/// Requesting more classes than exist returns them all.
pub fn top_k(scores: &[f32], labels: &[String], k: usize) -> Result<Vec<Prediction>, ToyError> {
    if k == 0 {
        return Err(ToyError::InvalidK);
    }
    if scores.is_empty() {
        return Err(ToyError::EmptyScores);
    }
    if scores.len() != labels.len() {
        return Err(ToyError::LabelCountMismatch { labels: labels.len(), classes: scores.len() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then_with(|| a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| Prediction {
            class_id: i as u16,
            label: labels[i].clone(),
            confidence: scores[i],
        })
        .collect())
}
