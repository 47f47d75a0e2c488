//! File formats: JSON model catalogs, link-model and stage-timing files,
//! toy-model documents with base64 weight blobs, and measurement CSVs.
//!
//! Catalog schema:
//!
//! ```json
//! {
//!   "model_name": "...",
//!   "input_shape": [224, 224, 3],
//!   "layers": [
//!     {"name": "...", "output_shape": [56, 56, 48], "kind": "expand",
//!      "part1_bytes": 752600, "part2_bytes": 11800000}
//!   ]
//! }
//! ```
//!
//! `kind` is one of `conv`, `expand`, `project`, `bn`, `pool`, `classifier`,
//! `other`; the part-size fields are optional.

use std::io::Read;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use splitwire_core::catalog::{CatalogError, LayerKind, LayerSpec, ModelGraph};
use splitwire_core::link::{LinkModel, Measurement, Protocol, StageTimings, StallModel};
use splitwire_core::quant::{QuantError, QuantParams};
use splitwire_core::toymodel::{Activation, DenseLayer, ToyError, ToyModel};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("model: {0}")]
    Toy(#[from] ToyError),
    #[error("quantization: {0}")]
    Quant(#[from] QuantError),
    #[error("unknown kind {0:?}")]
    UnknownKind(String),
    #[error("unknown protocol {0:?}")]
    UnknownProtocol(String),
    #[error("unknown activation {0:?}")]
    UnknownActivation(String),
    #[error("bad base64 weight blob: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("link model failed validation: {0}")]
    InvalidLinkModel(#[from] splitwire_core::link::LinkError),
}

// ── Catalog JSON ──────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct CatalogDoc {
    model_name: String,
    input_shape: Vec<u32>,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerDoc {
    name: String,
    output_shape: Vec<u32>,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    part1_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    part2_bytes: Option<u64>,
}

fn kind_to_str(kind: LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv => "conv",
        LayerKind::Expand => "expand",
        LayerKind::Project => "project",
        LayerKind::Bn => "bn",
        LayerKind::Pool => "pool",
        LayerKind::Classifier => "classifier",
        LayerKind::Other => "other",
    }
}

fn kind_from_str(s: &str) -> Result<LayerKind, FormatError> {
    Ok(match s {
        "conv" => LayerKind::Conv,
        "expand" => LayerKind::Expand,
        "project" => LayerKind::Project,
        "bn" => LayerKind::Bn,
        "pool" => LayerKind::Pool,
        "classifier" => LayerKind::Classifier,
        "other" => LayerKind::Other,
        other => return Err(FormatError::UnknownKind(other.to_string())),
    })
}

pub fn catalog_to_json(graph: &ModelGraph) -> String {
    let doc = CatalogDoc {
        model_name: graph.model_name().to_string(),
        input_shape: graph.input_shape().to_vec(),
        layers: graph
            .layers()
            .iter()
            .map(|l| LayerDoc {
                name: l.name.clone(),
                output_shape: l.output_shape.clone(),
                kind: kind_to_str(l.kind).to_string(),
                part1_bytes: l.part1_bytes,
                part2_bytes: l.part2_bytes,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("catalog docs always serialize")
}

pub fn catalog_from_json(json: &str) -> Result<ModelGraph, FormatError> {
    let doc: CatalogDoc = serde_json::from_str(json)?;
    let mut layers = Vec::with_capacity(doc.layers.len());
    for l in doc.layers {
        let mut spec = LayerSpec::new(&l.name, &l.output_shape, kind_from_str(&l.kind)?);
        spec.part1_bytes = l.part1_bytes;
        spec.part2_bytes = l.part2_bytes;
        layers.push(spec);
    }
    Ok(ModelGraph::new(&doc.model_name, doc.input_shape, layers)?)
}

pub fn load_catalog(path: &std::path::Path) -> Result<ModelGraph, FormatError> {
    catalog_from_json(&std::fs::read_to_string(path)?)
}

// ── Link model JSON ───────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
pub struct LinkModelDoc {
    pub protocol: String,
    pub setup_ms: f64,
    pub per_packet_ms: f64,
    pub per_byte_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stall: Option<StallDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StallDoc {
    pub threshold_packets: u64,
    pub factor: f64,
}

pub fn link_model_to_json(protocol: Protocol, model: &LinkModel) -> String {
    let doc = LinkModelDoc {
        protocol: protocol.to_string(),
        setup_ms: model.setup_ms,
        per_packet_ms: model.per_packet_ms,
        per_byte_ms: model.per_byte_ms,
        stall: model
            .stall
            .map(|s| StallDoc { threshold_packets: s.threshold_packets, factor: s.factor }),
    };
    serde_json::to_string_pretty(&doc).expect("link model docs always serialize")
}

pub fn link_model_from_json(json: &str) -> Result<(Protocol, LinkModel), FormatError> {
    let doc: LinkModelDoc = serde_json::from_str(json)?;
    let protocol = Protocol::parse(&doc.protocol)
        .ok_or_else(|| FormatError::UnknownProtocol(doc.protocol.clone()))?;
    let model = LinkModel {
        setup_ms: doc.setup_ms,
        per_packet_ms: doc.per_packet_ms,
        per_byte_ms: doc.per_byte_ms,
        stall: doc
            .stall
            .map(|s| StallModel { threshold_packets: s.threshold_packets, factor: s.factor }),
    };
    model.validate()?;
    Ok((protocol, model))
}

// ── Stage timings JSON ────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
pub struct StageTimingsDoc {
    pub model_load_ms: [f64; 2],
    pub input_load_ms: f64,
    pub tensor_alloc_ms: [f64; 2],
    pub inference_ms: [f64; 2],
    pub buffering_ms: f64,
    pub feedback_ms: f64,
}

pub fn stage_timings_to_json(stages: &StageTimings) -> String {
    let doc = StageTimingsDoc {
        model_load_ms: stages.model_load_ms,
        input_load_ms: stages.input_load_ms,
        tensor_alloc_ms: stages.tensor_alloc_ms,
        inference_ms: stages.inference_ms,
        buffering_ms: stages.buffering_ms,
        feedback_ms: stages.feedback_ms,
    };
    serde_json::to_string_pretty(&doc).expect("stage timing docs always serialize")
}

pub fn stage_timings_from_json(json: &str) -> Result<StageTimings, FormatError> {
    let doc: StageTimingsDoc = serde_json::from_str(json)?;
    let stages = StageTimings {
        model_load_ms: doc.model_load_ms,
        input_load_ms: doc.input_load_ms,
        tensor_alloc_ms: doc.tensor_alloc_ms,
        inference_ms: doc.inference_ms,
        buffering_ms: doc.buffering_ms,
        feedback_ms: doc.feedback_ms,
    };
    stages.validate()?;
    Ok(stages)
}

// ── Toy model JSON ────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct ToyModelDoc {
    name: String,
    labels: Vec<String>,
    layers: Vec<DenseLayerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DenseLayerDoc {
    in_dim: usize,
    out_dim: usize,
    /// Row-major int8 weights, base64-encoded.
    weights_b64: String,
    bias: Vec<i32>,
    input: QuantParamsDoc,
    output: QuantParamsDoc,
    activation: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct QuantParamsDoc {
    scale: f64,
    zero_point: i8,
}

pub fn toy_model_to_json(model: &ToyModel) -> String {
    let doc = ToyModelDoc {
        name: model.name.clone(),
        labels: model.labels.clone(),
        layers: model
            .layers()
            .iter()
            .map(|l| DenseLayerDoc {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                weights_b64: BASE64
                    .encode(l.weights.iter().map(|&w| w as u8).collect::<Vec<u8>>()),
                bias: l.bias.clone(),
                input: QuantParamsDoc {
                    scale: l.input_params.scale(),
                    zero_point: l.input_params.zero_point(),
                },
                output: QuantParamsDoc {
                    scale: l.output_params.scale(),
                    zero_point: l.output_params.zero_point(),
                },
                activation: match l.activation {
                    Activation::None => "none".to_string(),
                    Activation::Relu6 => "relu6".to_string(),
                },
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("toy model docs always serialize")
}

pub fn toy_model_from_json(json: &str) -> Result<ToyModel, FormatError> {
    let doc: ToyModelDoc = serde_json::from_str(json)?;
    let mut layers = Vec::with_capacity(doc.layers.len());
    for l in doc.layers {
        let weights = BASE64.decode(l.weights_b64.as_bytes())?;
        layers.push(DenseLayer {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            weights: weights.iter().map(|&b| b as i8).collect(),
            bias: l.bias,
            input_params: QuantParams::new(l.input.scale, l.input.zero_point)?,
            output_params: QuantParams::new(l.output.scale, l.output.zero_point)?,
            activation: match l.activation.as_str() {
                "none" => Activation::None,
                "relu6" => Activation::Relu6,
                other => return Err(FormatError::UnknownActivation(other.to_string())),
            },
        });
    }
    Ok(ToyModel::new(&doc.name, doc.labels, layers)?)
}

// ── Measurement CSV ───────────────────────────────────────────────

/// One row of a measurement CSV: `protocol,chunk_bytes,payload_bytes,latency_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRow {
    pub protocol: Protocol,
    pub measurement: Measurement,
}

#[derive(Debug, Deserialize)]
struct MeasurementRecord {
    protocol: String,
    chunk_bytes: u32,
    payload_bytes: u64,
    latency_ms: f64,
}

pub fn measurements_from_csv(reader: impl Read) -> Result<Vec<MeasurementRow>, FormatError> {
    let mut rows = Vec::new();
    let mut csv = csv::Reader::from_reader(reader);
    for record in csv.deserialize::<MeasurementRecord>() {
        let record = record?;
        let protocol = Protocol::parse(&record.protocol)
            .ok_or_else(|| FormatError::UnknownProtocol(record.protocol.clone()))?;
        rows.push(MeasurementRow {
            protocol,
            measurement: Measurement {
                payload_bytes: record.payload_bytes,
                chunk_bytes: record.chunk_bytes,
                latency_ms: record.latency_ms,
            },
        });
    }
    Ok(rows)
}

pub fn measurements_to_csv(rows: &[MeasurementRow]) -> String {
    let mut out = String::from("protocol,chunk_bytes,payload_bytes,latency_ms\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.protocol,
            row.measurement.chunk_bytes,
            row.measurement.payload_bytes,
            row.measurement.latency_ms
        ));
    }
    out
}
