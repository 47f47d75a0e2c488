//! Command-line interface: planning, link simulation, calibration, live
//! split sessions and the OTA rollout demo.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 computation error,
//! 4 transport error.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use splitwire_core::catalog::{builtin_mobilenetv2_catalog, ModelGraph};
use splitwire_core::link::{
    calibrate, CalibrateOptions, LinkModel, Protocol, RankMetric, RttCandidate, StageTimings,
};
use splitwire_core::ota::{package, Device, ImageMeta, State, Version};
use splitwire_core::planner::{packet_count, split, SplitPlan};
use splitwire_core::testbed;
use splitwire_core::toymodel::Prediction;

use crate::formats;
use crate::ota_runner;
use crate::report::{csv_line, fmt_ms, text_table, trace_to_csv};
use crate::session::{monolithic_predictions, run_both, run_node1, run_node2, SessionConfig};
use crate::transport::{
    datagram_pair, in_memory_pair, stream_pair, DatagramLink, FaultConfig, FaultyLink,
    FrameLink, InMemoryConfig, Reliability, StreamLink,
};

/// Errors mapped onto process exit codes.
#[derive(Debug)]
pub enum CmdError {
    Config(String),
    Computation(String),
    Transport(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Computation(_) => 3,
            Self::Transport(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Computation(m) | Self::Transport(m) => m,
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, CmdError> {
    Err(CmdError::Config(msg.into()))
}

#[derive(Debug, Parser)]
#[command(
    name = "splitwire",
    version,
    about = "Plan, simulate and run split CNN inference over constrained links"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Packet counts (and predicted latencies) for split/protocol/chunk combinations
    Plan(PlanArgs),
    /// Compose round-trip-time estimates and rank protocols
    Simulate(SimulateArgs),
    /// Fit a link model from measured transfers
    Calibrate(CalibrateArgs),
    /// Run a live two-node split-inference session
    Run(RunArgs),
    /// Run the firmware update state machine over a link
    Ota(OtaArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Udp,
    Tcp,
    #[value(name = "esp-now", alias = "espnow")]
    EspNow,
    Ble,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Udp => Protocol::Udp,
            ProtocolArg::Tcp => Protocol::Tcp,
            ProtocolArg::EspNow => Protocol::EspNow,
            ProtocolArg::Ble => Protocol::Ble,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportArg {
    Udp,
    Tcp,
    Inmem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    /// Node 2: listens, classifies, returns feedback
    Server,
    /// Node 1: connects, extracts features, receives feedback
    Client,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReliabilityArg {
    None,
    #[value(name = "stop-and-wait")]
    StopAndWait,
}

impl From<ReliabilityArg> for Reliability {
    fn from(r: ReliabilityArg) -> Self {
        match r {
            ReliabilityArg::None => Reliability::None,
            ReliabilityArg::StopAndWait => Reliability::StopAndWait,
        }
    }
}

fn load_graph(model: &str) -> Result<ModelGraph, CmdError> {
    if model == "builtin" {
        Ok(builtin_mobilenetv2_catalog())
    } else {
        formats::load_catalog(std::path::Path::new(model))
            .map_err(|e| CmdError::Config(format!("cannot load catalog {model}: {e}")))
    }
}

fn write_or_print(out: Option<&PathBuf>, content: &str) -> Result<(), CmdError> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CmdError::Config(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// Link models keyed by protocol, from `--paper-defaults` and/or model files
/// (files win).
fn resolve_link_models(
    paper_defaults: bool,
    files: &[PathBuf],
) -> Result<BTreeMap<Protocol, LinkModel>, CmdError> {
    let mut models = BTreeMap::new();
    if paper_defaults {
        for p in Protocol::ALL {
            models.insert(p, testbed::link_model(p));
        }
    }
    for file in files {
        let json = std::fs::read_to_string(file)
            .map_err(|e| CmdError::Config(format!("cannot read {}: {e}", file.display())))?;
        let (protocol, model) = formats::link_model_from_json(&json)
            .map_err(|e| CmdError::Config(format!("{}: {e}", file.display())))?;
        models.insert(protocol, model);
    }
    Ok(models)
}

// ── plan ──────────────────────────────────────────────────────────

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// `builtin` or a path to a catalog JSON file
    #[arg(long, default_value = "builtin")]
    pub model: String,
    /// Layer to split after
    #[arg(long, conflicts_with = "all_paper_splits")]
    pub split: Option<String>,
    /// Report every benchmarked split over the full protocol/chunk grid
    #[arg(long)]
    pub all_paper_splits: bool,
    /// Protocols to include (default: all four)
    #[arg(long = "protocol", value_enum)]
    pub protocols: Vec<ProtocolArg>,
    /// Chunk sizes in bytes (default: each protocol's benchmark chunk)
    #[arg(long = "chunk")]
    pub chunks: Vec<u32>,
    /// Attach the reference link models so rows carry predicted latency
    #[arg(long)]
    pub paper_defaults: bool,
    /// Attach a calibrated link model file (repeatable)
    #[arg(long = "link-model")]
    pub link_models: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Write the report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct PlanRowOut {
    split_layer: String,
    protocol: String,
    chunk_bytes: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_packets: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted_latency_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// The protocol/chunk grid the testbed benchmarks cover.
fn benchmark_chunks(p: Protocol) -> &'static [u32] {
    match p {
        Protocol::Udp | Protocol::Tcp => &[1472, 1460, 1200],
        Protocol::EspNow => &[250],
        Protocol::Ble => &[512],
    }
}

fn selected_protocols(args: &[ProtocolArg]) -> Vec<Protocol> {
    if args.is_empty() {
        Protocol::ALL.to_vec()
    } else {
        args.iter().map(|&p| Protocol::from(p)).collect()
    }
}

pub fn cmd_plan(args: &PlanArgs) -> Result<(), CmdError> {
    let graph = load_graph(&args.model)?;
    let models = resolve_link_models(args.paper_defaults, &args.link_models)?;
    let protocols = selected_protocols(&args.protocols);

    let split_names: Vec<String> = if args.all_paper_splits {
        testbed::SPLIT_LAYERS.iter().map(|s| s.to_string()).collect()
    } else {
        match &args.split {
            Some(name) => vec![name.clone()],
            None => return config_err("pass --split <layer> or --all-paper-splits"),
        }
    };

    let mut rows: Vec<PlanRowOut> = Vec::new();
    for name in &split_names {
        let plan = split(&graph, name).map_err(|e| CmdError::Config(e.to_string()))?;
        for &protocol in &protocols {
            let profile = testbed::profile(protocol);
            let chunks: Vec<u32> = if !args.chunks.is_empty() {
                args.chunks.clone()
            } else if args.all_paper_splits {
                benchmark_chunks(protocol).to_vec()
            } else {
                vec![testbed::reference_chunk(protocol)]
            };
            for chunk in chunks {
                let row = if chunk == 0 {
                    PlanRowOut {
                        split_layer: name.clone(),
                        protocol: protocol.to_string(),
                        chunk_bytes: chunk,
                        n_packets: None,
                        predicted_latency_ms: None,
                        error: Some("chunk size must be at least 1 byte".into()),
                    }
                } else if profile.enforces_max_payload() && chunk > profile.max_payload_bytes {
                    PlanRowOut {
                        split_layer: name.clone(),
                        protocol: protocol.to_string(),
                        chunk_bytes: chunk,
                        n_packets: None,
                        predicted_latency_ms: None,
                        error: Some(format!(
                            "chunk {chunk} exceeds max payload {}",
                            profile.max_payload_bytes
                        )),
                    }
                } else {
                    let packets = packet_count(plan.boundary_bytes, chunk)
                        .map_err(|e| CmdError::Computation(e.to_string()))?;
                    let predicted = models
                        .get(&protocol)
                        .map(|m| m.transfer_ms(plan.boundary_bytes, packets));
                    PlanRowOut {
                        split_layer: name.clone(),
                        protocol: protocol.to_string(),
                        chunk_bytes: chunk,
                        n_packets: Some(packets),
                        predicted_latency_ms: predicted,
                        error: None,
                    }
                };
                rows.push(row);
            }
        }
    }

    if rows.iter().all(|r| r.error.is_some()) {
        let first = rows.first().and_then(|r| r.error.clone()).unwrap_or_default();
        return config_err(format!("no valid plan rows: {first}"));
    }

    let multi_split = split_names.len() > 1;
    let content = match args.format {
        Format::Json => format!(
            "{}\n",
            serde_json::to_string_pretty(&rows).expect("plan rows serialize")
        ),
        Format::Csv => {
            let mut out = String::new();
            if multi_split {
                out.push_str("split_layer,protocol,chunk_bytes,n_packets,predicted_latency_ms\n");
            } else {
                out.push_str("protocol,chunk_bytes,n_packets,predicted_latency_ms\n");
            }
            for r in &rows {
                let mut fields = Vec::new();
                if multi_split {
                    fields.push(r.split_layer.clone());
                }
                fields.push(r.protocol.clone());
                fields.push(r.chunk_bytes.to_string());
                fields.push(match (&r.n_packets, &r.error) {
                    (Some(n), _) => n.to_string(),
                    (None, Some(e)) => format!("error: {e}"),
                    _ => String::new(),
                });
                fields.push(r.predicted_latency_ms.map(fmt_ms).unwrap_or_default());
                out.push_str(&csv_line(&fields));
            }
            out
        }
        Format::Table => {
            let table_rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.split_layer.clone(),
                        r.protocol.clone(),
                        r.chunk_bytes.to_string(),
                        match (&r.n_packets, &r.error) {
                            (Some(n), _) => format!("{n} packets"),
                            (None, Some(e)) => format!("error: {e}"),
                            _ => String::new(),
                        },
                        r.predicted_latency_ms.map(fmt_ms).unwrap_or_else(|| "-".into()),
                    ]
                })
                .collect();
            text_table(
                &["split", "protocol", "chunk", "packets", "predicted_ms"],
                &table_rows,
            )
        }
    };
    write_or_print(args.out.as_ref(), &content)
}

// ── simulate ──────────────────────────────────────────────────────

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "builtin")]
    pub model: String,
    /// Layer to split after
    #[arg(long)]
    pub split: String,
    #[arg(long = "protocol", value_enum)]
    pub protocols: Vec<ProtocolArg>,
    /// Override the chunk size for every protocol
    #[arg(long)]
    pub chunk: Option<u32>,
    /// Use the reference testbed constants (link models and stage timings)
    #[arg(long)]
    pub paper_defaults: bool,
    #[arg(long = "link-model")]
    pub link_models: Vec<PathBuf>,
    /// Stage timing overrides (JSON), applied to every protocol
    #[arg(long)]
    pub stages: Option<PathBuf>,
    /// Rank by transfer latency alone instead of total round trip
    #[arg(long)]
    pub transfer_only: bool,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct StageOut {
    stage: String,
    device: Option<u8>,
    ms: f64,
}

#[derive(Debug, Serialize)]
struct SimulateRowOut {
    protocol: String,
    chunk_bytes: u32,
    transfer_ms: f64,
    total_rtt_ms: f64,
    stages: Vec<StageOut>,
}

#[derive(Debug, Serialize)]
struct SimulateOut {
    split_layer: String,
    boundary_bytes: u64,
    metric: String,
    rows: Vec<SimulateRowOut>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CmdError> {
    let graph = load_graph(&args.model)?;
    let plan: SplitPlan =
        split(&graph, &args.split).map_err(|e| CmdError::Config(e.to_string()))?;
    let models = resolve_link_models(args.paper_defaults, &args.link_models)?;
    if models.is_empty() {
        return config_err("no link models: pass --paper-defaults or --link-model <file>");
    }
    let stages_override: Option<StageTimings> = match &args.stages {
        Some(path) => {
            let json = std::fs::read_to_string(path)
                .map_err(|e| CmdError::Config(format!("cannot read {}: {e}", path.display())))?;
            Some(
                formats::stage_timings_from_json(&json)
                    .map_err(|e| CmdError::Config(e.to_string()))?,
            )
        }
        None => None,
    };

    let mut candidates = Vec::new();
    for protocol in selected_protocols(&args.protocols) {
        let Some(link) = models.get(&protocol) else {
            return config_err(format!("no link model for {protocol}"));
        };
        let stages = stages_override.unwrap_or_else(|| testbed::stage_timings(protocol));
        let profile = testbed::profile(protocol);
        let chunk_bytes = args.chunk.unwrap_or_else(|| testbed::reference_chunk(protocol));
        if chunk_bytes == 0
            || (profile.enforces_max_payload() && chunk_bytes > profile.max_payload_bytes)
        {
            return config_err(format!(
                "chunk {chunk_bytes} invalid for {protocol} (max payload {})",
                profile.max_payload_bytes
            ));
        }
        candidates.push(RttCandidate { profile, link: *link, stages, chunk_bytes });
    }

    let metric = if args.transfer_only { RankMetric::TransferOnly } else { RankMetric::TotalRtt };
    let ranked = splitwire_core::link::compare_protocols(&plan, &candidates, metric)
        .map_err(|e| CmdError::Computation(e.to_string()))?;

    let out_rows: Vec<SimulateRowOut> = ranked
        .iter()
        .map(|r| SimulateRowOut {
            protocol: r.protocol.to_string(),
            chunk_bytes: r.chunk_bytes,
            transfer_ms: r
                .breakdown
                .stage_ms(splitwire_core::link::RttStage::Transfer)
                .unwrap_or(0.0),
            total_rtt_ms: r.breakdown.total_ms(),
            stages: r
                .breakdown
                .entries
                .iter()
                .map(|(stage, ms)| StageOut {
                    stage: stage.label().to_string(),
                    device: stage.device(),
                    ms: *ms,
                })
                .collect(),
        })
        .collect();
    let doc = SimulateOut {
        split_layer: plan.split_layer.clone(),
        boundary_bytes: plan.boundary_bytes,
        metric: if args.transfer_only { "transfer_only".into() } else { "total_rtt".into() },
        rows: out_rows,
    };

    let content = match args.format {
        Format::Json => {
            format!("{}\n", serde_json::to_string_pretty(&doc).expect("simulate doc serializes"))
        }
        Format::Csv => {
            let mut out = String::from("rank,protocol,chunk_bytes,transfer_ms,total_rtt_ms\n");
            for (i, r) in doc.rows.iter().enumerate() {
                out.push_str(&csv_line(&[
                    (i + 1).to_string(),
                    r.protocol.clone(),
                    r.chunk_bytes.to_string(),
                    fmt_ms(r.transfer_ms),
                    fmt_ms(r.total_rtt_ms),
                ]));
            }
            out
        }
        Format::Table => {
            let mut sections = String::new();
            sections.push_str(&format!(
                "split {} ({} boundary bytes), ranked by {}\n\n",
                doc.split_layer, doc.boundary_bytes, doc.metric
            ));
            let rows: Vec<Vec<String>> = doc
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    vec![
                        (i + 1).to_string(),
                        r.protocol.clone(),
                        r.chunk_bytes.to_string(),
                        fmt_ms(r.transfer_ms),
                        fmt_ms(r.total_rtt_ms),
                    ]
                })
                .collect();
            sections.push_str(&text_table(
                &["rank", "protocol", "chunk", "transfer_ms", "total_rtt_ms"],
                &rows,
            ));
            for r in &doc.rows {
                sections.push_str(&format!("\n{} breakdown:\n", r.protocol));
                let rows: Vec<Vec<String>> = r
                    .stages
                    .iter()
                    .map(|s| {
                        vec![
                            s.stage.clone(),
                            s.device.map(|d| format!("device {d}")).unwrap_or_default(),
                            fmt_ms(s.ms),
                        ]
                    })
                    .collect();
                sections.push_str(&text_table(&["stage", "device", "ms"], &rows));
            }
            sections
        }
    };
    write_or_print(args.out.as_ref(), &content)
}

// ── calibrate ─────────────────────────────────────────────────────

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Measurement CSV: protocol,chunk_bytes,payload_bytes,latency_ms
    #[arg(long)]
    pub csv: PathBuf,
    /// Protocol to fit (required when the CSV holds several)
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    /// Packet count above which rows are treated as stalled
    /// (default: 100 for TCP, none otherwise)
    #[arg(long)]
    pub stall_threshold: Option<u64>,
    /// Setup cost carried into the written model
    #[arg(long, default_value_t = 0.0)]
    pub setup_ms: f64,
    /// Write the fitted model JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Serialize)]
struct ResidualOut {
    payload_bytes: u64,
    chunk_bytes: u32,
    packets: u64,
    observed_ms: f64,
    predicted_ms: f64,
    rel_error: f64,
    stalled: bool,
}

#[derive(Debug, Serialize)]
struct CalibrateOut {
    protocol: String,
    per_packet_ms: f64,
    per_byte_ms: f64,
    setup_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    stall: Option<formats::StallDoc>,
    max_rel_error: f64,
    rms_rel_error: f64,
    residuals: Vec<ResidualOut>,
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), CmdError> {
    let file = std::fs::File::open(&args.csv)
        .map_err(|e| CmdError::Config(format!("cannot read {}: {e}", args.csv.display())))?;
    let rows = formats::measurements_from_csv(file)
        .map_err(|e| CmdError::Config(e.to_string()))?;
    if rows.is_empty() {
        return config_err("measurement CSV has no rows");
    }

    let protocol = match args.protocol {
        Some(p) => Protocol::from(p),
        None => {
            let mut present: Vec<Protocol> = rows.iter().map(|r| r.protocol).collect();
            present.sort();
            present.dedup();
            match present.as_slice() {
                [one] => *one,
                many => {
                    return config_err(format!(
                        "CSV holds {} protocols; choose one with --protocol",
                        many.len()
                    ))
                }
            }
        }
    };
    let measurements: Vec<_> = rows
        .iter()
        .filter(|r| r.protocol == protocol)
        .map(|r| r.measurement)
        .collect();
    if measurements.is_empty() {
        return config_err(format!("no rows for {protocol} in the CSV"));
    }

    let stall_threshold = args.stall_threshold.or_else(|| {
        (protocol == Protocol::Tcp).then_some(testbed::TCP_STALL_THRESHOLD_PACKETS)
    });
    let calibration = calibrate(
        &measurements,
        CalibrateOptions { stall_threshold_packets: stall_threshold },
    )
    .map_err(|e| CmdError::Computation(e.to_string()))?;
    let mut model = calibration.model;
    model.setup_ms = args.setup_ms;

    if let Some(path) = &args.out {
        std::fs::write(path, formats::link_model_to_json(protocol, &model))
            .map_err(|e| CmdError::Config(format!("cannot write {}: {e}", path.display())))?;
    }

    let doc = CalibrateOut {
        protocol: protocol.to_string(),
        per_packet_ms: model.per_packet_ms,
        per_byte_ms: model.per_byte_ms,
        setup_ms: model.setup_ms,
        stall: model.stall.map(|s| formats::StallDoc {
            threshold_packets: s.threshold_packets,
            factor: s.factor,
        }),
        max_rel_error: calibration.max_rel_error,
        rms_rel_error: calibration.rms_rel_error,
        residuals: calibration
            .residuals
            .iter()
            .map(|r| ResidualOut {
                payload_bytes: r.payload_bytes,
                chunk_bytes: r.chunk_bytes,
                packets: r.packets,
                observed_ms: r.observed_ms,
                predicted_ms: r.predicted_ms,
                rel_error: r.rel_error,
                stalled: r.stalled,
            })
            .collect(),
    };

    let content = match args.format {
        Format::Json => {
            format!("{}\n", serde_json::to_string_pretty(&doc).expect("calibration serializes"))
        }
        Format::Csv => {
            let mut out =
                String::from("payload_bytes,chunk_bytes,packets,observed_ms,predicted_ms,rel_error,stalled\n");
            for r in &doc.residuals {
                out.push_str(&csv_line(&[
                    r.payload_bytes.to_string(),
                    r.chunk_bytes.to_string(),
                    r.packets.to_string(),
                    fmt_ms(r.observed_ms),
                    fmt_ms(r.predicted_ms),
                    format!("{:.6}", r.rel_error),
                    r.stalled.to_string(),
                ]));
            }
            out
        }
        Format::Table => {
            let mut out = format!(
                "{}: per_packet {:.4} ms, per_byte {:.6} ms, setup {:.3} ms",
                doc.protocol, doc.per_packet_ms, doc.per_byte_ms, doc.setup_ms
            );
            if let Some(s) = &doc.stall {
                out.push_str(&format!(
                    ", stall x{:.4} beyond {} packets",
                    s.factor, s.threshold_packets
                ));
            }
            out.push_str(&format!(
                "\nfit residuals: max {:.4}% rms {:.4}%\n\n",
                doc.max_rel_error * 100.0,
                doc.rms_rel_error * 100.0
            ));
            let rows: Vec<Vec<String>> = doc
                .residuals
                .iter()
                .map(|r| {
                    vec![
                        r.payload_bytes.to_string(),
                        r.chunk_bytes.to_string(),
                        r.packets.to_string(),
                        fmt_ms(r.observed_ms),
                        fmt_ms(r.predicted_ms),
                        format!("{:.4}%", r.rel_error * 100.0),
                        if r.stalled { "stalled".into() } else { String::new() },
                    ]
                })
                .collect();
            out.push_str(&text_table(
                &["payload", "chunk", "packets", "observed_ms", "predicted_ms", "rel_err", ""],
                &rows,
            ));
            out
        }
    };
    write_or_print(None, &content)
}

// ── run ───────────────────────────────────────────────────────────

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run both node roles in this process
    #[arg(long, conflicts_with = "role")]
    pub both: bool,
    /// Run a single node role against a remote peer
    #[arg(long, value_enum)]
    pub role: Option<RoleArg>,
    /// Run the full model locally with no transport, for comparison
    #[arg(long, conflicts_with_all = ["both", "role"])]
    pub monolithic: bool,
    #[arg(long, value_enum, default_value = "inmem")]
    pub transport: TransportArg,
    /// Radio profile for the in-memory transport (esp-now or ble):
    /// constrains payloads and attaches simulated timing
    #[arg(long, value_enum)]
    pub profile: Option<ProtocolArg>,
    /// Address to listen on (server) or connect to (client)
    #[arg(long, default_value = "127.0.0.1:7380")]
    pub addr: String,
    #[arg(long)]
    pub chunk: Option<u32>,
    /// Toy model layer widths, input first
    #[arg(long, default_value = "16,5488,10")]
    pub dims: String,
    #[arg(long, default_value_t = 1)]
    pub split_index: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 42)]
    pub model_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub input_seed: u64,
    #[arg(long, value_enum, default_value = "none")]
    pub reliability: ReliabilityArg,
    /// Injected frame loss rate on the sending node
    #[arg(long, default_value_t = 0.0)]
    pub loss: f64,
    /// Injected duplication rate on the sending node
    #[arg(long, default_value_t = 0.0)]
    pub dup: f64,
    /// Injected reorder rate on the sending node
    #[arg(long, default_value_t = 0.0)]
    pub reorder: f64,
    #[arg(long, default_value_t = 7)]
    pub fault_seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub timeout_ms: u64,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Write the trace CSV here as well
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct PredictionOut {
    class_id: u16,
    label: String,
    confidence: f32,
}

#[derive(Debug, Serialize)]
struct RunOut {
    predictions: Vec<PredictionOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
    rtt_ms: f64,
    boundary_bytes: u64,
    frames_sent: u64,
    retransmissions: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    simulated_transfer_ms: Option<f64>,
    trace: Vec<StageOut>,
}

fn parse_dims(s: &str) -> Result<Vec<usize>, CmdError> {
    let dims: Result<Vec<usize>, _> = s.split(',').map(|d| d.trim().parse()).collect();
    match dims {
        Ok(dims) if dims.len() >= 2 && dims.iter().all(|&d| d > 0) => Ok(dims),
        _ => config_err(format!("bad --dims {s:?}: need 2+ comma-separated positive widths")),
    }
}

fn session_config(args: &RunArgs) -> Result<SessionConfig, CmdError> {
    let dims = parse_dims(&args.dims)?;
    if args.split_index == 0 || args.split_index >= dims.len() - 1 {
        return config_err(format!(
            "--split-index {} outside 1..{}",
            args.split_index,
            dims.len() - 1
        ));
    }
    let default_chunk = match (args.transport, args.profile) {
        (_, Some(p)) => testbed::reference_chunk(p.into()),
        (TransportArg::Udp, None) => 1460,
        (TransportArg::Tcp, None) => 1460,
        (TransportArg::Inmem, None) => 1460,
    };
    let chunk_bytes = args.chunk.unwrap_or(default_chunk);
    if let Some(profile) = args.profile {
        let max = testbed::profile(profile.into()).max_payload_bytes;
        if chunk_bytes > max {
            return config_err(format!("chunk {chunk_bytes} exceeds {max} for the profile"));
        }
    }
    Ok(SessionConfig {
        dims,
        model_seed: args.model_seed,
        input_seed: args.input_seed,
        split_index: args.split_index,
        chunk_bytes,
        top_k: args.k,
        reliability: args.reliability.into(),
        tensor_id: 1,
        feedback_timeout: Duration::from_millis(args.timeout_ms),
    })
}

fn predictions_out(predictions: &[Prediction]) -> Vec<PredictionOut> {
    predictions
        .iter()
        .map(|p| PredictionOut {
            class_id: p.class_id,
            label: p.label.clone(),
            confidence: p.confidence,
        })
        .collect()
}

fn render_run(
    args: &RunArgs,
    outcome: &crate::session::SessionOutcome,
) -> Result<(), CmdError> {
    let doc = RunOut {
        predictions: predictions_out(&outcome.predictions),
        failure: outcome.trace.failure.clone(),
        rtt_ms: outcome.trace.rtt_ms,
        boundary_bytes: outcome.trace.boundary_bytes,
        frames_sent: outcome.trace.frames_sent,
        retransmissions: outcome.trace.retransmissions,
        simulated_transfer_ms: outcome.trace.simulated_transfer_ms,
        trace: outcome
            .trace
            .entries
            .iter()
            .map(|e| StageOut { stage: e.stage.clone(), device: e.device, ms: e.ms })
            .collect(),
    };
    let content = match args.format {
        Format::Json => {
            format!("{}\n", serde_json::to_string_pretty(&doc).expect("run doc serializes"))
        }
        Format::Csv | Format::Table => {
            let mut out = String::new();
            if args.format == Format::Table {
                let rows: Vec<Vec<String>> = outcome
                    .predictions
                    .iter()
                    .map(|p| {
                        vec![
                            p.class_id.to_string(),
                            p.label.clone(),
                            format!("{:.4}", p.confidence),
                        ]
                    })
                    .collect();
                out.push_str(&text_table(&["class", "label", "confidence"], &rows));
                out.push('\n');
            } else {
                out.push_str("class,label,confidence\n");
                for p in &outcome.predictions {
                    out.push_str(&csv_line(&[
                        p.class_id.to_string(),
                        p.label.clone(),
                        format!("{:.4}", p.confidence),
                    ]));
                }
                out.push('\n');
            }
            out.push_str(&trace_to_csv(&outcome.trace));
            if let Some(failure) = &outcome.trace.failure {
                out.push_str(&format!("failure,,{failure}\n"));
            }
            out
        }
    };
    print!("{content}");
    if let Some(path) = &args.trace_out {
        std::fs::write(path, trace_to_csv(&outcome.trace))
            .map_err(|e| CmdError::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn wrap_faults(
    link: impl FrameLink + 'static,
    args: &RunArgs,
) -> Box<dyn FrameLink + 'static> {
    let cfg = FaultConfig {
        loss: args.loss,
        duplicate: args.dup,
        reorder: args.reorder,
        seed: args.fault_seed,
    };
    if cfg.is_quiet() {
        Box::new(link)
    } else {
        Box::new(FaultyLink::new(link, cfg))
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CmdError> {
    let cfg = session_config(args)?;

    if args.monolithic {
        let predictions =
            monolithic_predictions(&cfg).map_err(|e| CmdError::Computation(e.to_string()))?;
        let outcome = crate::session::SessionOutcome {
            predictions,
            trace: Default::default(),
        };
        return render_run(args, &outcome);
    }

    let inmem_config = || InMemoryConfig {
        max_payload: args
            .profile
            .map(|p| testbed::profile(p.into()).max_payload_bytes as usize)
            .unwrap_or(crate::transport::DATAGRAM_MAX_PAYLOAD),
        link_model: args.profile.map(|p| testbed::link_model(p.into())),
    };

    if args.both {
        let setup_started = Instant::now();
        let outcome = match args.transport {
            TransportArg::Inmem => {
                let (a, b) = in_memory_pair(inmem_config());
                let setup_ms = setup_started.elapsed().as_secs_f64() * 1e3;
                run_both(wrap_faults(a, args), Box::new(b), &cfg, setup_ms)
            }
            TransportArg::Udp => {
                let (a, b) =
                    datagram_pair().map_err(|e| CmdError::Transport(e.to_string()))?;
                let setup_ms = setup_started.elapsed().as_secs_f64() * 1e3;
                run_both(wrap_faults(a, args), Box::new(b), &cfg, setup_ms)
            }
            TransportArg::Tcp => {
                let (a, b) = stream_pair().map_err(|e| CmdError::Transport(e.to_string()))?;
                let setup_ms = setup_started.elapsed().as_secs_f64() * 1e3;
                run_both(wrap_faults(a, args), Box::new(b), &cfg, setup_ms)
            }
        }
        .map_err(|e| CmdError::Transport(e.to_string()))?;
        render_run(args, &outcome)?;
        if outcome.trace.failure.is_some() {
            return Err(CmdError::Transport(
                outcome.trace.failure.clone().unwrap_or_default(),
            ));
        }
        return Ok(());
    }

    match args.role {
        Some(RoleArg::Server) => {
            let report = match args.transport {
                TransportArg::Udp => {
                    let mut link = DatagramLink::bind(&args.addr)
                        .map_err(|e| CmdError::Transport(e.to_string()))?;
                    run_node2(&mut link, &cfg)
                }
                TransportArg::Tcp => {
                    let mut link = StreamLink::accept_one(&args.addr)
                        .map_err(|e| CmdError::Transport(e.to_string()))?;
                    run_node2(&mut link, &cfg)
                }
                TransportArg::Inmem => {
                    return config_err("--transport inmem needs --both (single process)")
                }
            }
            .map_err(|e| CmdError::Transport(e.to_string()))?;
            let outcome = crate::session::SessionOutcome {
                predictions: report.predictions,
                trace: crate::session::SessionTrace {
                    entries: report.entries,
                    ..Default::default()
                },
            };
            render_run(args, &outcome)
        }
        Some(RoleArg::Client) => {
            let setup_started = Instant::now();
            let outcome = match args.transport {
                TransportArg::Udp => {
                    let link = DatagramLink::connect(&args.addr)
                        .map_err(|e| CmdError::Transport(e.to_string()))?;
                    let setup_ms = setup_started.elapsed().as_secs_f64() * 1e3;
                    let mut link = wrap_faults(link, args);
                    run_node1(&mut link, &cfg, setup_ms)
                }
                TransportArg::Tcp => {
                    let link = StreamLink::connect(&args.addr)
                        .map_err(|e| CmdError::Transport(e.to_string()))?;
                    let setup_ms = setup_started.elapsed().as_secs_f64() * 1e3;
                    let mut link = wrap_faults(link, args);
                    run_node1(&mut link, &cfg, setup_ms)
                }
                TransportArg::Inmem => {
                    return config_err("--transport inmem needs --both (single process)")
                }
            }
            .map_err(|e| CmdError::Transport(e.to_string()))?;
            render_run(args, &outcome)?;
            if outcome.trace.failure.is_some() {
                return Err(CmdError::Transport(
                    outcome.trace.failure.clone().unwrap_or_default(),
                ));
            }
            Ok(())
        }
        None => config_err("pass --both, --role, or --monolithic"),
    }
}

// ── ota ───────────────────────────────────────────────────────────

#[derive(Debug, Args)]
pub struct OtaArgs {
    /// Version the device starts from
    #[arg(long, default_value = "1.0.0")]
    pub current_version: String,
    /// Version of the offered image
    #[arg(long, default_value = "1.1.0")]
    pub version: String,
    /// Firmware blob to package (default: a deterministic generated blob)
    #[arg(long)]
    pub blob: Option<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    pub blob_size: usize,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "inmem")]
    pub transport: TransportArg,
    #[arg(long, default_value_t = 250)]
    pub chunk: u32,
    /// Flip one bit of the image in transit
    #[arg(long)]
    pub inject_corruption: bool,
    /// Force the post-installation validation to fail
    #[arg(long)]
    pub inject_postvalidate_failure: bool,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Serialize)]
struct OtaOut {
    final_state: String,
    active_version: String,
    records: Vec<String>,
}

pub fn cmd_ota(args: &OtaArgs) -> Result<(), CmdError> {
    let current = Version::parse(&args.current_version)
        .ok_or_else(|| CmdError::Config(format!("bad version {:?}", args.current_version)))?;
    let offered = Version::parse(&args.version)
        .ok_or_else(|| CmdError::Config(format!("bad version {:?}", args.version)))?;

    let blob = match &args.blob {
        Some(path) => std::fs::read(path)
            .map_err(|e| CmdError::Config(format!("cannot read {}: {e}", path.display())))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..args.blob_size.max(1)).map(|_| rng.random()).collect()
        }
    };
    let image = package(blob, offered, ImageMeta::default())
        .map_err(|e| CmdError::Config(e.to_string()))?;
    let mut container = image.encode_container();
    if args.inject_corruption {
        let last = container.len() - 1;
        container[last] ^= 0x01;
    }

    let chunk = args.chunk;
    let serve = move |mut link: Box<dyn FrameLink>| {
        std::thread::spawn(move || ota_runner::serve_image(&mut link, &container, chunk))
    };
    let mut device = Device::new(current);
    let validate_ok = !args.inject_postvalidate_failure;
    let timeout = Duration::from_secs(15);

    let server = match args.transport {
        TransportArg::Inmem => {
            let (a, mut b) = in_memory_pair(InMemoryConfig {
                max_payload: chunk.max(250) as usize,
                link_model: None,
            });
            let handle = serve(Box::new(a));
            ota_runner::receive_and_apply(&mut b, &mut device, timeout, |_| validate_ok)
                .map_err(|e| CmdError::Transport(e.to_string()))?;
            handle
        }
        TransportArg::Udp => {
            let (a, mut b) = datagram_pair().map_err(|e| CmdError::Transport(e.to_string()))?;
            let handle = serve(Box::new(a));
            ota_runner::receive_and_apply(&mut b, &mut device, timeout, |_| validate_ok)
                .map_err(|e| CmdError::Transport(e.to_string()))?;
            handle
        }
        TransportArg::Tcp => {
            let (a, mut b) = stream_pair().map_err(|e| CmdError::Transport(e.to_string()))?;
            let handle = serve(Box::new(a));
            ota_runner::receive_and_apply(&mut b, &mut device, timeout, |_| validate_ok)
                .map_err(|e| CmdError::Transport(e.to_string()))?;
            handle
        }
    };
    server
        .join()
        .expect("server thread must not panic")
        .map_err(|e| CmdError::Transport(e.to_string()))?;

    let doc = OtaOut {
        final_state: device.state().to_string(),
        active_version: device.active_version().to_string(),
        records: device.audit_log().iter().map(|r| r.to_string()).collect(),
    };
    let content = match args.format {
        Format::Json => {
            format!("{}\n", serde_json::to_string_pretty(&doc).expect("ota doc serializes"))
        }
        Format::Csv | Format::Table => {
            let mut out = String::new();
            for record in &doc.records {
                out.push_str(record);
                out.push('\n');
            }
            out.push_str(&format!(
                "final state: {} (active version {})\n",
                doc.final_state, doc.active_version
            ));
            out
        }
    };
    print!("{content}");

    // sanity: the demo must end in a terminal state
    debug_assert!(matches!(device.state(), State::Active | State::RolledBack));
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<(), CmdError> {
    match &cli.cmd {
        Cmd::Plan(args) => cmd_plan(args),
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Calibrate(args) => cmd_calibrate(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Ota(args) => cmd_ota(args),
    }
}
