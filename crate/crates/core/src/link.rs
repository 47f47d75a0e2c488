//! Deterministic timing models for the four supported link types.
//!
//! A [`LinkModel`] predicts transfer latency as a linear function of packet
//! count and payload size, optionally inflated by a stall factor once a
//! transfer exceeds a packet threshold (observed on TCP when large transfers
//! overrun the node's socket buffers). Models are fitted from measured
//! (payload, chunk, latency) rows by [`calibrate`] and composed into full
//! round-trip estimates by [`estimate_rtt`].

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::planner::{packet_count, SplitPlan};

/// Weighted-column cosine above which the packet and byte regressors are
/// treated as proportional and the fit collapses to the per-packet term.
/// Single-chunk measurement sets sit at ~0.9999+; mixed-chunk sets fall
/// well below.
pub const COLLINEARITY_COSINE: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Protocol {
    #[cfg_attr(feature = "serde", serde(rename = "ESP-NOW", alias = "esp-now", alias = "espnow"))]
    EspNow,
    #[cfg_attr(feature = "serde", serde(rename = "UDP", alias = "udp"))]
    Udp,
    #[cfg_attr(feature = "serde", serde(rename = "TCP", alias = "tcp"))]
    Tcp,
    #[cfg_attr(feature = "serde", serde(rename = "BLE", alias = "ble"))]
    Ble,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::EspNow, Protocol::Udp, Protocol::Tcp, Protocol::Ble];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "esp-now" | "espnow" | "esp_now" => Some(Self::EspNow),
            "udp" => Some(Self::Udp),
            "tcp" => Some(Self::Tcp),
            "ble" => Some(Self::Ble),
            _ => None,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EspNow => write!(f, "ESP-NOW"),
            Self::Udp => write!(f, "UDP"),
            Self::Tcp => write!(f, "TCP"),
            Self::Ble => write!(f, "BLE"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ConnectionType {
    PeerToPeer,
    Connectionless,
    ConnectionOrientedStream,
    ConnectionOrientedGatt,
}

/// Static characteristics of one link type.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProtocolProfile {
    pub protocol: Protocol,
    pub max_payload_bytes: u32,
    pub connection_type: ConnectionType,
    /// Free-form note on how many peers the link supports.
    pub max_peers: String,
}

impl ProtocolProfile {
    /// Whether a chunk larger than `max_payload_bytes` is invalid on this
    /// link. A connection-oriented stream segments internally, so any
    /// application chunk size is legal there; datagram-like links drop
    /// oversized frames outright.
    pub fn enforces_max_payload(&self) -> bool {
        self.connection_type != ConnectionType::ConnectionOrientedStream
    }
}

/// Stall behaviour for transfers above a packet-count threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StallModel {
    pub threshold_packets: u64,
    /// Multiplier (>= 1) applied to the linear latency once stalled.
    pub factor: f64,
}

/// Linear latency model: `setup + n * per_packet + bytes * per_byte`,
/// with the transfer part inflated by the stall factor when applicable.
/// Setup is charged once per session, not per transfer.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinkModel {
    pub setup_ms: f64,
    pub per_packet_ms: f64,
    pub per_byte_ms: f64,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub stall: Option<StallModel>,
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), LinkError> {
        let ok = self.setup_ms.is_finite()
            && self.setup_ms >= 0.0
            && self.per_packet_ms.is_finite()
            && self.per_packet_ms >= 0.0
            && self.per_byte_ms.is_finite()
            && self.per_byte_ms >= 0.0
            && self.stall.is_none_or(|s| s.factor.is_finite() && s.factor >= 1.0);
        if ok {
            Ok(())
        } else {
            Err(LinkError::InvalidModel)
        }
    }

    /// Transfer latency for a payload already split into `packets` chunks.
    pub fn transfer_ms(&self, bytes: u64, packets: u64) -> f64 {
        let mut ms = packets as f64 * self.per_packet_ms + bytes as f64 * self.per_byte_ms;
        if let Some(stall) = self.stall {
            if packets > stall.threshold_packets {
                ms *= stall.factor;
            }
        }
        ms
    }
}

/// Per-stage processing constants composing a round trip. Two-element arrays
/// are (sending device, classifying device).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageTimings {
    pub model_load_ms: [f64; 2],
    pub input_load_ms: f64,
    pub tensor_alloc_ms: [f64; 2],
    pub inference_ms: [f64; 2],
    pub buffering_ms: f64,
    pub feedback_ms: f64,
}

impl StageTimings {
    pub const ZERO: StageTimings = StageTimings {
        model_load_ms: [0.0; 2],
        input_load_ms: 0.0,
        tensor_alloc_ms: [0.0; 2],
        inference_ms: [0.0; 2],
        buffering_ms: 0.0,
        feedback_ms: 0.0,
    };

    pub fn validate(&self) -> Result<(), LinkError> {
        let all = [
            self.model_load_ms[0],
            self.model_load_ms[1],
            self.input_load_ms,
            self.tensor_alloc_ms[0],
            self.tensor_alloc_ms[1],
            self.inference_ms[0],
            self.inference_ms[1],
            self.buffering_ms,
            self.feedback_ms,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(LinkError::InvalidModel)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkError {
    ChunkExceedsMax { chunk: u32, max_payload: u32 },
    ZeroChunk,
    NotEnoughMeasurements { usable: usize },
    DegenerateFit,
    InvalidMeasurement { reason: String },
    InvalidModel,
}

impl fmt::Display for LinkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ChunkExceedsMax { chunk, max_payload } => {
                write!(f, "chunk {chunk} exceeds max payload {max_payload}")
            }
            Self::ZeroChunk => write!(f, "chunk size must be at least 1 byte"),
            Self::NotEnoughMeasurements { usable } => {
                write!(f, "need at least 2 usable measurements, have {usable}")
            }
            Self::DegenerateFit => {
                write!(f, "degenerate design matrix: all rows have the same packet count")
            }
            Self::InvalidMeasurement { reason } => write!(f, "invalid measurement: {reason}"),
            Self::InvalidModel => write!(f, "model coefficients must be finite and nonnegative"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LinkError {}

/// Predicted latency for transferring `bytes` in `chunk_bytes` chunks.
pub fn simulate_transfer(
    bytes: u64,
    chunk_bytes: u32,
    profile: &ProtocolProfile,
    model: &LinkModel,
) -> Result<f64, LinkError> {
    if chunk_bytes == 0 {
        return Err(LinkError::ZeroChunk);
    }
    if profile.enforces_max_payload() && chunk_bytes > profile.max_payload_bytes {
        return Err(LinkError::ChunkExceedsMax {
            chunk: chunk_bytes,
            max_payload: profile.max_payload_bytes,
        });
    }
    let n = packet_count(bytes, chunk_bytes).map_err(|_| LinkError::ZeroChunk)?;
    Ok(model.transfer_ms(bytes, n))
}

/// One measured transfer.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Measurement {
    pub payload_bytes: u64,
    pub chunk_bytes: u32,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CalibrateOptions {
    /// Rows above this packet count are excluded from the linear fit and
    /// instead drive the stall-factor estimate.
    pub stall_threshold_packets: Option<u64>,
}

/// Per-row fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub payload_bytes: u64,
    pub chunk_bytes: u32,
    pub packets: u64,
    pub observed_ms: f64,
    pub predicted_ms: f64,
    pub rel_error: f64,
    pub stalled: bool,
}

/// A fitted model plus the residuals it leaves on its own training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub model: LinkModel,
    pub residuals: Vec<Residual>,
    pub max_rel_error: f64,
    pub rms_rel_error: f64,
}

/// Fit (per_packet_ms, per_byte_ms) to measured rows by least squares on
/// relative residuals (each row weighted by 1/observed so millisecond-scale
/// and second-scale rows count equally).
///
/// Packet count and byte count are proportional whenever every row uses the
/// same chunk size, which makes the two-coefficient system ill-conditioned;
/// in that case the fit collapses to the per-packet term alone. A
/// two-coefficient solution with a negative coefficient falls back to the
/// better of the two single-coefficient fits.
pub fn calibrate(
    measurements: &[Measurement],
    options: CalibrateOptions,
) -> Result<Calibration, LinkError> {
    let mut rows: Vec<(u64, u64, f64, bool)> = Vec::with_capacity(measurements.len());
    for m in measurements {
        if m.chunk_bytes == 0 {
            return Err(LinkError::ZeroChunk);
        }
        if !(m.latency_ms.is_finite() && m.latency_ms > 0.0) {
            return Err(LinkError::InvalidMeasurement {
                reason: "latency must be finite and > 0".to_string(),
            });
        }
        let n = packet_count(m.payload_bytes, m.chunk_bytes).map_err(|_| LinkError::ZeroChunk)?;
        if n == 0 {
            return Err(LinkError::InvalidMeasurement {
                reason: "payload must be at least 1 byte".to_string(),
            });
        }
        let stalled = options.stall_threshold_packets.is_some_and(|t| n > t);
        rows.push((n, m.payload_bytes, m.latency_ms, stalled));
    }

    let fit_rows: Vec<&(u64, u64, f64, bool)> = rows.iter().filter(|r| !r.3).collect();
    if fit_rows.len() < 2 {
        return Err(LinkError::NotEnoughMeasurements { usable: fit_rows.len() });
    }
    if fit_rows.iter().all(|r| r.0 == fit_rows[0].0) {
        return Err(LinkError::DegenerateFit);
    }

    // weighted regressors: u = packets/latency, v = bytes/latency, target 1
    let (mut suu, mut svv, mut suv, mut su, mut sv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &&(n, y, t, _) in &fit_rows {
        let u = n as f64 / t;
        let v = y as f64 / t;
        suu += u * u;
        svv += v * v;
        suv += u * v;
        su += u;
        sv += v;
    }

    let per_packet_only = su / suu;
    let per_byte_only = sv / svv;
    let sse = |p: f64, b: f64| -> f64 {
        fit_rows
            .iter()
            .map(|&&(n, y, t, _)| {
                let r = (n as f64 * p + y as f64 * b - t) / t;
                r * r
            })
            .sum()
    };

    let cosine = suv / math::sqrt(suu * svv);
    let det = suu * svv - suv * suv;
    let (per_packet_ms, per_byte_ms) = if cosine > COLLINEARITY_COSINE || det <= 0.0 {
        (per_packet_only, 0.0)
    } else {
        let p = (su * svv - sv * suv) / det;
        let b = (sv * suu - su * suv) / det;
        if p >= 0.0 && b >= 0.0 {
            (p, b)
        } else if sse(per_packet_only, 0.0) <= sse(0.0, per_byte_only) {
            (per_packet_only, 0.0)
        } else {
            (0.0, per_byte_only)
        }
    };

    // stalled rows estimate the inflation over the linear prediction
    let stall = options.stall_threshold_packets.and_then(|threshold| {
        let excluded: Vec<&(u64, u64, f64, bool)> = rows.iter().filter(|r| r.3).collect();
        if excluded.is_empty() {
            return None;
        }
        let mean_ratio = excluded
            .iter()
            .map(|&&(n, y, t, _)| t / (n as f64 * per_packet_ms + y as f64 * per_byte_ms))
            .sum::<f64>()
            / excluded.len() as f64;
        Some(StallModel { threshold_packets: threshold, factor: mean_ratio.max(1.0) })
    });

    let model = LinkModel { setup_ms: 0.0, per_packet_ms, per_byte_ms, stall };
    model.validate()?;

    let mut residuals = Vec::with_capacity(rows.len());
    let (mut max_rel, mut sum_sq) = (0.0f64, 0.0f64);
    for (m, &(n, _, t, stalled)) in measurements.iter().zip(&rows) {
        let predicted = model.transfer_ms(m.payload_bytes, n);
        let rel = math::abs(predicted - t) / t;
        if !stalled {
            max_rel = max_rel.max(rel);
            sum_sq += rel * rel;
        }
        residuals.push(Residual {
            payload_bytes: m.payload_bytes,
            chunk_bytes: m.chunk_bytes,
            packets: n,
            observed_ms: t,
            predicted_ms: predicted,
            rel_error: rel,
            stalled,
        });
    }
    let rms_rel_error = math::sqrt(sum_sq / fit_rows.len() as f64);

    Ok(Calibration { model, residuals, max_rel_error: max_rel, rms_rel_error })
}

/// Stages of the round trip, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RttStage {
    ProtocolSetup,
    ModelLoad1,
    ModelLoad2,
    InputLoad,
    TensorAlloc1,
    Inference1,
    Buffering,
    Transfer,
    TensorAlloc2,
    Inference2,
    Feedback,
}

impl RttStage {
    /// Row label in reports; mirrors the stage names used in the testbed
    /// benchmarks.
    pub fn label(&self) -> &'static str {
        match self {
            Self::ProtocolSetup => "Protocol setup",
            Self::ModelLoad1 | Self::ModelLoad2 => "Model loading",
            Self::InputLoad => "Input loading",
            Self::TensorAlloc1 | Self::TensorAlloc2 => "Tensors allocation",
            Self::Inference1 | Self::Inference2 => "Inference",
            Self::Buffering => "Intermediate activations buffering",
            Self::Transfer => "Transmission",
            Self::Feedback => "Feedback delay",
        }
    }

    /// Which device performs the stage (1 = sender, 2 = classifier), when
    /// the stage belongs to one device.
    pub fn device(&self) -> Option<u8> {
        match self {
            Self::ModelLoad1 | Self::InputLoad | Self::TensorAlloc1 | Self::Inference1
            | Self::Buffering => Some(1),
            Self::ModelLoad2 | Self::TensorAlloc2 | Self::Inference2 => Some(2),
            Self::ProtocolSetup | Self::Transfer | Self::Feedback => None,
        }
    }
}

impl fmt::Display for RttStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.device() {
            Some(d) => write!(f, "{} (device {d})", self.label()),
            None => write!(f, "{}", self.label()),
        }
    }
}

/// Ordered per-stage latency estimate whose total is exactly the sum of its
/// entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RttBreakdown {
    pub entries: Vec<(RttStage, f64)>,
}

impl RttBreakdown {
    pub fn total_ms(&self) -> f64 {
        self.entries.iter().map(|(_, ms)| ms).sum()
    }

    pub fn stage_ms(&self, stage: RttStage) -> Option<f64> {
        self.entries.iter().find(|(s, _)| *s == stage).map(|(_, ms)| *ms)
    }
}

/// Compose a full round-trip estimate for a split plan over one link.
pub fn estimate_rtt(
    plan: &SplitPlan,
    profile: &ProtocolProfile,
    link: &LinkModel,
    stages: &StageTimings,
    chunk_bytes: u32,
) -> Result<RttBreakdown, LinkError> {
    link.validate()?;
    stages.validate()?;
    let transfer = simulate_transfer(plan.boundary_bytes, chunk_bytes, profile, link)?;
    let entries = alloc::vec![
        (RttStage::ProtocolSetup, link.setup_ms),
        (RttStage::ModelLoad1, stages.model_load_ms[0]),
        (RttStage::ModelLoad2, stages.model_load_ms[1]),
        (RttStage::InputLoad, stages.input_load_ms),
        (RttStage::TensorAlloc1, stages.tensor_alloc_ms[0]),
        (RttStage::Inference1, stages.inference_ms[0]),
        (RttStage::Buffering, stages.buffering_ms),
        (RttStage::Transfer, transfer),
        (RttStage::TensorAlloc2, stages.tensor_alloc_ms[1]),
        (RttStage::Inference2, stages.inference_ms[1]),
        (RttStage::Feedback, stages.feedback_ms),
    ];
    Ok(RttBreakdown { entries })
}

/// What to rank protocols by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMetric {
    TotalRtt,
    TransferOnly,
}

/// One protocol candidate for ranking.
#[derive(Debug, Clone)]
pub struct RttCandidate {
    pub profile: ProtocolProfile,
    pub link: LinkModel,
    pub stages: StageTimings,
    pub chunk_bytes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedRtt {
    pub protocol: Protocol,
    pub chunk_bytes: u32,
    pub metric_ms: f64,
    pub breakdown: RttBreakdown,
}

/// Rank candidates ascending by the chosen metric; ties break alphabetically
/// by protocol name.
pub fn compare_protocols(
    plan: &SplitPlan,
    candidates: &[RttCandidate],
    metric: RankMetric,
) -> Result<Vec<RankedRtt>, LinkError> {
    let mut ranked = Vec::with_capacity(candidates.len());
    for c in candidates {
        let breakdown = estimate_rtt(plan, &c.profile, &c.link, &c.stages, c.chunk_bytes)?;
        let metric_ms = match metric {
            RankMetric::TotalRtt => breakdown.total_ms(),
            RankMetric::TransferOnly => breakdown.stage_ms(RttStage::Transfer).unwrap_or(0.0),
        };
        ranked.push(RankedRtt {
            protocol: c.profile.protocol,
            chunk_bytes: c.chunk_bytes,
            metric_ms,
            breakdown,
        });
    }
    ranked.sort_by(|a, b| {
        a.metric_ms
            .partial_cmp(&b.metric_ms)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then_with(|| a.protocol.to_string().cmp(&b.protocol.to_string()))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin_mobilenetv2_catalog;
    use crate::planner::split;
    use crate::testbed;
    use alloc::vec;
    use proptest::prelude::*;

    fn m(payload: u64, chunk: u32, ms: f64) -> Measurement {
        Measurement { payload_bytes: payload, chunk_bytes: chunk, latency_ms: ms }
    }

    #[test]
    fn simulate_espnow_block_16() {
        let model =
            LinkModel { setup_ms: 0.0, per_packet_ms: 3.146, per_byte_ms: 0.0, stall: None };
        let ms =
            simulate_transfer(5488, 250, &testbed::profile(Protocol::EspNow), &model).unwrap();
        assert!((ms - 22.0 * 3.146).abs() < 1e-9);
        assert!((ms - 69.2).abs() / 69.2 < 0.01);
    }

    #[test]
    fn simulate_zero_bytes_is_free() {
        let model =
            LinkModel { setup_ms: 5.0, per_packet_ms: 3.0, per_byte_ms: 0.1, stall: None };
        let ms = simulate_transfer(0, 250, &testbed::profile(Protocol::EspNow), &model).unwrap();
        assert_eq!(ms, 0.0);
    }

    #[test]
    fn simulate_rejects_chunk_over_max() {
        let model = LinkModel { setup_ms: 0.0, per_packet_ms: 1.0, per_byte_ms: 0.0, stall: None };
        assert!(matches!(
            simulate_transfer(100, 2000, &testbed::profile(Protocol::Udp), &model),
            Err(LinkError::ChunkExceedsMax { .. })
        ));
    }

    #[test]
    fn calibrate_espnow_rows() {
        let cal = calibrate(
            &[m(150_528, 250, 1897.0), m(2744, 250, 34.6), m(5488, 250, 69.2)],
            CalibrateOptions::default(),
        )
        .unwrap();
        // independently fitted: 3.1456146 ms/packet, all rows within 1%
        assert!((cal.model.per_packet_ms - 3.1456146).abs() < 1e-6);
        assert_eq!(cal.model.per_byte_ms, 0.0);
        assert!(cal.max_rel_error < 0.01);
    }

    #[test]
    fn calibrate_udp_1460_rows() {
        let cal = calibrate(
            &[m(150_528, 1460, 83.9), m(2744, 1460, 1.4), m(5488, 1460, 3.2)],
            CalibrateOptions::default(),
        )
        .unwrap();
        // per-row ratios are 83.9/104, 1.4/2, 3.2/4; the fit lands between
        assert!((0.70..=0.81).contains(&cal.model.per_packet_ms));
        assert!(cal.max_rel_error < 0.15);
    }

    #[test]
    fn calibrate_two_exact_points_zero_residual() {
        let cal = calibrate(
            &[m(1000, 100, 20.0), m(2000, 100, 40.0)],
            CalibrateOptions::default(),
        )
        .unwrap();
        assert!((cal.model.per_packet_ms - 2.0).abs() < 1e-12);
        assert!(cal.max_rel_error < 1e-12);
    }

    #[test]
    fn calibrate_rejects_single_row() {
        let err = calibrate(&[m(1000, 100, 20.0)], CalibrateOptions::default());
        assert!(matches!(err, Err(LinkError::NotEnoughMeasurements { usable: 1 })));
    }

    #[test]
    fn calibrate_rejects_identical_packet_counts() {
        let err = calibrate(
            &[m(1000, 100, 20.0), m(999, 100, 21.0)],
            CalibrateOptions::default(),
        );
        assert_eq!(err, Err(LinkError::DegenerateFit));
    }

    #[test]
    fn calibrate_tcp_with_stall_threshold() {
        let rows = [m(150_528, 1460, 563.3), m(2744, 1460, 8.5), m(5488, 1460, 19.3)];
        let cal = calibrate(
            &rows,
            CalibrateOptions { stall_threshold_packets: Some(100) },
        )
        .unwrap();
        let stall = cal.model.stall.unwrap();
        assert_eq!(stall.threshold_packets, 100);
        assert!(stall.factor > 1.0);
        // the stalled row is reproduced through the stall factor
        let pred = cal.model.transfer_ms(150_528, 104);
        assert!((pred - 563.3).abs() / 563.3 < 0.01);
    }

    #[test]
    fn calibrate_ble_rows_fit_tightly_with_true_packet_counts() {
        let cal = calibrate(
            &[m(150_528, 512, 7305.94), m(2744, 512, 148.9), m(5488, 512, 272.9)],
            CalibrateOptions::default(),
        )
        .unwrap();
        // computed packet counts (294, 6, 11) make these rows consistent
        assert!(cal.max_rel_error < 0.005, "max rel {}", cal.max_rel_error);
        assert!(cal.model.per_packet_ms > 20.0 && cal.model.per_packet_ms < 26.0);
    }

    #[test]
    fn estimate_rtt_block16_espnow_matches_hand_sum() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_16_project_BN").unwrap();
        let breakdown = estimate_rtt(
            &plan,
            &testbed::profile(Protocol::EspNow),
            &testbed::link_model(Protocol::EspNow),
            &testbed::stage_timings(Protocol::EspNow),
            250,
        )
        .unwrap();
        // 48 + 9.8 + 43 + 3053.75 + 0.02 + ~69.2 + 10 + 437 + 1.115 + loads
        let total = breakdown.total_ms();
        assert!((total - 3671.9).abs() < 0.5, "total {total}");
    }

    #[test]
    fn estimate_rtt_block16_udp() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_16_project_BN").unwrap();
        let breakdown = estimate_rtt(
            &plan,
            &testbed::profile(Protocol::Udp),
            &testbed::link_model(Protocol::Udp),
            &testbed::stage_timings(Protocol::Udp),
            1460,
        )
        .unwrap();
        let total = breakdown.total_ms();
        assert!((total - 5692.0).abs() < 1.0, "total {total}");
    }

    #[test]
    fn estimate_rtt_all_zero_is_zero() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_16_project_BN").unwrap();
        let zero = LinkModel { setup_ms: 0.0, per_packet_ms: 0.0, per_byte_ms: 0.0, stall: None };
        let breakdown = estimate_rtt(
            &plan,
            &testbed::profile(Protocol::Udp),
            &zero,
            &StageTimings::ZERO,
            1460,
        )
        .unwrap();
        assert_eq!(breakdown.total_ms(), 0.0);
    }

    #[test]
    fn total_equals_sum_of_entries() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_2_expand").unwrap();
        let b = estimate_rtt(
            &plan,
            &testbed::profile(Protocol::Tcp),
            &testbed::link_model(Protocol::Tcp),
            &testbed::stage_timings(Protocol::Tcp),
            1460,
        )
        .unwrap();
        let sum: f64 = b.entries.iter().map(|(_, ms)| ms).sum();
        assert_eq!(b.total_ms(), sum);
    }

    #[test]
    fn ranking_block16_by_total_rtt() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_16_project_BN").unwrap();
        let ranked =
            compare_protocols(&plan, &testbed::candidates(), RankMetric::TotalRtt).unwrap();
        let order: Vec<Protocol> = ranked.iter().map(|r| r.protocol).collect();
        assert_eq!(order, vec![Protocol::EspNow, Protocol::Udp, Protocol::Tcp, Protocol::Ble]);
    }

    #[test]
    fn ranking_block2_by_transfer_only() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_2_expand").unwrap();
        let ranked =
            compare_protocols(&plan, &testbed::candidates(), RankMetric::TransferOnly).unwrap();
        let order: Vec<Protocol> = ranked.iter().map(|r| r.protocol).collect();
        assert_eq!(order, vec![Protocol::Udp, Protocol::Tcp, Protocol::EspNow, Protocol::Ble]);
    }

    #[test]
    fn ranking_breaks_ties_alphabetically() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_16_project_BN").unwrap();
        let zero = LinkModel { setup_ms: 0.0, per_packet_ms: 0.0, per_byte_ms: 0.0, stall: None };
        let mk = |p: Protocol| RttCandidate {
            profile: testbed::profile(p),
            link: zero,
            stages: StageTimings::ZERO,
            chunk_bytes: 250,
        };
        let ranked = compare_protocols(
            &plan,
            &[mk(Protocol::Udp), mk(Protocol::Ble), mk(Protocol::Tcp)],
            RankMetric::TotalRtt,
        )
        .unwrap();
        let order: Vec<Protocol> = ranked.iter().map(|r| r.protocol).collect();
        assert_eq!(order, vec![Protocol::Ble, Protocol::Tcp, Protocol::Udp]);
    }

    proptest! {
        // transfer latency never decreases as the payload grows
        #[test]
        fn transfer_monotone_in_bytes(
            a in 0u64..1_000_000,
            delta in 0u64..1_000_000,
            chunk in 1u32..1472,
            pp in 0.0f64..10.0,
            pb in 0.0f64..0.01,
        ) {
            let model = LinkModel { setup_ms: 0.0, per_packet_ms: pp, per_byte_ms: pb, stall: None };
            let na = packet_count(a, chunk).unwrap();
            let nb = packet_count(a + delta, chunk).unwrap();
            prop_assert!(model.transfer_ms(a, na) <= model.transfer_ms(a + delta, nb) + 1e-9);
        }
    }
}
