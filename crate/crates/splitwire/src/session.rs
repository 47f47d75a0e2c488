//! Two-node split-inference sessions with per-stage timing capture.
//!
//! Node 1 runs the first part of the model and ships the quantized boundary
//! tensor; node 2 runs the remainder and returns top-k feedback. Both nodes
//! derive the model from the same seed, mirroring two firmware images built
//! from one split: the receiver already knows the boundary shape and
//! quantization parameters, so the activation payload on the wire is exactly
//! the tensor's int8 bytes and the frame count matches the planner's packet
//! count for the boundary size.

use std::time::{Duration, Instant};

use splitwire_core::frame::MsgType;
use splitwire_core::link::RttStage;
use splitwire_core::message::{FeedbackEntry, FeedbackMessage};
use splitwire_core::quant::{check_alignment, QuantTensor, DEFAULT_ALIGNMENT_REL_TOL};
use splitwire_core::toymodel::{
    infer_full, split_toy, top_k, PartOutput, Prediction, ToyError, ToyModel, ToyPart,
    DOG_LABELS,
};

use crate::transport::{
    recv_message, send_message, FrameLink, RecvOptions, RecvOutcome, Reliability, SendOptions,
    TransportError,
};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("model: {0}")]
    Model(#[from] ToyError),
    #[error("message: {0}")]
    Message(#[from] splitwire_core::message::MessageError),
    #[error("boundary params not aligned: {0}")]
    Misaligned(String),
    #[error("activation transfer incomplete, missing {missing} frames")]
    IncompleteActivation { missing: usize },
    #[error("boundary size {got} differs from the expected {expected} bytes")]
    BoundarySize { expected: usize, got: usize },
}

/// Everything both nodes must agree on ahead of time.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    /// Layer widths, input first, classes last.
    pub dims: Vec<usize>,
    pub model_seed: u64,
    pub input_seed: u64,
    pub split_index: usize,
    pub chunk_bytes: u32,
    pub top_k: usize,
    pub reliability: Reliability,
    pub tensor_id: u32,
    pub feedback_timeout: Duration,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            // a 5488-wide boundary, the size of the deepest benchmarked
            // split of the reference CNN
            dims: vec![16, 5488, 10],
            model_seed: 42,
            input_seed: 1,
            split_index: 1,
            chunk_bytes: 1460,
            top_k: 5,
            reliability: Reliability::None,
            tensor_id: 1,
            feedback_timeout: Duration::from_secs(10),
        }
    }
}

impl SessionConfig {
    pub fn labels(&self) -> Vec<String> {
        let classes = *self.dims.last().expect("dims non-empty");
        if classes == DOG_LABELS.len() {
            DOG_LABELS.iter().map(|s| s.to_string()).collect()
        } else {
            (0..classes).map(|i| format!("class_{i}")).collect()
        }
    }

    pub fn build_model(&self) -> Result<ToyModel, ToyError> {
        ToyModel::generate(self.model_seed, &self.dims, self.labels())
    }

    fn send_options(&self) -> SendOptions {
        SendOptions { reliability: self.reliability, ..SendOptions::default() }
    }

    fn ack_mode(&self) -> bool {
        self.reliability == Reliability::StopAndWait
    }
}

/// One timed stage of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub stage: String,
    pub device: Option<u8>,
    pub ms: f64,
}

impl TraceEntry {
    fn new(stage: RttStage, ms: f64) -> Self {
        Self { stage: stage.label().to_string(), device: stage.device(), ms }
    }
}

/// Measured timings and transfer statistics for one session.
#[derive(Debug, Clone, Default)]
pub struct SessionTrace {
    pub entries: Vec<TraceEntry>,
    pub rtt_ms: f64,
    pub boundary_bytes: u64,
    pub frames_sent: u64,
    pub retransmissions: u64,
    /// Modeled transfer time when the link simulates a radio profile.
    pub simulated_transfer_ms: Option<f64>,
    /// Set when the session did not complete; timed stages up to the failure
    /// are still present.
    pub failure: Option<String>,
}

/// Node 1's view of a finished session.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub predictions: Vec<Prediction>,
    pub trace: SessionTrace,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Reference result: the monolithic forward pass on the same model/input.
pub fn monolithic_predictions(cfg: &SessionConfig) -> Result<Vec<Prediction>, SessionError> {
    let model = cfg.build_model()?;
    let input = model.sample_input(cfg.input_seed);
    let scores = infer_full(&model, &input)?;
    Ok(top_k(&scores, &model.labels, cfg.top_k)?)
}

/// Run the sending node: part-1 inference, boundary transfer, feedback wait.
/// `setup_ms` is the measured cost of opening the endpoint, recorded as the
/// protocol-setup stage.
pub fn run_node1(
    link: &mut impl FrameLink,
    cfg: &SessionConfig,
    setup_ms: f64,
) -> Result<SessionOutcome, SessionError> {
    let session_start = Instant::now();
    let mut trace = SessionTrace::default();
    trace.entries.push(TraceEntry::new(RttStage::ProtocolSetup, setup_ms));

    let t = Instant::now();
    let model = cfg.build_model()?;
    let (part1, _) = split_toy(&model, cfg.split_index)?;
    trace.entries.push(TraceEntry::new(RttStage::ModelLoad1, ms_since(t)));

    let t = Instant::now();
    let input = model.sample_input(cfg.input_seed);
    trace.entries.push(TraceEntry::new(RttStage::InputLoad, ms_since(t)));

    let t = Instant::now();
    let mut boundary_buf: Vec<u8> = Vec::with_capacity(boundary_len(&part1));
    trace.entries.push(TraceEntry::new(RttStage::TensorAlloc1, ms_since(t)));

    let t = Instant::now();
    let PartOutput::Boundary(boundary) = part1.infer(&input)? else {
        unreachable!("part 1 has no labels");
    };
    trace.entries.push(TraceEntry::new(RttStage::Inference1, ms_since(t)));
    trace.boundary_bytes = boundary.len() as u64;

    // the receiver knows shape and quant params a priori, so the wire
    // carries the raw int8 bytes
    let t = Instant::now();
    boundary_buf.clear();
    boundary_buf.extend(boundary.data.iter().map(|&q| q as u8));
    trace.entries.push(TraceEntry::new(RttStage::Buffering, ms_since(t)));

    let t = Instant::now();
    let sent = match send_message(
        link,
        MsgType::Activation,
        cfg.tensor_id,
        &boundary_buf,
        cfg.chunk_bytes,
        cfg.send_options(),
    ) {
        Ok(sent) => sent,
        Err(e) => {
            trace.entries.push(TraceEntry::new(RttStage::Transfer, ms_since(t)));
            trace.rtt_ms = ms_since(session_start);
            trace.failure = Some(format!("activation transfer failed: {e}"));
            return Ok(SessionOutcome { predictions: Vec::new(), trace });
        }
    };
    trace.entries.push(TraceEntry::new(RttStage::Transfer, ms_since(t)));
    trace.frames_sent = sent.frames_sent;
    trace.retransmissions = sent.retransmissions;
    trace.simulated_transfer_ms = sent.simulated_ms;

    let t = Instant::now();
    let feedback = recv_message(
        link,
        RecvOptions {
            send_acks: cfg.ack_mode(),
            expect: Some(MsgType::Feedback),
            start_timeout: cfg.feedback_timeout,
            ..RecvOptions::default()
        },
    );
    trace.entries.push(TraceEntry::new(RttStage::Feedback, ms_since(t)));
    trace.rtt_ms = ms_since(session_start);

    let bytes = match feedback {
        Ok(RecvOutcome::Complete { bytes, .. }) => bytes,
        Ok(RecvOutcome::Incomplete { missing, .. }) => {
            trace.failure = Some(format!("feedback incomplete, {} frames missing", missing.len()));
            return Ok(SessionOutcome { predictions: Vec::new(), trace });
        }
        Err(e) => {
            trace.failure = Some(format!("no feedback: {e}"));
            return Ok(SessionOutcome { predictions: Vec::new(), trace });
        }
    };
    let message = FeedbackMessage::decode(&bytes)?;
    let predictions = message
        .entries
        .iter()
        .map(|e| Prediction {
            class_id: e.class_id,
            label: model
                .labels
                .get(e.class_id as usize)
                .cloned()
                .unwrap_or_else(|| "?".to_string()),
            confidence: e.confidence,
        })
        .collect();
    Ok(SessionOutcome { predictions, trace })
}

/// Node 2's view: what it predicted and how long its stages took.
#[derive(Debug, Clone)]
pub struct Node2Report {
    pub predictions: Vec<Prediction>,
    pub entries: Vec<TraceEntry>,
    pub frames_received: u64,
}

/// Run the classifying node: receive the boundary, finish inference, send
/// top-k feedback.
pub fn run_node2(
    link: &mut impl FrameLink,
    cfg: &SessionConfig,
) -> Result<Node2Report, SessionError> {
    let mut entries = Vec::new();

    let t = Instant::now();
    let model = cfg.build_model()?;
    let (part1, part2) = split_toy(&model, cfg.split_index)?;
    entries.push(TraceEntry::new(RttStage::ModelLoad2, ms_since(t)));

    // both halves came from one split; check the boundary contract anyway
    let alignment = check_alignment(
        part1.boundary_params(),
        part2.input_params(),
        DEFAULT_ALIGNMENT_REL_TOL,
    );
    if !alignment.aligned {
        return Err(SessionError::Misaligned(alignment.diagnostic));
    }

    let expected_len: usize = boundary_len(&part1);
    let t = Instant::now();
    let mut tensor_buf: Vec<i8> = Vec::with_capacity(expected_len);
    entries.push(TraceEntry::new(RttStage::TensorAlloc2, ms_since(t)));

    let received = recv_message(
        link,
        RecvOptions {
            send_acks: cfg.ack_mode(),
            expect: Some(MsgType::Activation),
            start_timeout: cfg.feedback_timeout,
            ..RecvOptions::default()
        },
    )?;
    let (bytes, frames_received) = match received {
        RecvOutcome::Complete { bytes, frames_received, .. } => (bytes, frames_received),
        RecvOutcome::Incomplete { missing, .. } => {
            return Err(SessionError::IncompleteActivation { missing: missing.len() })
        }
    };
    if bytes.len() != expected_len {
        return Err(SessionError::BoundarySize { expected: expected_len, got: bytes.len() });
    }
    tensor_buf.extend(bytes.iter().map(|&b| b as i8));
    let boundary = QuantTensor::new(
        vec![expected_len as u32],
        part2.input_params(),
        tensor_buf,
    )
    .expect("length checked");

    let t = Instant::now();
    let PartOutput::Scores(scores) = part2.infer(&boundary)? else {
        unreachable!("part 2 carries labels");
    };
    entries.push(TraceEntry::new(RttStage::Inference2, ms_since(t)));

    let predictions = top_k(&scores, &model.labels, cfg.top_k)?;
    let feedback = FeedbackMessage::new(
        cfg.tensor_id,
        predictions
            .iter()
            .map(|p| FeedbackEntry { class_id: p.class_id, confidence: p.confidence })
            .collect(),
    )?;
    send_message(
        link,
        MsgType::Feedback,
        cfg.tensor_id,
        &feedback.encode(),
        cfg.chunk_bytes,
        cfg.send_options(),
    )?;

    Ok(Node2Report { predictions, entries, frames_received })
}

fn boundary_len(part1: &ToyPart) -> usize {
    part1.layers.last().expect("non-empty part").out_dim
}

/// Run both node roles concurrently over an in-process link pair and merge
/// their traces.
pub fn run_both(
    mut link1: impl FrameLink + 'static,
    mut link2: impl FrameLink + 'static,
    cfg: &SessionConfig,
    setup_ms: f64,
) -> Result<SessionOutcome, SessionError> {
    let cfg2 = cfg.clone();
    let node2 = std::thread::spawn(move || run_node2(&mut link2, &cfg2));
    let mut outcome = run_node1(&mut link1, cfg, setup_ms)?;
    match node2.join().expect("node 2 thread must not panic") {
        Ok(report) => outcome.trace.entries.extend(report.entries),
        Err(e) => {
            if outcome.trace.failure.is_none() {
                outcome.trace.failure = Some(format!("node 2: {e}"));
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{datagram_pair, in_memory_pair, InMemoryConfig};

    fn small_cfg() -> SessionConfig {
        SessionConfig {
            dims: vec![12, 20, 10],
            chunk_bytes: 250,
            ..SessionConfig::default()
        }
    }

    #[test]
    fn session_over_datagram_matches_monolithic() {
        let cfg = SessionConfig {
            reliability: Reliability::StopAndWait,
            ..small_cfg()
        };
        let (a, b) = datagram_pair().unwrap();
        let outcome = run_both(a, b, &cfg, 0.0).unwrap();
        assert!(outcome.trace.failure.is_none(), "{:?}", outcome.trace.failure);
        assert_eq!(outcome.predictions, monolithic_predictions(&cfg).unwrap());
    }

    #[test]
    fn session_frame_count_matches_planner_for_espnow_profile() {
        let cfg = SessionConfig { chunk_bytes: 250, ..SessionConfig::default() };
        let (a, b) = in_memory_pair(InMemoryConfig {
            max_payload: 250,
            link_model: Some(splitwire_core::testbed::link_model(
                splitwire_core::link::Protocol::EspNow,
            )),
        });
        let outcome = run_both(a, b, &cfg, 0.0).unwrap();
        assert!(outcome.trace.failure.is_none());
        assert_eq!(outcome.trace.boundary_bytes, 5488);
        let expected = splitwire_core::planner::packet_count(5488, 250).unwrap();
        assert_eq!(outcome.trace.frames_sent, expected);
        assert!(outcome.trace.simulated_transfer_ms.is_some());
    }

    #[test]
    fn stage_durations_nonnegative_and_bounded_by_rtt() {
        let cfg = small_cfg();
        let (a, b) = in_memory_pair(InMemoryConfig::default());
        let outcome = run_both(a, b, &cfg, 0.0).unwrap();
        let node1_sum: f64 = outcome
            .trace
            .entries
            .iter()
            .filter(|e| e.device != Some(2))
            .map(|e| e.ms)
            .sum();
        assert!(outcome.trace.entries.iter().all(|e| e.ms >= 0.0));
        assert!(node1_sum <= outcome.trace.rtt_ms + 1e-6);
    }

    #[test]
    fn k_larger_than_class_count_returns_all_classes() {
        let cfg = SessionConfig { top_k: 50, ..small_cfg() };
        let (a, b) = in_memory_pair(InMemoryConfig::default());
        let outcome = run_both(a, b, &cfg, 0.0).unwrap();
        assert_eq!(outcome.predictions.len(), 10);
        for pair in outcome.predictions.windows(2) {
            assert!(pair[0].confidence >= pair[1].confidence);
        }
    }

    #[test]
    fn feedback_timeout_yields_partial_trace_with_failure() {
        // no node 2 at all
        let (mut a, _b) = in_memory_pair(InMemoryConfig::default());
        let cfg = SessionConfig {
            feedback_timeout: Duration::from_millis(200),
            ..small_cfg()
        };
        let outcome = run_node1(&mut a, &cfg, 0.0).unwrap();
        assert!(outcome.predictions.is_empty());
        assert!(outcome.trace.failure.is_some());
        assert!(!outcome.trace.entries.is_empty());
        assert!(outcome.trace.rtt_ms > 0.0);
    }

    #[test]
    fn default_config_boundary_is_5488_bytes() {
        let cfg = SessionConfig::default();
        let model = cfg.build_model().unwrap();
        let (p1, _) = split_toy(&model, cfg.split_index).unwrap();
        assert_eq!(boundary_len(&p1), 5488);
    }
}
