//! Reference constants measured on a two-node ESP32-S3 testbed.
//!
//! These are the defaults behind the CLI's `--paper-defaults` flag: protocol
//! profiles, per-stage processing times for a split MobileNetV2-0.35, raw
//! internode transfer measurements for the three benchmarked split points,
//! and link models calibrated from those measurements.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::link::{
    calibrate, CalibrateOptions, ConnectionType, LinkModel, Measurement, Protocol,
    ProtocolProfile, RttCandidate, StageTimings,
};

/// Packet count beyond which the testbed's TCP stack stalls; transfers above
/// it are modelled with a stall factor and excluded from linear calibration.
pub const TCP_STALL_THRESHOLD_PACKETS: u64 = 100;

/// The three split layers benchmarked on the testbed.
pub const SPLIT_LAYERS: [&str; 3] = ["block_2_expand", "block_15_project", "block_16_project_BN"];

/// Link characteristics per protocol.
pub fn profile(protocol: Protocol) -> ProtocolProfile {
    let (max_payload_bytes, connection_type, max_peers) = match protocol {
        Protocol::EspNow => (250, ConnectionType::PeerToPeer, "up to 20 peers"),
        Protocol::Udp => (1472, ConnectionType::Connectionless, "unlimited via IP mesh"),
        Protocol::Tcp => {
            (1460, ConnectionType::ConnectionOrientedStream, "4-10 clients (ESP32 limit)")
        }
        Protocol::Ble => {
            (512, ConnectionType::ConnectionOrientedGatt, "1:7 classic, hundreds via mesh")
        }
    };
    ProtocolProfile {
        protocol,
        max_payload_bytes,
        connection_type,
        max_peers: max_peers.to_string(),
    }
}

/// Protocol setup cost measured per link type.
pub fn setup_ms(protocol: Protocol) -> f64 {
    match protocol {
        Protocol::Udp => 2134.9,
        Protocol::Tcp => 2590.623,
        Protocol::EspNow => 48.0,
        Protocol::Ble => 6378.52,
    }
}

/// Feedback (prediction response) delay measured per link type.
pub fn feedback_ms(protocol: Protocol) -> f64 {
    match protocol {
        Protocol::Udp => 0.649,
        Protocol::Tcp => 2.645,
        Protocol::EspNow => 1.115,
        Protocol::Ble => 24.55,
    }
}

/// Steady-state round-trip times reported by the testbed, for comparison
/// against composed estimates.
pub fn reported_rtt_ms(protocol: Protocol) -> f64 {
    match protocol {
        Protocol::Udp => 5800.0,
        Protocol::Tcp => 6202.2,
        Protocol::EspNow => 3662.0,
        Protocol::Ble => 10443.55,
    }
}

/// Per-stage processing constants for the split MobileNetV2-0.35 workload.
/// Device 1 runs the feature extractor, device 2 the classifier head.
pub fn stage_timings(protocol: Protocol) -> StageTimings {
    StageTimings {
        model_load_ms: [0.0001, 0.01],
        input_load_ms: 9.8,
        tensor_alloc_ms: [43.0, 10.0],
        inference_ms: [3053.75, 437.0],
        buffering_ms: 0.02,
        feedback_ms: feedback_ms(protocol),
    }
}

/// The chunk size each protocol was benchmarked with for its round-trip
/// numbers.
pub fn reference_chunk(protocol: Protocol) -> u32 {
    match protocol {
        Protocol::EspNow => 250,
        Protocol::Udp => 1460,
        Protocol::Tcp => 1460,
        Protocol::Ble => 512,
    }
}

/// Measured internode transfer latencies: (payload bytes, chunk, latency ms)
/// over the three split boundaries (150528, 2744, 5488 bytes).
pub fn transfer_measurements(protocol: Protocol) -> Vec<Measurement> {
    let rows: &[(u64, u32, f64)] = match protocol {
        Protocol::Udp => &[
            (150_528, 1472, 145.1),
            (2_744, 1472, 2.26),
            (5_488, 1472, 5.2),
            (150_528, 1460, 83.9),
            (2_744, 1460, 1.4),
            (5_488, 1460, 3.2),
            (150_528, 1200, 98.3),
            (2_744, 1200, 2.2),
            (5_488, 1200, 3.7),
        ],
        Protocol::Tcp => &[
            (150_528, 1472, 558.7),
            (2_744, 1472, 8.6),
            (5_488, 1472, 19.2),
            (150_528, 1460, 563.3),
            (2_744, 1460, 8.5),
            (5_488, 1460, 19.3),
            (150_528, 1200, 393.9),
            (2_744, 1200, 8.8),
            (5_488, 1200, 15.719),
        ],
        Protocol::EspNow => &[
            (150_528, 250, 1897.0),
            (2_744, 250, 34.6),
            (5_488, 250, 69.2),
        ],
        Protocol::Ble => &[
            (150_528, 512, 7305.94),
            (2_744, 512, 148.9),
            (5_488, 512, 272.9),
        ],
    };
    rows.iter()
        .map(|&(payload_bytes, chunk_bytes, latency_ms)| Measurement {
            payload_bytes,
            chunk_bytes,
            latency_ms,
        })
        .collect()
}

/// Link model calibrated from the measurements taken at the protocol's
/// reference chunk size, with the measured setup cost attached.
pub fn link_model(protocol: Protocol) -> LinkModel {
    let chunk = reference_chunk(protocol);
    let rows: Vec<Measurement> = transfer_measurements(protocol)
        .into_iter()
        .filter(|m| m.chunk_bytes == chunk)
        .collect();
    let options = CalibrateOptions {
        stall_threshold_packets: (protocol == Protocol::Tcp)
            .then_some(TCP_STALL_THRESHOLD_PACKETS),
    };
    let mut model = calibrate(&rows, options)
        .expect("reference measurements calibrate cleanly")
        .model;
    model.setup_ms = setup_ms(protocol);
    model
}

/// One ranking candidate per protocol, each at its reference chunk size.
pub fn candidates() -> Vec<RttCandidate> {
    Protocol::ALL
        .iter()
        .map(|&p| RttCandidate {
            profile: profile(p),
            link: link_model(p),
            stages: stage_timings(p),
            chunk_bytes: reference_chunk(p),
        })
        .collect()
}
