//! Two-way splits of a sequential model and per-protocol packet counts.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::catalog::{activation_bytes, CatalogError, ModelGraph};
use crate::link::{LinkModel, ProtocolProfile};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanError {
    UnknownLayer { layer: String },
    SplitAtFinalLayer { layer: String },
    ZeroChunk,
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownLayer { layer } => write!(f, "unknown layer {layer}"),
            Self::SplitAtFinalLayer { layer } => {
                write!(f, "cannot split at final layer {layer}: the second part would be empty")
            }
            Self::ZeroChunk => write!(f, "chunk size must be at least 1 byte"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PlanError {}

impl From<CatalogError> for PlanError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::UnknownLayer { layer } => PlanError::UnknownLayer { layer },
            other => PlanError::UnknownLayer { layer: other.to_string() },
        }
    }
}

/// A chosen split: the first part ends at `split_layer`, the second part is
/// everything after it. `boundary_bytes` is the int8 activation size that
/// crosses the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub graph_name: String,
    pub split_layer: String,
    pub part1_layers: Vec<String>,
    pub part2_layers: Vec<String>,
    pub boundary_bytes: u64,
    pub part1_bytes: Option<u64>,
    pub part2_bytes: Option<u64>,
}

/// Split after the named layer. The layer must exist and must not be the
/// final layer.
pub fn split(graph: &ModelGraph, layer: &str) -> Result<SplitPlan, PlanError> {
    let idx = graph
        .layer_index(layer)
        .ok_or_else(|| PlanError::UnknownLayer { layer: layer.to_string() })?;
    if idx + 1 == graph.layers().len() {
        return Err(PlanError::SplitAtFinalLayer { layer: layer.to_string() });
    }
    let spec = graph.layer(layer)?;
    Ok(SplitPlan {
        graph_name: graph.model_name().to_string(),
        split_layer: layer.to_string(),
        part1_layers: graph.layers()[..=idx].iter().map(|l| l.name.clone()).collect(),
        part2_layers: graph.layers()[idx + 1..].iter().map(|l| l.name.clone()).collect(),
        boundary_bytes: activation_bytes(graph, layer, 1)?,
        part1_bytes: spec.part1_bytes,
        part2_bytes: spec.part2_bytes,
    })
}

/// Number of fixed-size chunks needed for a payload: `ceil(bytes / chunk)`,
/// with zero bytes taking zero packets.
pub fn packet_count(boundary_bytes: u64, chunk_bytes: u32) -> Result<u64, PlanError> {
    if chunk_bytes == 0 {
        return Err(PlanError::ZeroChunk);
    }
    Ok(boundary_bytes.div_ceil(chunk_bytes as u64))
}

/// One line of a plan report: a protocol/chunk combination with its packet
/// count and, when a link model is on hand, the predicted transfer latency.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRow {
    pub protocol: String,
    pub chunk_bytes: u32,
    pub outcome: RowOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowOutcome {
    Ok { packets: u64, predicted_latency_ms: Option<f64> },
    ChunkExceedsMax { max_payload: u32 },
}

/// One row per (profile, chunk size) pair. A chunk larger than a profile's
/// max payload yields a row-level validation error rather than failing the
/// whole report.
pub fn plan_report(
    plan: &SplitPlan,
    profiles: &[(ProtocolProfile, Option<LinkModel>)],
    chunk_sizes: &[u32],
) -> Result<Vec<PlanRow>, PlanError> {
    let mut rows = Vec::with_capacity(profiles.len() * chunk_sizes.len());
    for (profile, model) in profiles {
        for &chunk in chunk_sizes {
            let outcome = if chunk == 0 {
                return Err(PlanError::ZeroChunk);
            } else if profile.enforces_max_payload() && chunk > profile.max_payload_bytes {
                RowOutcome::ChunkExceedsMax { max_payload: profile.max_payload_bytes }
            } else {
                let packets = packet_count(plan.boundary_bytes, chunk)?;
                let predicted = model
                    .as_ref()
                    .map(|m| m.transfer_ms(plan.boundary_bytes, packets));
                RowOutcome::Ok { packets, predicted_latency_ms: predicted }
            };
            rows.push(PlanRow { protocol: profile.protocol.to_string(), chunk_bytes: chunk, outcome });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin_mobilenetv2_catalog;
    use crate::link::Protocol;
    use crate::testbed;
    use proptest::prelude::*;

    #[test]
    fn split_block_16_reports_boundary_and_part_sizes() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_16_project_BN").unwrap();
        assert_eq!(plan.boundary_bytes, 5488);
        assert_eq!(plan.part1_bytes, Some(2_700_000));
        assert_eq!(plan.part2_bytes, Some(9_200_000));
        assert_eq!(plan.part1_layers.last().unwrap(), "block_16_project_BN");
    }

    #[test]
    fn split_block_2_boundary() {
        let g = builtin_mobilenetv2_catalog();
        assert_eq!(split(&g, "block_2_expand").unwrap().boundary_bytes, 150_528);
    }

    #[test]
    fn split_at_final_layer_rejected() {
        let g = builtin_mobilenetv2_catalog();
        let last = g.layers().last().unwrap().name.clone();
        assert!(matches!(split(&g, &last), Err(PlanError::SplitAtFinalLayer { .. })));
    }

    #[test]
    fn split_unknown_layer_rejected() {
        let g = builtin_mobilenetv2_catalog();
        assert!(matches!(split(&g, "bogus"), Err(PlanError::UnknownLayer { .. })));
    }

    #[test]
    fn split_partition_covers_graph_in_order() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_15_project").unwrap();
        let mut joined = plan.part1_layers.clone();
        joined.extend(plan.part2_layers.clone());
        let all: Vec<String> = g.layers().iter().map(|l| l.name.clone()).collect();
        assert_eq!(joined, all);
    }

    #[test]
    fn resplitting_is_deterministic() {
        let g = builtin_mobilenetv2_catalog();
        assert_eq!(split(&g, "block_2_expand").unwrap(), split(&g, "block_2_expand").unwrap());
    }

    #[test]
    fn packet_counts_match_benchmark_table() {
        // (bytes, chunk, expected packets)
        let cells = [
            (150_528, 1472, 103),
            (150_528, 1460, 104),
            (150_528, 1200, 126),
            (150_528, 250, 603),
            (2_744, 1472, 2),
            (2_744, 1460, 2),
            (2_744, 1200, 3),
            (2_744, 250, 11),
            (5_488, 1472, 4),
            (5_488, 1460, 4),
            (5_488, 1200, 5),
            (5_488, 250, 22),
            (5_488, 512, 11),
        ];
        for (bytes, chunk, expected) in cells {
            assert_eq!(packet_count(bytes, chunk).unwrap(), expected, "{bytes} @ {chunk}");
        }
    }

    #[test]
    fn zero_bytes_zero_packets() {
        assert_eq!(packet_count(0, 1460).unwrap(), 0);
    }

    #[test]
    fn zero_chunk_rejected() {
        assert_eq!(packet_count(1, 0), Err(PlanError::ZeroChunk));
    }

    #[test]
    fn report_rows_for_block_16_udp() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_16_project_BN").unwrap();
        let rows =
            plan_report(&plan, &[(testbed::profile(Protocol::Udp), None)], &[1460]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(matches!(rows[0].outcome, RowOutcome::Ok { packets: 4, .. }));
    }

    #[test]
    fn report_rows_for_block_15_tcp_1200() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_15_project").unwrap();
        let rows =
            plan_report(&plan, &[(testbed::profile(Protocol::Tcp), None)], &[1200]).unwrap();
        assert!(matches!(rows[0].outcome, RowOutcome::Ok { packets: 3, .. }));
    }

    #[test]
    fn report_flags_chunk_over_max_payload() {
        let g = builtin_mobilenetv2_catalog();
        let plan = split(&g, "block_16_project_BN").unwrap();
        let rows =
            plan_report(&plan, &[(testbed::profile(Protocol::Udp), None)], &[2000]).unwrap();
        assert_eq!(rows[0].outcome, RowOutcome::ChunkExceedsMax { max_payload: 1472 });
    }

    proptest! {
        // packet_count(b, c) is the unique n with (n-1)*c < b <= n*c for b > 0.
        #[test]
        fn packet_count_is_the_minimal_cover(b in 1u64..2_000_000, c in 1u32..5000) {
            let n = packet_count(b, c).unwrap();
            // brute-force the smallest n with n*c >= b
            let mut expect = 1u64;
            while expect * (c as u64) < b {
                expect += 1;
            }
            prop_assert_eq!(n, expect);
            prop_assert!((n - 1) * (c as u64) < b && b <= n * (c as u64));
        }

        // for fixed bytes, a smaller chunk never needs fewer packets
        #[test]
        fn smaller_chunk_never_fewer_packets(b in 0u64..1_000_000, c in 2u32..5000) {
            let big = packet_count(b, c).unwrap();
            let small = packet_count(b, c - 1).unwrap();
            prop_assert!(small >= big);
        }
    }
}
