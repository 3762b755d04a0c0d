//! Off-chip memory footprint analysis: which tensors each dataflow
//! materializes in DRAM and how much fusion saves.

use serde::{Deserialize, Serialize};

use crate::schedule::SchedulerKind;
use crate::shape::WorkloadShape;

/// One DRAM-resident tensor and its size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FootprintRow {
    pub tensor: String,
    pub bytes: u64,
}

/// Tensors the dataflow materializes off chip. All five keep Q, K, V, and O
/// in DRAM; the unfused dataflow spills both the score and probability
/// matrices, the half-pipelined one spills only probabilities, and the fused
/// dataflows spill neither.
pub fn dram_tensors(kind: SchedulerKind, shape: &WorkloadShape) -> Vec<FootprintRow> {
    let qkv = shape.qkv_bytes();
    let score = shape.score_bytes();
    let mut rows = vec![
        FootprintRow { tensor: "Q".into(), bytes: qkv },
        FootprintRow { tensor: "K".into(), bytes: qkv },
        FootprintRow { tensor: "V".into(), bytes: qkv },
    ];
    match kind {
        SchedulerKind::LayerWise => {
            rows.push(FootprintRow { tensor: "C".into(), bytes: score });
            rows.push(FootprintRow { tensor: "P".into(), bytes: score });
        }
        SchedulerKind::SoftPipe => {
            rows.push(FootprintRow { tensor: "P".into(), bytes: score });
        }
        SchedulerKind::Flat | SchedulerKind::TileFlow | SchedulerKind::Mas => {}
    }
    rows.push(FootprintRow { tensor: "O".into(), bytes: qkv });
    rows
}

/// Total unique DRAM bytes the dataflow touches.
pub fn unique_dram_bytes(kind: SchedulerKind, shape: &WorkloadShape) -> u64 {
    dram_tensors(kind, shape).iter().map(|r| r.bytes).sum()
}

/// Fraction of off-chip intermediate traffic the fused dataflows avoid
/// relative to spilling the score matrix alongside Q, K, and V once each:
/// N / (N + 2E), independent of batch, heads, and element width.
pub fn fused_savings_fraction(shape: &WorkloadShape) -> f64 {
    let n = shape.seq_len as f64;
    let e = shape.embed as f64;
    n / (n + 2.0 * e)
}
