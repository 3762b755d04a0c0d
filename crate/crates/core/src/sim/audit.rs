use serde::Serialize;

use crate::schedule::{SchedulerKind, TaskGraph, TaskKind};
use crate::sim::report::SimulationReport;

/// One verified identity between a closed-form expectation and a simulated
/// counter.
#[derive(Debug, Clone, Serialize)]
pub struct AuditCheck {
    pub name: String,
    pub expected: u64,
    pub actual: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditOutcome {
    pub checks: Vec<AuditCheck>,
    pub pass: bool,
}

impl AuditOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn summary(&self) -> String {
        self.failures()
            .map(|c| format!("{}: expected {}, got {}", c.name, c.expected, c.actual))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Off-chip write bytes each dataflow must produce: the fused schedules spill
/// only the output tile, the unfused ones also spill scores and probabilities.
pub fn expected_dram_write_bytes(kind: SchedulerKind, shape: &crate::shape::WorkloadShape) -> u64 {
    let b = shape.batch as u64;
    let h = shape.heads as u64;
    let n = shape.seq_len as u64;
    let e = shape.embed as u64;
    let eb = shape.element_bytes as u64;
    let out = b * h * n * e * eb;
    let score = b * h * n * n * eb;
    match kind {
        SchedulerKind::LayerWise => 2 * score + out,
        SchedulerKind::SoftPipe => score + out,
        SchedulerKind::Flat | SchedulerKind::TileFlow | SchedulerKind::Mas => out,
    }
}

/// Cross-checks a finished report against totals derivable from the graph
/// and the workload shape alone. Every check must hold for every scheduler,
/// tiling, and L1 size; a failure means the simulation miscounted.
pub fn audit(graph: &TaskGraph, report: &SimulationReport) -> AuditOutcome {
    let shape = &graph.shape;
    let b = shape.batch as u64;
    let h = shape.heads as u64;
    let n = shape.seq_len as u64;
    let e = shape.embed as u64;
    let eb = shape.element_bytes as u64;
    let c = &report.counters;

    let mut checks = Vec::new();
    let mut push = |name: &str, expected: u64, actual: u64| {
        checks.push(AuditCheck {
            name: name.into(),
            expected,
            actual,
            pass: expected == actual,
        });
    };

    push(
        "fresh MAC operations equal two passes over the score grid",
        2 * b * h * n * n * e,
        c.mac_ops - c.redo_mac_ops,
    );
    push(
        "VEC operations equal five passes over the score grid",
        5 * b * h * n * n,
        c.vec_ops,
    );
    push(
        "DRAM writes match the dataflow's spill set",
        expected_dram_write_bytes(graph.scheduler, shape),
        c.dram_write_bytes,
    );
    push(
        "DRAM writes equal the graph's outbound transfer bytes",
        graph.dma_out_bytes(),
        c.dram_write_bytes,
    );
    let store_o: u64 = graph
        .tasks
        .iter()
        .filter(|t| t.kind == TaskKind::StoreO)
        .map(|t| t.bytes)
        .sum();
    push("output stores cover the full output tensor", b * h * n * e * eb, store_o);
    let reloads: u64 = report
        .overwrite_events
        .iter()
        .map(|ev| ev.reload_obligation)
        .sum();
    push(
        "DRAM reads equal scheduled loads plus reload obligations",
        graph.dma_in_bytes() + reloads,
        c.dram_read_bytes,
    );

    let pass = checks.iter().all(|c| c.pass);
    AuditOutcome { checks, pass }
}
