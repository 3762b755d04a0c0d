use serde::{Deserialize, Serialize};

use crate::hardware::{AccessCounters, EnergyBreakdown, HardwareSpec};
use crate::schedule::{BufferId, BufferKind, TaskId};
use crate::shape::{TilingConfig, WorkloadShape};

/// Why an on-chip tile was claimed: a softmax output block demanded space
/// (the memory-guardian path, which may abort a running matmul), or an
/// ordinary allocation ran out of room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverwriteTrigger {
    SoftmaxDemand,
    Capacity,
}

/// One claimed tile. `stalled_task` names the matmul aborted by the claim,
/// when there was one; `reload_obligation` is the extra DRAM read traffic
/// the claim commits the schedule to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverwriteEvent {
    pub time: u64,
    pub trigger: OverwriteTrigger,
    pub victim_buffer: BufferId,
    pub victim_kind: BufferKind,
    pub victim_group: u32,
    pub victim_sub: u32,
    pub victim_instance: u32,
    pub bytes_freed: u64,
    pub stalled_task: Option<TaskId>,
    pub reload_obligation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineUtil {
    pub engine: String,
    pub busy_cycles: u64,
    pub utilization: f64,
}

/// Wall-clock footprint of one pipeline round and the engine-class busy
/// cycles its compute tasks contributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundUtil {
    pub round: u32,
    pub span_start: u64,
    pub span_end: u64,
    pub mac_busy_cycles: u64,
    pub vec_busy_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub task: TaskId,
    pub engine: String,
    pub kind: String,
    pub block: u32,
    pub sub: u32,
    pub round: u32,
    pub start: u64,
    pub end: u64,
}

/// Complete result of one simulation: resolved inputs, end-to-end cycles,
/// energy, traffic counters, capacity-pressure events, and utilization.
/// Serialization is field-ordered and timestamp-free, so equal runs produce
/// byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scheduler: String,
    pub shape: WorkloadShape,
    pub tiling: TilingConfig,
    pub cores: usize,
    pub hardware: HardwareSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub total_cycles: u64,
    pub energy: EnergyBreakdown,
    pub counters: AccessCounters,
    pub overwrite_events: Vec<OverwriteEvent>,
    pub engine_utilization: Vec<EngineUtil>,
    pub round_utilization: Vec<RoundUtil>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRow>>,
}

impl SimulationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Tab-separated trace export, one row per task in (start, engine, id)
    /// order, or None when the trace was not collected.
    pub fn trace_tsv(&self) -> Option<String> {
        let rows = self.trace.as_ref()?;
        let mut out = String::from("task\tengine\tkind\tblock\tsub\tround\tstart\tend\n");
        for r in rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.task, r.engine, r.kind, r.block, r.sub, r.round, r.start, r.end
            ));
        }
        Some(out)
    }
}
