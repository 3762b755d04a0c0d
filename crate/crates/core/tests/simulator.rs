//! End-to-end checks on the discrete-event engine model: micro graphs with
//! hand-computable timings, determinism, functional equivalence under every
//! scheduler, behavior under memory pressure, and the self-audit.

use attnsim_core::error::Error;
use attnsim_core::hardware::HardwareSpec;
use attnsim_core::kernels::reference_attention;
use attnsim_core::schedule::{
    build, min_l1_bytes, BufferKind, Engine, GraphBuilder, SchedulerKind, TaskKind, Work,
    SCHEDULERS,
};
use attnsim_core::shape::{TilingConfig, WorkloadShape};
use attnsim_core::sim::{audit::audit, simulate, FunctionalInputs, SimOptions};
use attnsim_core::tensor::random_qkv;

fn micro_shape() -> (WorkloadShape, TilingConfig) {
    (WorkloadShape::new(1, 1, 16, 16).unwrap(), TilingConfig::new(1, 1, 16, 16))
}

/// One matmul tile on a 16x16 array: ceil(16/16)*ceil(16/16)*64 = 64 cycles,
/// then a 512-byte store at 8 bytes per cycle = 64 more.
#[test]
fn single_matmul_runs_in_exactly_its_tile_cycles() {
    let (shape, tiling) = micro_shape();
    let mut b = GraphBuilder::new(SchedulerKind::Flat, &shape, &tiling, 1).unwrap();
    let q = b.add_buffer(BufferKind::Q, 1, 0, 0, 1, 2048);
    let k = b.add_buffer(BufferKind::K, 0, 0, 1, 1, 2048);
    let o = b.add_buffer(BufferKind::O, 1, 0, 0, 1, 512);
    let qk = b.add_task(
        Engine::Mac(0),
        TaskKind::QkMatmul,
        1,
        0,
        1,
        1,
        0,
        Work::Matmul { m: 16, kk: 64, n: 16, instances: 1 },
        &[q, k],
        &[o],
    );
    let so = b.add_task(Engine::DmaOut, TaskKind::StoreO, 1, 0, 0, 1, 512, Work::None, &[o], &[]);
    b.dep(qk, so);
    let g = b.finish(false);
    let hw = HardwareSpec::default();
    let out = simulate(&g, &hw, &SimOptions::default()).unwrap();
    assert_eq!(out.report.total_cycles, 128, "64 compute + 64 store");
    let mac = out
        .report
        .engine_utilization
        .iter()
        .find(|e| e.engine == "mac0")
        .unwrap();
    assert_eq!(mac.busy_cycles, 64);
}

/// Independent MAC and VEC work shares the clock: total time is the longer
/// engine, not the sum.
#[test]
fn independent_engines_run_concurrently() {
    let (shape, tiling) = micro_shape();
    let mut b = GraphBuilder::new(SchedulerKind::Flat, &shape, &tiling, 1).unwrap();
    let q = b.add_buffer(BufferKind::Q, 1, 0, 0, 1, 2048);
    let k = b.add_buffer(BufferKind::K, 0, 0, 1, 1, 2048);
    let o = b.add_buffer(BufferKind::O, 1, 0, 0, 1, 512);
    let c = b.add_buffer(BufferKind::C, 1, 0, 0, 2, 16384);
    let qk = b.add_task(
        Engine::Mac(0),
        TaskKind::QkMatmul,
        1,
        0,
        1,
        1,
        0,
        Work::Matmul { m: 16, kk: 64, n: 16, instances: 1 },
        &[q, k],
        &[o],
    );
    b.add_task(
        Engine::Vec(0),
        TaskKind::Softmax,
        1,
        0,
        0,
        1,
        0,
        Work::SoftmaxRows { rows: 16, row_len: 512, instances: 1 },
        &[c],
        &[],
    );
    let so = b.add_task(Engine::DmaOut, TaskKind::StoreO, 1, 0, 0, 1, 512, Work::None, &[o], &[]);
    b.dep(qk, so);
    let g = b.finish(false);
    let hw = HardwareSpec::default();
    let report = simulate(&g, &hw, &SimOptions::default()).unwrap().report;
    // VEC: 16 rows * (4 + 4) * ceil(512/256) = 256 cycles; MAC path is
    // 64 + 64 and overlaps it entirely.
    assert_eq!(report.total_cycles, 256);
    let busy = |name: &str| {
        report
            .engine_utilization
            .iter()
            .find(|e| e.engine == name)
            .unwrap()
            .busy_cycles
    };
    assert_eq!(busy("mac0"), 64);
    assert_eq!(busy("vec0"), 256);
}

#[test]
fn repeated_runs_produce_identical_reports() {
    let shape = WorkloadShape::new(1, 2, 24, 8).unwrap();
    let tiling = TilingConfig::new(1, 1, 8, 8);
    let hw = HardwareSpec::default();
    let (q, k, v) = random_qkv(&shape, 3);
    let mut jsons = Vec::new();
    let mut tsvs = Vec::new();
    for _ in 0..2 {
        let g = build(SchedulerKind::Mas, &shape, &tiling, 2).unwrap();
        let opts = SimOptions {
            functional: Some(FunctionalInputs { q: &q, k: &k, v: &v }),
            collect_trace: true,
            collect_rounds: true,
            seed: Some(3),
        };
        let out = simulate(&g, &hw, &opts).unwrap();
        jsons.push(out.report.to_json());
        tsvs.push(out.report.trace_tsv());
    }
    assert_eq!(jsons[0], jsons[1], "report JSON must be byte-identical across runs");
    assert_eq!(tsvs[0], tsvs[1], "trace TSV must be byte-identical across runs");
}

/// Every scheduler's simulated execution computes the same attention as the
/// reference kernel, and its counters survive the closed-form audit.
#[test]
fn all_schedulers_compute_correct_attention() {
    let shape = WorkloadShape::new(2, 2, 12, 8).unwrap();
    let tiling = TilingConfig::new(1, 1, 4, 4);
    let hw = HardwareSpec::default();
    let (q, k, v) = random_qkv(&shape, 5);
    let want = reference_attention(&q, &k, &v);
    for kind in SCHEDULERS {
        let g = build(kind, &shape, &tiling, 2).unwrap();
        let opts = SimOptions {
            functional: Some(FunctionalInputs { q: &q, k: &k, v: &v }),
            ..SimOptions::default()
        };
        let out = simulate(&g, &hw, &opts).unwrap();
        let got = out.output.expect("functional run returns the output tensor");
        let diff = got.max_abs_diff(&want);
        assert!(diff < 1e-10, "{kind}: output deviates by {diff:e}");
        let verdict = audit(&g, &out.report);
        assert!(verdict.pass, "{kind}: audit failed: {}", verdict.summary());
    }
}

/// Zero slack: every dataflow must finish when L1 equals its own residency
/// floor exactly, reloading hoisted tiles as needed.
#[test]
fn every_scheduler_completes_at_its_exact_residency_floor() {
    let shape = WorkloadShape::new(1, 2, 24, 8).unwrap();
    let tiling = TilingConfig::new(1, 1, 8, 8);
    let (q, k, v) = random_qkv(&shape, 9);
    let want = reference_attention(&q, &k, &v);
    for kind in SCHEDULERS {
        let mut hw = HardwareSpec::default();
        hw.l1_bytes = min_l1_bytes(kind, &shape, &tiling);
        hw.l0_bytes = hw.l1_bytes.min(64 * 1024) / 2;
        let g = build(kind, &shape, &tiling, 2).unwrap();
        let opts = SimOptions {
            functional: Some(FunctionalInputs { q: &q, k: &k, v: &v }),
            ..SimOptions::default()
        };
        let out = simulate(&g, &hw, &opts)
            .unwrap_or_else(|e| panic!("{kind} deadlocked at its floor: {e}"));
        let diff = out.output.unwrap().max_abs_diff(&want);
        assert!(diff < 1e-10, "{kind}: output deviates by {diff:e} at the floor");
        let verdict = audit(&g, &out.report);
        assert!(verdict.pass, "{kind}: audit failed at floor: {}", verdict.summary());
    }
}

/// Shrinking L1 from fully comfortable down to the floor: runs never
/// deadlock, outputs stay bit-identical, reload traffic matches the logged
/// obligations exactly, and only key/value tiles are ever claimed.
#[test]
fn interleaved_dataflow_degrades_gracefully_under_memory_pressure() {
    let shape = WorkloadShape::new(1, 2, 64, 16).unwrap();
    let tiling = TilingConfig::new(1, 1, 16, 16);
    let kind = SchedulerKind::Mas;
    let floor = min_l1_bytes(kind, &shape, &tiling);
    let comfortable = 4 * floor;
    let (q, k, v) = random_qkv(&shape, 17);
    let mut reference_bits: Option<Vec<u64>> = None;
    let mut squeezed_runs = 0;
    for step in 0..=8u64 {
        let l1 = floor + (comfortable - floor) * step / 8;
        let mut hw = HardwareSpec::default();
        hw.l1_bytes = l1;
        hw.l0_bytes = l1 / 2;
        let g = build(kind, &shape, &tiling, 2).unwrap();
        let opts = SimOptions {
            functional: Some(FunctionalInputs { q: &q, k: &k, v: &v }),
            ..SimOptions::default()
        };
        let out = simulate(&g, &hw, &opts)
            .unwrap_or_else(|e| panic!("deadlock at l1={l1}: {e}"));
        let bits: Vec<u64> = out
            .output
            .unwrap()
            .data
            .iter()
            .map(|x| x.to_bits())
            .collect();
        match &reference_bits {
            None => reference_bits = Some(bits),
            Some(want) => {
                assert_eq!(&bits, want, "output bits changed at l1={l1}");
            }
        }
        let report = out.report;
        let reloads: u64 = report
            .overwrite_events
            .iter()
            .map(|ev| ev.reload_obligation)
            .sum();
        assert_eq!(
            report.counters.dram_read_bytes,
            g.dma_in_bytes() + reloads,
            "read traffic at l1={l1} does not match logged reload obligations"
        );
        for ev in &report.overwrite_events {
            assert!(
                matches!(ev.victim_kind, BufferKind::K | BufferKind::V),
                "non-streamable buffer {:?} was claimed at l1={l1}",
                ev.victim_kind
            );
        }
        if !report.overwrite_events.is_empty() {
            squeezed_runs += 1;
        }
    }
    assert!(squeezed_runs > 0, "the sweep never exercised an overwrite");
}

/// A task whose output cannot fit even after claiming everything claimable
/// is reported as a capacity failure, naming the stuck work.
#[test]
fn impossible_allocation_is_reported_as_a_capacity_deadlock() {
    let shape = WorkloadShape::new(1, 1, 4, 4).unwrap();
    let tiling = TilingConfig::new(1, 1, 4, 4);
    let mut b = GraphBuilder::new(SchedulerKind::LayerWise, &shape, &tiling, 1).unwrap();
    let q = b.add_buffer(BufferKind::Q, 1, 0, 0, 1, 64);
    let c = b.add_buffer(BufferKind::C, 1, 0, 0, 1, 1000);
    let qk = b.add_task(
        Engine::Mac(0),
        TaskKind::QkMatmul,
        1,
        0,
        1,
        1,
        0,
        Work::Matmul { m: 4, kk: 4, n: 4, instances: 1 },
        &[q],
        &[c],
    );
    let so = b.add_task(Engine::DmaOut, TaskKind::StoreO, 1, 0, 0, 1, 32, Work::None, &[c], &[]);
    b.dep(qk, so);
    let g = b.finish(false);
    let mut hw = HardwareSpec::default();
    hw.l1_bytes = 200;
    hw.l0_bytes = 100;
    let err = match simulate(&g, &hw, &SimOptions::default()) {
        Ok(_) => panic!("oversized allocation unexpectedly succeeded"),
        Err(e) => e,
    };
    match err {
        Error::Capacity(msg) => {
            assert!(msg.contains("progress"), "unexpected message: {msg}")
        }
        other => panic!("expected a capacity error, got {other:?}"),
    }
}

fn trace_rows(
    kind: SchedulerKind,
    shape: &WorkloadShape,
    tiling: &TilingConfig,
    cores: usize,
) -> attnsim_core::sim::SimulationReport {
    let hw = HardwareSpec::default();
    let g = build(kind, shape, tiling, cores).unwrap();
    let opts = SimOptions { collect_trace: true, ..SimOptions::default() };
    simulate(&g, &hw, &opts).unwrap().report
}

/// The single inbound DRAM channel serializes loads; busy totals agree with
/// the trace rows when nothing was killed mid-flight.
#[test]
fn trace_is_consistent_with_engine_accounting()  {
    let shape = WorkloadShape::new(1, 2, 48, 8).unwrap();
    let tiling = TilingConfig::new(1, 1, 8, 8);
    let report = trace_rows(SchedulerKind::Mas, &shape, &tiling, 2);
    assert!(report.overwrite_events.is_empty(), "run was expected to be pressure-free");
    let trace = report.trace.as_ref().unwrap();
    for util in &report.engine_utilization {
        let rows: Vec<_> = trace.iter().filter(|r| r.engine == util.engine).collect();
        let total: u64 = rows.iter().map(|r| r.end - r.start).sum();
        assert_eq!(total, util.busy_cycles, "{} busy cycles", util.engine);
        for pair in rows.windows(2) {
            assert!(
                pair[0].end <= pair[1].start,
                "{} rows overlap: {:?} then {:?}",
                util.engine,
                pair[0],
                pair[1]
            );
        }
    }
    let makespan = trace.iter().map(|r| r.end).max().unwrap();
    assert_eq!(makespan, report.total_cycles);
}

fn engines_overlap(report: &attnsim_core::sim::SimulationReport) -> bool {
    let trace = report.trace.as_ref().unwrap();
    let mac: Vec<(u64, u64)> = trace
        .iter()
        .filter(|r| r.engine.starts_with("mac"))
        .map(|r| (r.start, r.end))
        .collect();
    trace
        .iter()
        .filter(|r| r.engine.starts_with("vec"))
        .any(|v| mac.iter().any(|m| v.start < m.1 && m.0 < v.end))
}

/// Single-score-buffer dataflows serialize MAC against VEC; only the
/// double-buffered interleaved pipeline lets them run at the same time.
#[test]
fn pipelining_shows_up_as_engine_overlap() {
    let shape = WorkloadShape::new(1, 1, 48, 8).unwrap();
    let tiling = TilingConfig::new(1, 1, 8, 8);
    for kind in [SchedulerKind::LayerWise, SchedulerKind::Flat] {
        let r = trace_rows(kind, &shape, &tiling, 1);
        assert!(!engines_overlap(&r), "{kind}: one score buffer forces serial compute");
    }
    let mas = trace_rows(SchedulerKind::Mas, &shape, &tiling, 1);
    assert!(engines_overlap(&mas), "expected matmul/softmax overlap");
}

#[test]
fn audit_catches_tampered_counters() {
    let shape = WorkloadShape::new(1, 1, 8, 4).unwrap();
    let tiling = TilingConfig::new(1, 1, 4, 4);
    let hw = HardwareSpec::default();
    let g = build(SchedulerKind::Flat, &shape, &tiling, 1).unwrap();
    let mut report = simulate(&g, &hw, &SimOptions::default()).unwrap().report;
    assert!(audit(&g, &report).pass);
    report.counters.vec_ops += 1;
    let verdict = audit(&g, &report);
    assert!(!verdict.pass, "audit accepted a falsified counter");
    assert!(verdict.summary().contains("VEC"), "summary names the failing check");
}
