//! Structural checks on the five task-graph builders: task counts, ordering
//! edges, engine placement, byte totals, and the per-dataflow residency
//! floors.

use std::collections::BTreeMap;

use attnsim_core::schedule::{
    build, feasible, max_seq_len, Engine, SchedulerKind, TaskKind, Work, SCHEDULERS,
};
use attnsim_core::shape::{TilingConfig, WorkloadShape};
use proptest::prelude::*;

fn shape(b: usize, h: usize, n: usize, e: usize) -> WorkloadShape {
    WorkloadShape::new(b, h, n, e).unwrap()
}

#[test]
fn degenerate_workload_builds_the_minimal_unfused_graph() {
    let shape = shape(1, 1, 1, 1);
    let tiling = TilingConfig::new(1, 1, 1, 1);
    let g = build(SchedulerKind::LayerWise, &shape, &tiling, 1).unwrap();
    let compute = g.tasks.iter().filter(|t| t.kind.is_compute()).count();
    let dma = g.tasks.iter().filter(|t| !t.kind.is_compute()).count();
    assert_eq!(compute, 3, "one matmul per phase plus one softmax");
    assert_eq!(dma, 6, "each phase loads its inputs and spills its result");
}

#[test]
fn unfused_phases_fully_serialize_compute() {
    let shape = shape(1, 2, 8, 4);
    let tiling = TilingConfig::new(1, 1, 4, 4);
    let g = build(SchedulerKind::LayerWise, &shape, &tiling, 1).unwrap();
    // Walk the dependency edges restricted to compute tasks: every compute
    // task except the first must have a compute predecessor, which makes the
    // compute portion one chain (no two compute tasks can overlap).
    let compute: Vec<u32> =
        g.tasks.iter().filter(|t| t.kind.is_compute()).map(|t| t.id).collect();
    let mut has_pred = BTreeMap::new();
    for &c in &compute {
        has_pred.insert(c, false);
    }
    for &(a, b) in &g.deps {
        if has_pred.contains_key(&a) && has_pred.contains_key(&b) {
            has_pred.insert(b, true);
        }
    }
    let roots = has_pred.values().filter(|v| !**v).count();
    assert_eq!(roots, 1, "all compute tasks hang off one serial chain");
    // And all score matmuls come before all softmaxes, which come before all
    // output matmuls.
    let phase = |k: TaskKind| match k {
        TaskKind::QkMatmul => 0,
        TaskKind::Softmax => 1,
        _ => 2,
    };
    let mut seen = Vec::new();
    for t in &g.tasks {
        if t.kind.is_compute() {
            seen.push(phase(t.kind));
        }
    }
    let mut sorted = seen.clone();
    sorted.sort_unstable();
    assert_eq!(seen, sorted, "phases do not interleave");
}

#[test]
fn softmax_pipeline_never_chains_vector_tasks() {
    let shape = shape(1, 2, 16, 4);
    let tiling = TilingConfig::new(1, 1, 4, 4);
    let g = build(SchedulerKind::SoftPipe, &shape, &tiling, 1).unwrap();
    for &(a, b) in &g.deps {
        let (ta, tb) = (&g.tasks[a as usize], &g.tasks[b as usize]);
        assert!(
            !(ta.kind == TaskKind::Softmax && tb.kind == TaskKind::Softmax),
            "softmax {a} feeds softmax {b}; normalization must pipeline against matmuls"
        );
        assert!(
            !(matches!(ta.engine, Engine::Vec(_)) && matches!(tb.engine, Engine::Vec(_))),
            "vector task {a} feeds vector task {b}"
        );
    }
}

#[test]
fn fused_single_buffer_schedules_order_output_before_next_scores() {
    for kind in [SchedulerKind::Flat, SchedulerKind::Mas] {
        let shape = shape(1, 1, 12, 4);
        let tiling = TilingConfig::new(1, 1, 4, 4);
        let g = build(kind, &shape, &tiling, 1).unwrap();
        let found = g.deps.iter().any(|&(a, b)| {
            g.tasks[a as usize].kind == TaskKind::PvMatmul
                && g.tasks[b as usize].kind == TaskKind::QkMatmul
        });
        assert!(found, "{kind}: no output-before-scores edge between row blocks");
    }
}

#[test]
fn interleaved_schedule_staggers_rounds_per_row_block() {
    let shape = shape(1, 1, 12, 4);
    let tiling = TilingConfig::new(1, 1, 4, 4);
    let g = build(SchedulerKind::Mas, &shape, &tiling, 1).unwrap();
    for t in &g.tasks {
        match t.kind {
            TaskKind::QkMatmul => assert_eq!(t.round, t.block, "scores run in round k"),
            TaskKind::Softmax => {
                assert_eq!(t.round, t.block + 1, "normalization runs in round k+1")
            }
            TaskKind::PvMatmul => {
                assert_eq!(t.round, t.block + 2, "output runs in round k+2")
            }
            _ => {}
        }
    }
    // Block 1's final output matmul must precede block 3's score matmuls so
    // both live score buffers are never needed at once.
    let pv1 = g
        .tasks
        .iter()
        .filter(|t| t.kind == TaskKind::PvMatmul && t.block == 1)
        .max_by_key(|t| t.sub)
        .unwrap()
        .id;
    let qk3: Vec<u32> = g
        .tasks
        .iter()
        .filter(|t| t.kind == TaskKind::QkMatmul && t.block == 3)
        .map(|t| t.id)
        .collect();
    for q in qk3 {
        assert!(
            g.deps.contains(&(pv1, q)),
            "missing edge from block 1 output to block 3 scores"
        );
    }
}

#[test]
fn only_interleaved_softmax_writes_a_separate_buffer() {
    let shape = shape(1, 1, 8, 4);
    let tiling = TilingConfig::new(1, 1, 4, 4);
    for kind in SCHEDULERS {
        let g = build(kind, &shape, &tiling, 1).unwrap();
        for t in &g.tasks {
            if t.kind == TaskKind::Softmax {
                let writes = g.writes_of(t).len();
                if kind == SchedulerKind::Mas {
                    assert_eq!(writes, 1, "{kind}: softmax allocates probabilities");
                } else {
                    assert_eq!(writes, 0, "{kind}: softmax normalizes scores in place");
                }
            }
        }
    }
}

#[test]
fn round_robin_schedules_spread_blocks_over_cores() {
    let shape = shape(1, 4, 16, 4);
    let tiling = TilingConfig::new(1, 1, 4, 4);
    for kind in [SchedulerKind::TileFlow, SchedulerKind::Mas] {
        let g = build(kind, &shape, &tiling, 2).unwrap();
        let cores: std::collections::BTreeSet<u16> =
            g.tasks.iter().filter_map(|t| t.engine.core()).collect();
        assert_eq!(cores.len(), 2, "{kind}: both cores receive work");
        for t in &g.tasks {
            if let Some(c) = t.engine.core() {
                assert_eq!(
                    c as u32,
                    (t.block - 1) % 2,
                    "{kind}: block {} landed on core {c}",
                    t.block
                );
            }
        }
    }
    for kind in [SchedulerKind::LayerWise, SchedulerKind::SoftPipe, SchedulerKind::Flat] {
        let g = build(kind, &shape, &tiling, 2).unwrap();
        for t in &g.tasks {
            if let Some(c) = t.engine.core() {
                assert_eq!(c, 0, "{kind} keeps compute on core 0");
            }
        }
    }
}

#[test]
fn key_value_streams_are_hoisted_only_by_fused_schedules() {
    let shape = shape(1, 1, 16, 4);
    let tiling = TilingConfig::new(1, 1, 4, 4);
    // 4 row blocks, 4 kv slices, 1 group.
    let v_loads = |kind| {
        build(kind, &shape, &tiling, 1)
            .unwrap()
            .tasks
            .iter()
            .filter(|t| t.kind == TaskKind::LoadV)
            .count()
    };
    assert_eq!(v_loads(SchedulerKind::Flat), 4, "hoisted: one load per slice");
    assert_eq!(v_loads(SchedulerKind::TileFlow), 4);
    assert_eq!(v_loads(SchedulerKind::Mas), 4);
    assert_eq!(v_loads(SchedulerKind::SoftPipe), 16, "re-streamed per row block");
}

#[test]
fn every_row_block_stores_exactly_one_output_tile() {
    let shape = shape(2, 3, 10, 4);
    let tiling = TilingConfig::new(1, 2, 4, 4);
    let t_r = tiling.t_r(&shape);
    for kind in SCHEDULERS {
        let g = build(kind, &shape, &tiling, 2).unwrap();
        let stores = g.tasks.iter().filter(|t| t.kind == TaskKind::StoreO).count();
        assert_eq!(stores, t_r, "{kind}: one output store per row block");
    }
}

#[test]
fn spill_traffic_depends_only_on_the_dataflow() {
    let shape = shape(2, 2, 12, 4);
    let tiling = TilingConfig::new(1, 1, 4, 8);
    let out = shape.qkv_bytes();
    let score = shape.score_bytes();
    let expect = [
        (SchedulerKind::LayerWise, 2 * score + out),
        (SchedulerKind::SoftPipe, score + out),
        (SchedulerKind::Flat, out),
        (SchedulerKind::TileFlow, out),
        (SchedulerKind::Mas, out),
    ];
    for (kind, want) in expect {
        let g = build(kind, &shape, &tiling, 2).unwrap();
        assert_eq!(g.dma_out_bytes(), want, "{kind} spill bytes");
        assert_eq!(g.store_o_bytes(), out, "{kind} output bytes");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Every scheduler performs the same compute: the closed-form operation
    /// totals hold for any shape and any tiling.
    #[test]
    fn compute_totals_are_schedule_invariant(
        b in 1usize..=2,
        h in 1usize..=3,
        n in 1usize..=20,
        e in 1usize..=8,
        b_b in 1usize..=2,
        h_h in 1usize..=3,
        n_q in 1usize..=20,
        n_kv in 1usize..=20,
        cores in 1usize..=3,
    ) {
        let shape = shape(b, h, n, e);
        let tiling = TilingConfig::new(
            b_b.min(b), h_h.min(h), n_q.min(n), n_kv.min(n),
        );
        let mac_want = 2 * (b * h * n * n * e) as u64;
        let vec_want = 5 * (b * h * n * n) as u64;
        for kind in SCHEDULERS {
            let g = build(kind, &shape, &tiling, cores).unwrap();
            let (mac, vec) = g.compute_ops();
            prop_assert_eq!(mac, mac_want, "{} MAC ops", kind);
            prop_assert_eq!(vec, vec_want, "{} VEC ops", kind);
        }
    }

    /// The same score, normalization, and output tiles appear in every
    /// schedule; only their ordering differs.
    #[test]
    fn compute_payload_multisets_match_across_schedules(
        n in 1usize..=16,
        e in 1usize..=6,
        n_q in 1usize..=16,
        n_kv in 1usize..=16,
    ) {
        let shape = shape(1, 2, n, e);
        let tiling = TilingConfig::new(1, 1, n_q.min(n), n_kv.min(n));
        let multiset = |kind| {
            let g = build(kind, &shape, &tiling, 2).unwrap();
            let mut items: Vec<(u8, Work)> = g
                .tasks
                .iter()
                .filter(|t| t.kind.is_compute())
                .map(|t| (t.kind.rank(), t.work))
                .collect();
            items.sort_by_key(|(r, w)| (*r, format!("{w:?}")));
            items
        };
        let base = multiset(SchedulerKind::LayerWise);
        for kind in [
            SchedulerKind::SoftPipe,
            SchedulerKind::Flat,
            SchedulerKind::TileFlow,
            SchedulerKind::Mas,
        ] {
            prop_assert_eq!(&multiset(kind), &base, "{} compute payloads differ", kind);
        }
    }

    /// Dependency edges never point from a later round to an earlier one.
    #[test]
    fn rounds_never_run_backwards(
        n in 1usize..=20,
        n_q in 1usize..=20,
        n_kv in 1usize..=20,
        cores in 1usize..=2,
    ) {
        let shape = shape(1, 2, n, 4);
        let tiling = TilingConfig::new(1, 1, n_q.min(n), n_kv.min(n));
        for kind in SCHEDULERS {
            let g = build(kind, &shape, &tiling, cores).unwrap();
            for &(a, bb) in &g.deps {
                prop_assert!(
                    g.tasks[a as usize].round <= g.tasks[bb as usize].round,
                    "{}: edge {} -> {} goes back in rounds", kind, a, bb
                );
            }
        }
    }
}

#[test]
fn residency_floor_matches_worked_capacity_examples() {
    // 5 MiB of L1, two-byte elements, single-head single-batch workloads.
    let l1 = 5 * 1024 * 1024;
    let huge = shape(1, 1, 1 << 20, 64);
    let tiling = TilingConfig::new(1, 1, 1, 1);
    assert!(
        feasible(SchedulerKind::Mas, &huge, &tiling, l1),
        "interleaved dataflow holds two score rows at a million keys"
    );
    let too_big = shape(1, 1, 1 << 21, 64);
    assert!(
        !feasible(SchedulerKind::Mas, &too_big, &tiling, l1),
        "two score rows at two million keys exceed 5 MiB"
    );
    assert!(
        feasible(SchedulerKind::Flat, &too_big, &tiling, l1),
        "single-row dataflow still fits two million keys"
    );
}

#[test]
fn max_sequence_lengths_follow_the_row_budget() {
    let l1 = 5 * 1024 * 1024;
    assert_eq!(max_seq_len(SchedulerKind::Mas, l1, 2), 1_310_720);
    assert_eq!(max_seq_len(SchedulerKind::Flat, l1, 2), 2_621_440);
    assert_eq!(max_seq_len(SchedulerKind::LayerWise, l1, 2), 2_621_440);
    assert_eq!(max_seq_len(SchedulerKind::SoftPipe, l1, 2), 1_310_720);
    assert_eq!(max_seq_len(SchedulerKind::TileFlow, l1, 2), 1_310_720);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Single-row dataflows always reach exactly twice the sequence length
    /// of double-row ones, at any capacity and element width.
    #[test]
    fn single_row_reach_doubles_double_row_reach(
        l1_kib in 1u64..=65_536,
        eb_pow in 0u32..=3,
    ) {
        let l1 = l1_kib * 1024;
        let eb = 1u64 << eb_pow;
        let single = max_seq_len(SchedulerKind::Flat, l1, eb);
        let double = max_seq_len(SchedulerKind::Mas, l1, eb);
        prop_assert_eq!(single, 2 * double);
        prop_assert_eq!(max_seq_len(SchedulerKind::LayerWise, l1, eb), single);
        prop_assert_eq!(max_seq_len(SchedulerKind::SoftPipe, l1, eb), double);
        prop_assert_eq!(max_seq_len(SchedulerKind::TileFlow, l1, eb), double);
    }
}
