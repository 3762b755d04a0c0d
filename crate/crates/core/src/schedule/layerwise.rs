use super::{BufferKind, Engine, GraphBuilder, TaskGraph, TaskId, TaskKind, Work};

/// Whole-operator execution in three sequential phases: all score blocks are
/// computed and spilled to DRAM, then reloaded for softmax and spilled again,
/// then reloaded for the value matmul. Every chunk's operands arrive in one
/// combined transfer, the next chunk's transfer waits for the current chunk's
/// compute, and the compute tasks of all three phases form a single chain.
pub(crate) fn build(mut b: GraphBuilder) -> TaskGraph {
    let blocks = b.blocks.clone();
    let slices = b.slices.clone();
    let mac = Engine::Mac(0);
    let vec = Engine::Vec(0);

    let mut chain: Option<TaskId> = None;
    let mut gate: Option<TaskId> = None;
    let mut store_c = Vec::with_capacity(blocks.len());

    // Phase 1: C = Q K^T per chunk, spilled to DRAM as it completes.
    for block in &blocks {
        let g = block.group;
        let idx = block.index as u32;
        let q = b.add_buffer(BufferKind::Q, idx, g as u32, 0, 1, b.q_bytes(block));
        let k_tiles: Vec<_> = slices
            .iter()
            .map(|s| b.add_buffer(BufferKind::K, idx, g as u32, s.j as u32, idx, b.kv_bytes(g, s)))
            .collect();
        let c = b.add_buffer(BufferKind::C, idx, g as u32, 0, 1, b.c_bytes(block));
        let load_bytes = b.q_bytes(block)
            + slices.iter().map(|s| b.kv_bytes(g, s)).sum::<u64>();
        let mut targets = vec![q];
        targets.extend_from_slice(&k_tiles);
        let load = b.add_task(
            Engine::DmaIn,
            TaskKind::LoadQ,
            idx,
            g as u32,
            0,
            1,
            load_bytes,
            Work::None,
            &[],
            &targets,
        );
        if let Some(prev) = gate {
            b.dep(prev, load);
        }
        let mut last = None;
        for s in &slices {
            let work = b.qk_work(block, s);
            let t = b.add_task(
                mac,
                TaskKind::QkMatmul,
                idx,
                g as u32,
                s.j as u32,
                1,
                0,
                work,
                &[q, k_tiles[s.j - 1]],
                &[c],
            );
            b.dep(load, t);
            if let Some(prev) = chain {
                b.dep(prev, t);
            }
            chain = Some(t);
            last = Some(t);
        }
        let last = last.expect("at least one key slice");
        let sc = b.add_task(
            Engine::DmaOut,
            TaskKind::StoreC,
            idx,
            g as u32,
            0,
            1,
            b.c_bytes(block),
            Work::None,
            &[c],
            &[],
        );
        b.dep(last, sc);
        store_c.push(sc);
        gate = Some(last);
    }

    // Phase 2: reload each score chunk, softmax it in place, spill it back.
    let mut store_p = Vec::with_capacity(blocks.len());
    let mut gate = None;
    for block in &blocks {
        let g = block.group;
        let idx = block.index as u32;
        let c2 = b.add_buffer(BufferKind::C, idx, g as u32, 0, 2, b.c_bytes(block));
        let lc = b.add_task(
            Engine::DmaIn,
            TaskKind::LoadC,
            idx,
            g as u32,
            0,
            2,
            b.c_bytes(block),
            Work::None,
            &[],
            &[c2],
        );
        b.dep(store_c[block.index - 1], lc);
        b.dep(gate.unwrap_or(store_c[blocks.len() - 1]), lc);
        let work = b.softmax_work(block);
        let sm = b.add_task(vec, TaskKind::Softmax, idx, g as u32, 0, 2, 0, work, &[c2], &[]);
        b.dep(lc, sm);
        if let Some(prev) = chain {
            b.dep(prev, sm);
        }
        chain = Some(sm);
        let sp = b.add_task(
            Engine::DmaOut,
            TaskKind::StoreP,
            idx,
            g as u32,
            0,
            2,
            b.c_bytes(block),
            Work::None,
            &[c2],
            &[],
        );
        b.dep(sm, sp);
        store_p.push(sp);
        gate = Some(sm);
    }

    // Phase 3: reload each probability chunk with its V tiles, accumulate O.
    let mut gate = None;
    for block in &blocks {
        let g = block.group;
        let idx = block.index as u32;
        let p3 = b.add_buffer(BufferKind::P, idx, g as u32, 0, 3, b.c_bytes(block));
        let v_tiles: Vec<_> = slices
            .iter()
            .map(|s| b.add_buffer(BufferKind::V, idx, g as u32, s.j as u32, idx, b.kv_bytes(g, s)))
            .collect();
        let o = b.add_buffer(BufferKind::O, idx, g as u32, 0, 1, b.o_bytes(block));
        let load_bytes = b.c_bytes(block)
            + slices.iter().map(|s| b.kv_bytes(g, s)).sum::<u64>();
        let mut targets = vec![p3];
        targets.extend_from_slice(&v_tiles);
        let lp = b.add_task(
            Engine::DmaIn,
            TaskKind::LoadP,
            idx,
            g as u32,
            0,
            3,
            load_bytes,
            Work::None,
            &[],
            &targets,
        );
        b.dep(store_p[block.index - 1], lp);
        b.dep(gate.unwrap_or(store_p[blocks.len() - 1]), lp);
        let mut last = None;
        for s in &slices {
            let work = b.pv_work(block, s);
            let t = b.add_task(
                mac,
                TaskKind::PvMatmul,
                idx,
                g as u32,
                s.j as u32,
                3,
                0,
                work,
                &[p3, v_tiles[s.j - 1]],
                &[o],
            );
            b.dep(lp, t);
            if let Some(prev) = chain {
                b.dep(prev, t);
            }
            chain = Some(t);
            last = Some(t);
        }
        let last = last.expect("at least one value slice");
        let so = b.add_task(
            Engine::DmaOut,
            TaskKind::StoreO,
            idx,
            g as u32,
            0,
            3,
            b.o_bytes(block),
            Work::None,
            &[o],
            &[],
        );
        b.dep(last, so);
        gate = Some(last);
    }

    b.finish(false)
}
