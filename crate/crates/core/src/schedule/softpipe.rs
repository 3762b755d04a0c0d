use super::{BufferKind, Engine, GraphBuilder, TaskGraph, TaskId, TaskKind, Work};

/// Two-phase execution with software pipelining inside phase one: while the
/// MAC engine fills score block i+1, the VEC engine runs softmax on block i
/// and streams the result to DRAM. Phase one runs under the simulator's
/// round barrier, so the MAC stays within one block of the VEC engine
/// instead of running arbitrarily far ahead. Phase two reloads each
/// probability chunk with its V tiles and runs the value matmuls serially.
pub(crate) fn build(mut b: GraphBuilder) -> TaskGraph {
    let blocks = b.blocks.clone();
    let slices = b.slices.clone();
    let t_r = blocks.len();
    let mac = Engine::Mac(0);
    let vec = Engine::Vec(0);

    // Hoisted K tiles: one copy per (group, slice), reused by every block of
    // the group and refetched only if evicted.
    let mut k_buf = vec![Vec::new(); b.groups.len()];
    let mut k_load = vec![Vec::new(); b.groups.len()];
    for g in 0..b.groups.len() {
        let first_block = blocks
            .iter()
            .find(|blk| blk.group == g)
            .expect("every group has a block")
            .index as u32;
        for s in &slices {
            let buf = b.add_buffer(BufferKind::K, 0, g as u32, s.j as u32, 1, b.kv_bytes(g, s));
            let load = b.add_task(
                Engine::DmaIn,
                TaskKind::LoadK,
                first_block,
                g as u32,
                s.j as u32,
                first_block,
                b.kv_bytes(g, s),
                Work::None,
                &[],
                &[buf],
            );
            k_buf[g].push(buf);
            k_load[g].push(load);
        }
    }

    let mut first_qk: Vec<Option<TaskId>> = vec![None; b.groups.len()];
    let mut qk_last: Vec<TaskId> = Vec::with_capacity(t_r);
    let mut store_p: Vec<TaskId> = Vec::with_capacity(t_r);

    for block in &blocks {
        let g = block.group;
        let idx = block.index as u32;
        let q = b.add_buffer(BufferKind::Q, idx, g as u32, 0, 1, b.q_bytes(block));
        let lq = b.add_task(
            Engine::DmaIn,
            TaskKind::LoadQ,
            idx,
            g as u32,
            0,
            idx,
            b.q_bytes(block),
            Work::None,
            &[],
            &[q],
        );
        if block.index > 2 {
            b.dep(qk_last[block.index - 3], lq);
        }
        let c = b.add_buffer(BufferKind::C, idx, g as u32, 0, 1, b.c_bytes(block));
        let mut qks = Vec::with_capacity(slices.len());
        for s in &slices {
            let work = b.qk_work(block, s);
            let t = b.add_task(
                mac,
                TaskKind::QkMatmul,
                idx,
                g as u32,
                s.j as u32,
                idx,
                0,
                work,
                &[q, k_buf[g][s.j - 1]],
                &[c],
            );
            b.dep(lq, t);
            b.dep(k_load[g][s.j - 1], t);
            qks.push(t);
        }
        if first_qk[g].is_none() {
            first_qk[g] = Some(qks[0]);
        }
        let work = b.softmax_work(block);
        let sm =
            b.add_task(vec, TaskKind::Softmax, idx, g as u32, 0, idx + 1, 0, work, &[c], &[]);
        for &t in &qks {
            b.dep(t, sm);
        }
        let sp = b.add_task(
            Engine::DmaOut,
            TaskKind::StoreP,
            idx,
            g as u32,
            0,
            idx + 1,
            b.c_bytes(block),
            Work::None,
            &[c],
            &[],
        );
        b.dep(sm, sp);
        qk_last.push(*qks.last().expect("at least one slice"));
        store_p.push(sp);
    }

    // K tiles for group g wait until group g-1 has started computing, so
    // prefetch never outruns the pipeline by more than one group.
    for g in 1..b.groups.len() {
        if let Some(anchor) = first_qk[g - 1] {
            for &load in &k_load[g] {
                b.dep(anchor, load);
            }
        }
    }

    // Phase 2: chunk-serial probability reload and value matmuls.
    let base = t_r as u32 + 1;
    let mut pv_last: Option<TaskId> = None;
    for block in &blocks {
        let g = block.group;
        let idx = block.index as u32;
        let round = base + idx;
        let gate = if block.index == 1 { store_p[t_r - 1] } else { pv_last.expect("prior chunk") };
        let p2 = b.add_buffer(BufferKind::P, idx, g as u32, 0, 2, b.c_bytes(block));
        let lp = b.add_task(
            Engine::DmaIn,
            TaskKind::LoadP,
            idx,
            g as u32,
            0,
            round,
            b.c_bytes(block),
            Work::None,
            &[],
            &[p2],
        );
        b.dep(store_p[block.index - 1], lp);
        b.dep(gate, lp);
        let o = b.add_buffer(BufferKind::O, idx, g as u32, 0, 1, b.o_bytes(block));
        let mut prev_in_block: Option<TaskId> = None;
        for s in &slices {
            let v = b.add_buffer(BufferKind::V, idx, g as u32, s.j as u32, idx, b.kv_bytes(g, s));
            let lv = b.add_task(
                Engine::DmaIn,
                TaskKind::LoadV,
                idx,
                g as u32,
                s.j as u32,
                round,
                b.kv_bytes(g, s),
                Work::None,
                &[],
                &[v],
            );
            b.dep(gate, lv);
            let work = b.pv_work(block, s);
            let t = b.add_task(
                mac,
                TaskKind::PvMatmul,
                idx,
                g as u32,
                s.j as u32,
                round,
                0,
                work,
                &[p2, v],
                &[o],
            );
            b.dep(lp, t);
            b.dep(lv, t);
            if let Some(prev) = prev_in_block {
                b.dep(prev, t);
            } else if let Some(prev) = pv_last {
                b.dep(prev, t);
            }
            prev_in_block = Some(t);
        }
        let last = prev_in_block.expect("at least one slice");
        let so = b.add_task(
            Engine::DmaOut,
            TaskKind::StoreO,
            idx,
            g as u32,
            0,
            round,
            b.o_bytes(block),
            Work::None,
            &[o],
            &[],
        );
        b.dep(last, so);
        pv_last = Some(last);
    }

    b.finish(true)
}
