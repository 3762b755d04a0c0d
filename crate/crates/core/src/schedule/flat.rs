use super::{BufferKind, Engine, GraphBuilder, TaskGraph, TaskId, TaskKind, Work};

/// Fused per-block execution: each row block runs scores, softmax, and value
/// matmul back to back, and only the block's final output leaves the chip.
/// Block i+1's score matmuls wait for block i's value matmuls, so MAC and
/// VEC never overlap, but DMA prefetch (Q two blocks ahead, K/V hoisted per
/// group) runs concurrently with compute.
pub(crate) fn build(mut b: GraphBuilder) -> TaskGraph {
    let blocks = b.blocks.clone();
    let slices = b.slices.clone();
    let mac = Engine::Mac(0);
    let vec = Engine::Vec(0);

    let mut k_buf = vec![Vec::new(); b.groups.len()];
    let mut v_buf = vec![Vec::new(); b.groups.len()];
    let mut kv_load = vec![Vec::new(); b.groups.len()];
    for g in 0..b.groups.len() {
        let first_block = blocks
            .iter()
            .find(|blk| blk.group == g)
            .expect("every group has a block")
            .index as u32;
        for s in &slices {
            let kb = b.add_buffer(BufferKind::K, 0, g as u32, s.j as u32, 1, b.kv_bytes(g, s));
            let vb = b.add_buffer(BufferKind::V, 0, g as u32, s.j as u32, 1, b.kv_bytes(g, s));
            let lk = b.add_task(
                Engine::DmaIn,
                TaskKind::LoadK,
                first_block,
                g as u32,
                s.j as u32,
                first_block,
                b.kv_bytes(g, s),
                Work::None,
                &[],
                &[kb],
            );
            let lv = b.add_task(
                Engine::DmaIn,
                TaskKind::LoadV,
                first_block,
                g as u32,
                s.j as u32,
                first_block,
                b.kv_bytes(g, s),
                Work::None,
                &[],
                &[vb],
            );
            k_buf[g].push(kb);
            v_buf[g].push(vb);
            kv_load[g].push((lk, lv));
        }
    }

    let mut first_qk: Vec<Option<TaskId>> = vec![None; b.groups.len()];
    let mut pv_last: Vec<TaskId> = Vec::with_capacity(blocks.len());

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
            b.dep(pv_last[block.index - 3], lq);
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
            b.dep(kv_load[g][s.j - 1].0, t);
            if block.index > 1 {
                b.dep(pv_last[block.index - 2], t);
            }
            qks.push(t);
        }
        if first_qk[g].is_none() {
            first_qk[g] = Some(qks[0]);
        }
        let work = b.softmax_work(block);
        let sm = b.add_task(vec, TaskKind::Softmax, idx, g as u32, 0, idx, 0, work, &[c], &[]);
        for &t in &qks {
            b.dep(t, sm);
        }
        let o = b.add_buffer(BufferKind::O, idx, g as u32, 0, 1, b.o_bytes(block));
        let mut prev: Option<TaskId> = None;
        for s in &slices {
            let work = b.pv_work(block, s);
            let t = b.add_task(
                mac,
                TaskKind::PvMatmul,
                idx,
                g as u32,
                s.j as u32,
                idx,
                0,
                work,
                &[c, v_buf[g][s.j - 1]],
                &[o],
            );
            b.dep(kv_load[g][s.j - 1].1, t);
            match prev {
                Some(p) => b.dep(p, t),
                None => b.dep(sm, t),
            }
            prev = Some(t);
        }
        let last = prev.expect("at least one slice");
        let so = b.add_task(
            Engine::DmaOut,
            TaskKind::StoreO,
            idx,
            g as u32,
            0,
            idx,
            b.o_bytes(block),
            Work::None,
            &[o],
            &[],
        );
        b.dep(last, so);
        pv_last.push(last);
    }

    for g in 1..b.groups.len() {
        if let Some(anchor) = first_qk[g - 1] {
            for &(lk, lv) in &kv_load[g] {
                b.dep(anchor, lk);
                b.dep(anchor, lv);
            }
        }
    }

    b.finish(false)
}
