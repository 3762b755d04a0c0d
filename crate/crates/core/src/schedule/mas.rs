use super::{BufferKind, Engine, GraphBuilder, TaskGraph, TaskId, TaskKind, Work};

/// Semi-synchronous pipelined execution: row blocks are dealt round-robin
/// across cores, and on each core block k occupies three consecutive rounds
/// (scores in k, softmax in k+1, value matmul in k+2), so in steady state a
/// round runs one block's value matmul, the next block's softmax, and the
/// block after that's score matmuls concurrently. Compute in round r+1 of a
/// core waits for all of round r via the simulator's round barrier; block
/// k's last value matmul additionally precedes block k+2's score matmuls,
/// which share its round. The softmax output lives in its own P buffer,
/// claimed mid-flight by the memory guardian when L1 is short.
pub(crate) fn build(mut b: GraphBuilder) -> TaskGraph {
    let blocks = b.blocks.clone();
    let slices = b.slices.clone();

    let mut k_buf = vec![Vec::new(); b.groups.len()];
    let mut v_buf = vec![Vec::new(); b.groups.len()];
    let mut kv_load = vec![Vec::new(); b.groups.len()];
    for g in 0..b.groups.len() {
        let first = blocks.iter().find(|blk| blk.group == g).expect("group has a block");
        let fb = first.index as u32;
        let round = b.local_pos(first.index);
        for s in &slices {
            let kb = b.add_buffer(BufferKind::K, 0, g as u32, s.j as u32, 1, b.kv_bytes(g, s));
            let vb = b.add_buffer(BufferKind::V, 0, g as u32, s.j as u32, 1, b.kv_bytes(g, s));
            let lk = b.add_task(
                Engine::DmaIn,
                TaskKind::LoadK,
                fb,
                g as u32,
                s.j as u32,
                round,
                b.kv_bytes(g, s),
                Work::None,
                &[],
                &[kb],
            );
            let lv = b.add_task(
                Engine::DmaIn,
                TaskKind::LoadV,
                fb,
                g as u32,
                s.j as u32,
                round,
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
    // Per core, indexed by local position: last score matmul (Q prefetch
    // gating) and last value matmul (cross-block serialization).
    let mut qk_last_local: Vec<Vec<TaskId>> = vec![Vec::new(); b.cores];
    let mut pv_last_local: Vec<Vec<TaskId>> = vec![Vec::new(); b.cores];

    for block in &blocks {
        let g = block.group;
        let idx = block.index as u32;
        let core = b.core_of(block.index);
        let k_local = b.local_pos(block.index);
        let mac = Engine::Mac(core);
        let vec_e = Engine::Vec(core);

        let q = b.add_buffer(BufferKind::Q, idx, g as u32, 0, 1, b.q_bytes(block));
        let lq = b.add_task(
            Engine::DmaIn,
            TaskKind::LoadQ,
            idx,
            g as u32,
            0,
            k_local,
            b.q_bytes(block),
            Work::None,
            &[],
            &[q],
        );
        if k_local > 2 {
            b.dep(qk_last_local[core as usize][(k_local - 3) as usize], lq);
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
                k_local,
                0,
                work,
                &[q, k_buf[g][s.j - 1]],
                &[c],
            );
            b.dep(lq, t);
            b.dep(kv_load[g][s.j - 1].0, t);
            qks.push(t);
        }
        // The value matmul two positions back shares this round: it must
        // finish before these score matmuls claim the engine.
        if k_local > 2 {
            let prev_pv = pv_last_local[core as usize][(k_local - 3) as usize];
            for &t in &qks {
                b.dep(prev_pv, t);
            }
        }
        if first_qk[g].is_none() {
            first_qk[g] = Some(qks[0]);
        }
        let p = b.add_buffer(BufferKind::P, idx, g as u32, 0, 1, b.c_bytes(block));
        let work = b.softmax_work(block);
        let sm = b.add_task(
            vec_e,
            TaskKind::Softmax,
            idx,
            g as u32,
            0,
            k_local + 1,
            0,
            work,
            &[c],
            &[p],
        );
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
                k_local + 2,
                0,
                work,
                &[p, v_buf[g][s.j - 1]],
                &[o],
            );
            b.dep(kv_load[g][s.j - 1].1, t);
            match prev {
                Some(pr) => b.dep(pr, t),
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
            k_local + 2,
            b.o_bytes(block),
            Work::None,
            &[o],
            &[],
        );
        b.dep(last, so);
        qk_last_local[core as usize].push(*qks.last().expect("at least one slice"));
        pv_last_local[core as usize].push(last);
    }

    for g in 1..b.groups.len() {
        if let Some(anchor) = first_qk[g - 1] {
            for &(lk, lv) in &kv_load[g] {
                b.dep(anchor, lk);
                b.dep(anchor, lv);
            }
        }
    }

    b.finish(true)
}
