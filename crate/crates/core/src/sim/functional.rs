use std::collections::BTreeMap;

use crate::kernels::{matmul_nn_acc, matmul_nt, plane_rows, softmax_rows, Mat};
use crate::schedule::{TaskGraph, TaskKind, TileTask};
use crate::shape::{Group, KvSlice, RowBlock};
use crate::tensor::Tensor4;

/// Input tensors threaded through the compute tasks when the simulator runs
/// with data checking enabled.
#[derive(Clone, Copy)]
pub struct FunctionalInputs<'a> {
    pub q: &'a Tensor4,
    pub k: &'a Tensor4,
    pub v: &'a Tensor4,
}

struct ScoreSlot {
    mats: Vec<Mat>,
    present: Vec<bool>,
}

/// Carries real tensor data through the task graph as tasks complete.
/// Matmul and softmax tasks compute on their tiles; transfers are data
/// no-ops. Output accumulation always reduces partial products in slice
/// order, so results are independent of completion timing, and every read
/// asserts its producer already ran, catching missing dependency edges.
pub(crate) struct FunctionalState<'a> {
    inputs: FunctionalInputs<'a>,
    blocks: Vec<RowBlock>,
    groups: Vec<Group>,
    slices: Vec<KvSlice>,
    embed: usize,
    score_slots: Vec<Option<ScoreSlot>>,
    prob_slots: Vec<Option<Vec<Mat>>>,
    partials: Vec<BTreeMap<u32, Vec<Mat>>>,
    out: Tensor4,
}

impl<'a> FunctionalState<'a> {
    pub fn new(graph: &TaskGraph, inputs: FunctionalInputs<'a>) -> Self {
        let shape = &graph.shape;
        let blocks = crate::shape::row_blocks(shape, &graph.tiling);
        let groups = crate::shape::groups(shape, &graph.tiling);
        let slices = crate::shape::kv_slices(shape, &graph.tiling);
        let t_r = blocks.len();
        FunctionalState {
            inputs,
            blocks,
            groups,
            slices,
            embed: shape.embed,
            score_slots: (0..t_r).map(|_| None).collect(),
            prob_slots: (0..t_r).map(|_| None).collect(),
            partials: (0..t_r).map(|_| BTreeMap::new()).collect(),
            out: Tensor4::zeros(shape.batch, shape.heads, shape.seq_len, shape.embed),
        }
    }

    /// (batch, head) plane of the i-th instance within a group, in row-major
    /// instance order.
    fn plane(&self, group: &Group, i: usize) -> (usize, usize) {
        (group.batch0 + i / group.hh, group.head0 + i % group.hh)
    }

    pub fn on_complete(&mut self, task: &TileTask) {
        match task.kind {
            TaskKind::QkMatmul => self.score_tile(task),
            TaskKind::Softmax => self.softmax_block(task),
            TaskKind::PvMatmul => self.value_tile(task),
            TaskKind::StoreO => self.reduce_output(task),
            _ => {}
        }
    }

    fn score_tile(&mut self, task: &TileTask) {
        let block = self.blocks[task.block as usize - 1];
        let group = self.groups[block.group];
        let slice = self.slices[task.sub as usize - 1];
        let n = self.inputs.q.rows;
        let slot = self.score_slots[task.block as usize - 1].get_or_insert_with(|| ScoreSlot {
            mats: (0..group.instances()).map(|_| Mat::zeros(block.rows, n)).collect(),
            present: vec![false; self.slices.len()],
        });
        for i in 0..group.instances() {
            let (b, h) = (group.batch0 + i / group.hh, group.head0 + i % group.hh);
            let qm = plane_rows(self.inputs.q, b, h, block.row0, block.rows);
            let km = plane_rows(self.inputs.k, b, h, slice.col0, slice.cols);
            let prod = matmul_nt(&qm, &km);
            for r in 0..block.rows {
                for c in 0..slice.cols {
                    slot.mats[i].set(r, slice.col0 + c, prod.at(r, c));
                }
            }
        }
        slot.present[task.sub as usize - 1] = true;
    }

    fn softmax_block(&mut self, task: &TileTask) {
        let idx = task.block as usize - 1;
        let slot = self.score_slots[idx]
            .take()
            .unwrap_or_else(|| panic!("softmax of block {} ran before its scores", task.block));
        assert!(
            slot.present.iter().all(|&p| p),
            "softmax of block {} ran with score slices missing: {:?}",
            task.block,
            slot.present
        );
        let mut mats = slot.mats;
        for m in &mut mats {
            softmax_rows(m);
        }
        self.prob_slots[idx] = Some(mats);
    }

    fn value_tile(&mut self, task: &TileTask) {
        let block = self.blocks[task.block as usize - 1];
        let group = self.groups[block.group];
        let slice = self.slices[task.sub as usize - 1];
        let probs = self.prob_slots[task.block as usize - 1]
            .as_ref()
            .unwrap_or_else(|| panic!("value matmul of block {} ran before softmax", task.block));
        let mut mats = Vec::with_capacity(group.instances());
        for (i, pm) in probs.iter().enumerate() {
            let (b, h) = self.plane(&group, i);
            let mut p_cols = Mat::zeros(block.rows, slice.cols);
            for r in 0..block.rows {
                for c in 0..slice.cols {
                    p_cols.set(r, c, pm.at(r, slice.col0 + c));
                }
            }
            let vm = plane_rows(self.inputs.v, b, h, slice.col0, slice.cols);
            let mut acc = Mat::zeros(block.rows, self.embed);
            matmul_nn_acc(&mut acc, &p_cols, &vm);
            mats.push(acc);
        }
        self.partials[task.block as usize - 1].insert(task.sub, mats);
    }

    fn reduce_output(&mut self, task: &TileTask) {
        let idx = task.block as usize - 1;
        let block = self.blocks[idx];
        let group = self.groups[block.group];
        let parts = std::mem::take(&mut self.partials[idx]);
        assert_eq!(
            parts.len(),
            self.slices.len(),
            "output store of block {} ran with value tiles missing",
            task.block
        );
        for (_, mats) in parts {
            for (i, m) in mats.iter().enumerate() {
                let (b, h) = self.plane(&group, i);
                for r in 0..block.rows {
                    for c in 0..self.embed {
                        let cur = self.out.get(b, h, block.row0 + r, c);
                        self.out.set(b, h, block.row0 + r, c, cur + m.at(r, c));
                    }
                }
            }
        }
        self.prob_slots[idx] = None;
    }

    pub fn finish(self) -> Tensor4 {
        self.out
    }
}
