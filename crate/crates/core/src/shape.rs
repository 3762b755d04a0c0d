use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of one multi-head attention workload.
///
/// `element_bytes` is the storage width used for every byte-level account
/// (DRAM traffic, on-chip residency, energy); arithmetic itself always runs
/// in f64. Default accounting width is 2 (FP16).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadShape {
    pub batch: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub embed: usize,
    pub element_bytes: usize,
}

impl WorkloadShape {
    pub fn new(batch: usize, heads: usize, seq_len: usize, embed: usize) -> Result<Self> {
        Self::with_element_bytes(batch, heads, seq_len, embed, 2)
    }

    pub fn with_element_bytes(
        batch: usize,
        heads: usize,
        seq_len: usize,
        embed: usize,
        element_bytes: usize,
    ) -> Result<Self> {
        let shape = WorkloadShape { batch, heads, seq_len, embed, element_bytes };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch", self.batch),
            ("heads", self.heads),
            ("seq_len", self.seq_len),
            ("embed", self.embed),
        ] {
            if v == 0 {
                return Err(Error::Shape(format!("{name} must be at least 1")));
            }
        }
        if ![1, 2, 4, 8].contains(&self.element_bytes) {
            return Err(Error::Shape(format!(
                "element_bytes must be 1, 2, 4, or 8, got {}",
                self.element_bytes
            )));
        }
        Ok(())
    }

    /// Q/K/V/O each hold batch*heads*seq_len*embed elements.
    pub fn qkv_elems(&self) -> u64 {
        self.batch as u64 * self.heads as u64 * self.seq_len as u64 * self.embed as u64
    }

    /// C and P each hold batch*heads*seq_len^2 elements.
    pub fn score_elems(&self) -> u64 {
        self.batch as u64 * self.heads as u64 * self.seq_len as u64 * self.seq_len as u64
    }

    pub fn qkv_bytes(&self) -> u64 {
        self.qkv_elems() * self.element_bytes as u64
    }

    pub fn score_bytes(&self) -> u64 {
        self.score_elems() * self.element_bytes as u64
    }
}

impl std::fmt::Display for WorkloadShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "B={} H={} N={} E={}",
            self.batch, self.heads, self.seq_len, self.embed
        )
    }
}

/// Block sizes for the four tiled dimensions: batch, heads, query rows, and
/// key/value rows. Ragged tail blocks are allowed everywhere (ceiling
/// semantics), so none of these must divide the matching workload dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TilingConfig {
    pub b_b: usize,
    pub h_h: usize,
    pub n_q: usize,
    pub n_kv: usize,
}

impl TilingConfig {
    pub fn new(b_b: usize, h_h: usize, n_q: usize, n_kv: usize) -> Self {
        TilingConfig { b_b, h_h, n_q, n_kv }
    }

    pub fn validate(&self, shape: &WorkloadShape) -> Result<()> {
        let checks = [
            ("B_b", self.b_b, shape.batch),
            ("H_h", self.h_h, shape.heads),
            ("N_Q", self.n_q, shape.seq_len),
            ("N_KV", self.n_kv, shape.seq_len),
        ];
        for (name, v, dim) in checks {
            if v == 0 {
                return Err(Error::Config(format!("tiling {name} must be at least 1")));
            }
            if v > dim {
                return Err(Error::Config(format!(
                    "tiling {name}={v} exceeds its workload dimension {dim}"
                )));
            }
        }
        Ok(())
    }

    /// Number of row blocks: ceil(B/B_b) * ceil(H/H_h) * ceil(N/N_Q).
    pub fn t_r(&self, shape: &WorkloadShape) -> usize {
        shape.batch.div_ceil(self.b_b)
            * shape.heads.div_ceil(self.h_h)
            * shape.seq_len.div_ceil(self.n_q)
    }

    /// Number of key/value column slices: ceil(N/N_KV).
    pub fn t_c(&self, shape: &WorkloadShape) -> usize {
        shape.seq_len.div_ceil(self.n_kv)
    }

    /// Softmax row granularity: N_Q one-row batches per block row.
    pub fn t_l(&self) -> usize {
        self.n_q
    }

    pub fn as_tuple(&self) -> (usize, usize, usize, usize) {
        (self.b_b, self.h_h, self.n_q, self.n_kv)
    }
}

impl std::fmt::Display for TilingConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.b_b, self.h_h, self.n_q, self.n_kv)
    }
}

/// One (batch group, head group) pair. Row blocks that share a group also
/// share K and V, which is what makes sub-block residency reuse possible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub index: usize,
    pub batch0: usize,
    pub bb: usize,
    pub head0: usize,
    pub hh: usize,
}

impl Group {
    /// Independent (batch, head) instances inside this group.
    pub fn instances(&self) -> usize {
        self.bb * self.hh
    }
}

/// One row block Q_i: a group plus a contiguous range of query rows.
/// `index` is 1-based to match the C_1..C_Tr naming used in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowBlock {
    pub index: usize,
    pub group: usize,
    pub row0: usize,
    pub rows: usize,
}

/// One key/value column slice K_{.,j} / V_{.,j}. `j` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvSlice {
    pub j: usize,
    pub col0: usize,
    pub cols: usize,
}

/// Splits `dim` into chunks of at most `step` (last chunk ragged).
fn ranges(dim: usize, step: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(dim.div_ceil(step));
    let mut start = 0;
    while start < dim {
        let len = step.min(dim - start);
        out.push((start, len));
        start += len;
    }
    out
}

/// Enumerates groups in (batch group, head group) order.
pub fn groups(shape: &WorkloadShape, tiling: &TilingConfig) -> Vec<Group> {
    let mut out = Vec::new();
    for (batch0, bb) in ranges(shape.batch, tiling.b_b) {
        for (head0, hh) in ranges(shape.heads, tiling.h_h) {
            out.push(Group { index: out.len(), batch0, bb, head0, hh });
        }
    }
    out
}

/// Enumerates the T_r row blocks with the sequence dimension fastest, so
/// blocks sharing a (batch, head) group are adjacent.
pub fn row_blocks(shape: &WorkloadShape, tiling: &TilingConfig) -> Vec<RowBlock> {
    let gs = groups(shape, tiling);
    let mut out = Vec::new();
    for g in &gs {
        for (row0, rows) in ranges(shape.seq_len, tiling.n_q) {
            out.push(RowBlock { index: out.len() + 1, group: g.index, row0, rows });
        }
    }
    out
}

/// Enumerates the T_c key/value column slices.
pub fn kv_slices(shape: &WorkloadShape, tiling: &TilingConfig) -> Vec<KvSlice> {
    ranges(shape.seq_len, tiling.n_kv)
        .into_iter()
        .enumerate()
        .map(|(idx, (col0, cols))| KvSlice { j: idx + 1, col0, cols })
        .collect()
}
