use crate::shape::{kv_slices, row_blocks, groups, TilingConfig, WorkloadShape};
use crate::tensor::Tensor4;

/// Plain row-major matrix used for block-level arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// In-place numerically stable softmax over one row: subtract the row max
/// before exponentiating so large scores cannot overflow.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax over a whole matrix.
pub fn softmax_rows(mat: &mut Mat) {
    for r in 0..mat.rows {
        softmax_row(mat.row_mut(r));
    }
}

/// C = A * B^T. Shapes: A is (m x k), B is (n x k), result (m x n).
pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols, "inner dimensions differ");
    let mut c = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            let mut acc = 0.0;
            for t in 0..a.cols {
                acc += a.at(i, t) * b.at(j, t);
            }
            c.set(i, j, acc);
        }
    }
    c
}

/// acc += A * B. Shapes: A is (m x k), B is (k x n), acc (m x n).
pub fn matmul_nn_acc(acc: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!(acc.rows, a.rows, "accumulator rows differ");
    assert_eq!(acc.cols, b.cols, "accumulator cols differ");
    for i in 0..a.rows {
        for t in 0..a.cols {
            let av = a.at(i, t);
            for j in 0..b.cols {
                let cur = acc.at(i, j);
                acc.set(i, j, cur + av * b.at(t, j));
            }
        }
    }
}

/// Copies rows [row0, row0+rows) of one (batch, head) plane into a matrix.
pub fn plane_rows(t: &Tensor4, b: usize, h: usize, row0: usize, rows: usize) -> Mat {
    let mut m = Mat::zeros(rows, t.cols);
    for r in 0..rows {
        m.row_mut(r).copy_from_slice(t.row(b, h, row0 + r));
    }
    m
}

/// Unblocked attention over the whole workload: C = QK^T, P = softmax(C)
/// row-wise, O = PV, independently per (batch, head) plane.
pub fn reference_attention(q: &Tensor4, k: &Tensor4, v: &Tensor4) -> Tensor4 {
    assert_eq!(q.rows, k.rows, "Q and K sequence lengths differ");
    assert_eq!(k.rows, v.rows, "K and V sequence lengths differ");
    let mut out = Tensor4::zeros(q.batch, q.heads, q.rows, v.cols);
    for b in 0..q.batch {
        for h in 0..q.heads {
            let qm = plane_rows(q, b, h, 0, q.rows);
            let km = plane_rows(k, b, h, 0, k.rows);
            let vm = plane_rows(v, b, h, 0, v.rows);
            let mut p = matmul_nt(&qm, &km);
            softmax_rows(&mut p);
            let mut o = Mat::zeros(q.rows, v.cols);
            for i in 0..p.rows {
                for t in 0..p.cols {
                    let pv = p.at(i, t);
                    for j in 0..vm.cols {
                        let cur = o.at(i, j);
                        o.set(i, j, cur + pv * vm.at(t, j));
                    }
                }
            }
            for r in 0..q.rows {
                for c in 0..v.cols {
                    out.set(b, h, r, c, o.at(r, c));
                }
            }
        }
    }
    out
}

/// Blocked attention that walks row blocks and key/value slices in the same
/// order the schedulers emit work: per row block, score sub-tiles in
/// ascending slice order, one full-row softmax, then output accumulation in
/// ascending slice order. The result is independent of the tiling.
pub fn tiled_attention(
    shape: &WorkloadShape,
    tiling: &TilingConfig,
    q: &Tensor4,
    k: &Tensor4,
    v: &Tensor4,
) -> Tensor4 {
    let gs = groups(shape, tiling);
    let blocks = row_blocks(shape, tiling);
    let slices = kv_slices(shape, tiling);
    let mut out = Tensor4::zeros(shape.batch, shape.heads, shape.seq_len, shape.embed);
    for block in &blocks {
        let g = &gs[block.group];
        for db in 0..g.bb {
            for dh in 0..g.hh {
                let b = g.batch0 + db;
                let h = g.head0 + dh;
                let qm = plane_rows(q, b, h, block.row0, block.rows);
                let mut c = Mat::zeros(block.rows, shape.seq_len);
                for s in &slices {
                    let km = plane_rows(k, b, h, s.col0, s.cols);
                    let part = matmul_nt(&qm, &km);
                    for r in 0..part.rows {
                        for cc in 0..part.cols {
                            c.set(r, s.col0 + cc, part.at(r, cc));
                        }
                    }
                }
                softmax_rows(&mut c);
                let mut o = Mat::zeros(block.rows, shape.embed);
                for s in &slices {
                    let vm = plane_rows(v, b, h, s.col0, s.cols);
                    for i in 0..block.rows {
                        for t in 0..s.cols {
                            let pv = c.at(i, s.col0 + t);
                            for jj in 0..shape.embed {
                                let cur = o.at(i, jj);
                                o.set(i, jj, cur + pv * vm.at(t, jj));
                            }
                        }
                    }
                }
                for r in 0..block.rows {
                    for cc in 0..shape.embed {
                        out.set(b, h, block.row0 + r, cc, o.at(r, cc));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::random_qkv;

    #[test]
    fn softmax_row_known_values() {
        let mut row = [1.0, 2.0, 3.0];
        softmax_row(&mut row);
        let expected = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (got, want) in row.iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "got {got}, want {want}");
        }
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_handles_large_scores() {
        let mut row = [1000.0, 1001.0];
        softmax_row(&mut row);
        assert!(row.iter().all(|v| v.is_finite()));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matmul_nt_small_case() {
        let a = Mat { rows: 1, cols: 2, data: vec![3.0, 4.0] };
        let b = Mat { rows: 1, cols: 2, data: vec![1.0, 2.0] };
        let c = matmul_nt(&a, &b);
        assert_eq!(c.data, vec![11.0]);
    }

    #[test]
    fn matmul_nn_acc_accumulates() {
        let a = Mat { rows: 1, cols: 2, data: vec![1.0, 2.0] };
        let b = Mat { rows: 2, cols: 2, data: vec![1.0, 0.0, 0.0, 1.0] };
        let mut acc = Mat { rows: 1, cols: 2, data: vec![10.0, 20.0] };
        matmul_nn_acc(&mut acc, &a, &b);
        assert_eq!(acc.data, vec![11.0, 22.0]);
    }

    #[test]
    fn tiled_matches_reference_on_ragged_tiling() {
        let shape = WorkloadShape::new(2, 3, 10, 8).unwrap();
        let (q, k, v) = random_qkv(&shape, 11);
        let reference = reference_attention(&q, &k, &v);
        for tiling in [
            TilingConfig::new(1, 1, 10, 10),
            TilingConfig::new(2, 3, 4, 3),
            TilingConfig::new(1, 2, 3, 7),
        ] {
            let tiled = tiled_attention(&shape, &tiling, &q, &k, &v);
            let diff = tiled.max_abs_diff(&reference);
            assert!(diff < 1e-12, "tiling {tiling} diverged by {diff}");
        }
    }
}
