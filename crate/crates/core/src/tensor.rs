use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::shape::WorkloadShape;

/// Dense [batch, heads, rows, cols] tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub batch: usize,
    pub heads: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(batch: usize, heads: usize, rows: usize, cols: usize) -> Self {
        Tensor4 { batch, heads, rows, cols, data: vec![0.0; batch * heads * rows * cols] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn offset(&self, b: usize, h: usize, r: usize, c: usize) -> usize {
        debug_assert!(b < self.batch && h < self.heads && r < self.rows && c < self.cols);
        ((b * self.heads + h) * self.rows + r) * self.cols + c
    }

    #[inline]
    pub fn get(&self, b: usize, h: usize, r: usize, c: usize) -> f64 {
        self.data[self.offset(b, h, r, c)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, h: usize, r: usize, c: usize, v: f64) {
        let i = self.offset(b, h, r, c);
        self.data[i] = v;
    }

    /// Row slice [r, 0..cols] for one (batch, head) plane.
    pub fn row(&self, b: usize, h: usize, r: usize) -> &[f64] {
        let start = self.offset(b, h, r, 0);
        &self.data[start..start + self.cols]
    }

    /// Largest absolute elementwise difference against `other`.
    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "tensor size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Uniform sample in [0, 1) from the top 53 bits of a u64 draw. Built on
/// `RngCore` directly so the values are pinned to the ChaCha8 stream alone,
/// not to any distribution helper's implementation.
#[inline]
fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Fills a tensor with reproducible values in [-1, 1).
pub fn random_tensor(
    batch: usize,
    heads: usize,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor4::zeros(batch, heads, rows, cols);
    for v in &mut t.data {
        *v = 2.0 * unit_f64(&mut rng) - 1.0;
    }
    t
}

/// Q, K, V for a workload, seeded at `seed`, `seed+1`, `seed+2`.
pub fn random_qkv(shape: &WorkloadShape, seed: u64) -> (Tensor4, Tensor4, Tensor4) {
    let q = random_tensor(shape.batch, shape.heads, shape.seq_len, shape.embed, seed);
    let k = random_tensor(shape.batch, shape.heads, shape.seq_len, shape.embed, seed + 1);
    let v = random_tensor(shape.batch, shape.heads, shape.seq_len, shape.embed, seed + 2);
    (q, k, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_layout() {
        let mut t = Tensor4::zeros(2, 3, 4, 5);
        t.set(1, 2, 3, 4, 7.5);
        assert_eq!(t.data[((1 * 3 + 2) * 4 + 3) * 5 + 4], 7.5);
        assert_eq!(t.get(1, 2, 3, 4), 7.5);
    }

    #[test]
    fn seeded_fill_is_reproducible() {
        let a = random_tensor(1, 2, 3, 4, 42);
        let b = random_tensor(1, 2, 3, 4, 42);
        let c = random_tensor(1, 2, 3, 4, 43);
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
        assert!(a.data.iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn qkv_streams_are_distinct() {
        let shape = WorkloadShape::new(1, 1, 4, 4).unwrap();
        let (q, k, v) = random_qkv(&shape, 7);
        assert_ne!(q.data, k.data);
        assert_ne!(k.data, v.data);
    }

    #[test]
    fn max_abs_diff_finds_worst_element() {
        let mut a = Tensor4::zeros(1, 1, 2, 2);
        let mut b = Tensor4::zeros(1, 1, 2, 2);
        a.set(0, 0, 1, 1, 3.0);
        b.set(0, 0, 1, 1, 2.5);
        b.set(0, 0, 0, 0, 0.25);
        assert_eq!(a.max_abs_diff(&b), 0.5);
    }
}
