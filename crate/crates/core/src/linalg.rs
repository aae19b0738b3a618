//! Dense row-major matrices and vectors over `f64`, elementwise
//! nonlinearities, a temperature softmax restricted to a support set, and a
//! counter-based random number generator.
//!
//! Nothing here tries to be fast. The model sizes this crate targets are a
//! few hundred units wide, where straightforward loops are good enough.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite matrix entry {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape("Matrix::from_rows", cols, r.len()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                axpy(a, other.row(k), out_row);
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::shape(
                "matvec",
                format!("{}x{}", self.rows, self.cols),
                format!("len {}", v.len()),
            ));
        }
        let mut out = vec![0.0; self.rows];
        self.matvec_acc(v, &mut out);
        Ok(Vector(out))
    }

    /// `out += self · v`. Caller guarantees shapes.
    #[inline]
    pub(crate) fn matvec_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(i), v);
        }
    }

    /// `out += selfᵀ · v`. Caller guarantees shapes.
    #[inline]
    pub(crate) fn matvec_t_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                axpy(vi, self.row(i), out);
            }
        }
    }

    /// `self += a ⊗ b` (outer product). Caller guarantees shapes.
    #[inline]
    pub(crate) fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            if ai != 0.0 {
                let cols = self.cols;
                axpy(ai, b, &mut self.data[i * cols..(i + 1) * cols]);
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Appends `extra` columns produced by `fill(row, new_col_index)`.
    pub(crate) fn append_columns(&mut self, extra: usize, mut fill: impl FnMut() -> f64) {
        let new_cols = self.cols + extra;
        let mut data = Vec::with_capacity(self.rows * new_cols);
        let mut fresh: Vec<f64> = Vec::with_capacity(self.rows * extra);
        // Draw column by column so the values of a new column do not depend on
        // how many rows follow it.
        for _ in 0..extra {
            for _ in 0..self.rows {
                fresh.push(fill());
            }
        }
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend((0..extra).map(|k| fresh[k * self.rows + i]));
        }
        self.cols = new_cols;
        self.data = data;
    }

    pub(crate) fn append_rows(&mut self, extra: usize, mut fill: impl FnMut() -> f64) {
        self.data
            .extend((0..extra * self.cols).map(|_| fill()));
        self.rows += extra;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sigmoid(&self) -> Vector {
        Vector(self.0.iter().map(|&v| sigmoid(v)).collect())
    }

    pub fn tanh(&self) -> Vector {
        Vector(self.0.iter().map(|v| v.tanh()).collect())
    }

    pub fn hadamard(&self, other: &Vector) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::shape("hadamard", self.len(), other.len()));
        }
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect(),
        ))
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl std::ops::Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Softmax of `logits / temperature` over the entries where `support` is
/// set. Entries outside the support are exactly zero and do not take part in
/// the normalization.
pub fn softmax_t(logits: &[f64], temperature: f64, support: &[bool]) -> Result<Vector> {
    if logits.len() != support.len() {
        return Err(Error::shape("softmax_t", logits.len(), support.len()));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let active: Vec<usize> = (0..logits.len()).filter(|&i| support[i]).collect();
    if active.is_empty() {
        return Err(Error::Domain("softmax over an empty support".into()));
    }
    let scaled: Vec<f64> = active.iter().map(|&i| logits[i] / temperature).collect();
    let probs = softmax_dense(&scaled);
    let mut out = vec![0.0; logits.len()];
    for (&i, p) in active.iter().zip(probs) {
        out[i] = p;
    }
    Ok(Vector(out))
}

/// Plain softmax over every entry of `z`.
pub(crate) fn softmax_dense(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log softmax(z)[k]`, computed stably.
pub(crate) fn log_softmax_at(z: &[f64], k: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z[k] - lse
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator: draw `k` is a pure function of `(seed, k)`
/// (the SplitMix64 output function applied to `seed + k·γ`), so streams
/// are reproducible on every platform and can be forked by label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent child stream identified by `(label, index)`. Forking does
    /// not advance the parent.
    pub fn fork(&self, label: &str, index: u64) -> Rng {
        // FNV-1a over the label bytes
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        let key = mix64(self.seed ^ mix64(h ^ mix64(index.wrapping_add(GOLDEN_GAMMA))));
        Rng::new(key)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.next_f64();
        // rounding can land exactly on `hi` for tiny ranges
        if v >= hi {
            lo
        } else {
            v
        }
    }

    /// Standard normal via Box–Muller (one draw per call, two uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Matrix of independent draws from `[lo, hi)`.
pub fn seeded_uniform(rng: &mut Rng, lo: f64, hi: f64, rows: usize, cols: usize) -> Result<Matrix> {
    if !(lo < hi) {
        return Err(Error::Domain(format!("empty range [{lo}, {hi})")));
    }
    let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
    Matrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    #[test]
    fn identity_and_zero_products() {
        let b = Matrix::from_rows(&[vec![1.5, -2.0, 3.0], vec![0.25, 4.0, -1.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&b).unwrap(), b);
        assert_eq!(Matrix::zeros(2, 2).matmul(&b).unwrap(), Matrix::zeros(2, 3));
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().as_slice(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "{msg}");
    }

    #[test]
    fn elementwise_ops() {
        assert_eq!(Vector(vec![0.0, 0.0]).sigmoid().0, vec![0.5, 0.5]);
        assert_eq!(Vector(vec![0.0]).tanh().0, vec![0.0]);
        let h = Vector(vec![2.0, 3.0]).hadamard(&Vector(vec![4.0, 5.0])).unwrap();
        assert_eq!(h.0, vec![8.0, 15.0]);
        assert!(Vector(vec![1.0]).hadamard(&Vector(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_t(&[0.3, 0.3, 0.3], 1.0, &[true; 3]).unwrap();
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let p = softmax_t(&[10.0, -10.0], 1.0, &[true, true]).unwrap();
        assert!(p[0] > 0.999_999);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // [1, 2] at T = 2: p0 = 1 / (1 + e^{(2-1)/2})
        let p = softmax_t(&[1.0, 2.0], 2.0, &[true, true]).unwrap();
        let p0 = 1.0 / (1.0 + (0.5f64).exp());
        assert!((p[0] - p0).abs() < 1e-15);
        assert!((p[1] - (1.0 - p0)).abs() < 1e-15);
    }

    #[test]
    fn softmax_support_excludes_inactive() {
        let p = softmax_t(&[5.0, 1.0, 100.0], 1.0, &[true, true, false]).unwrap();
        assert_eq!(p[2], 0.0);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(softmax_t(&[1.0, 2.0], 1.0, &[false, false]).is_err());
        assert!(softmax_t(&[1.0], 0.0, &[true]).is_err());
    }

    #[test]
    fn seeded_uniform_reproducible() {
        let a = seeded_uniform(&mut Rng::new(9), -1.0, 1.0, 3, 4).unwrap();
        let b = seeded_uniform(&mut Rng::new(9), -1.0, 1.0, 3, 4).unwrap();
        let c = seeded_uniform(&mut Rng::new(10), -1.0, 1.0, 3, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(seeded_uniform(&mut Rng::new(1), 1.0, 1.0, 1, 1).is_err());
    }

    #[test]
    fn seeded_uniform_mean() {
        let m = seeded_uniform(&mut Rng::new(2024), 0.0, 1.0, 100, 100).unwrap();
        let mean = m.as_slice().iter().sum::<f64>() / 1e4;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
        assert!(m.as_slice().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn rng_stream_is_fixed() {
        // Pinned first draws: a change here breaks reproducibility of every
        // stored run.
        let mut r = Rng::new(0);
        let first: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        let mut r2 = Rng::new(0);
        assert_eq!(first, (0..3).map(|_| r2.next_u64()).collect::<Vec<_>>());
        assert_eq!(first[0], mix64(GOLDEN_GAMMA));
        let f1 = Rng::new(5).fork("a", 0);
        let f2 = Rng::new(5).fork("a", 1);
        let f3 = Rng::new(5).fork("b", 0);
        assert_ne!(f1, f2);
        assert_ne!(f1, f3);
    }

    #[test]
    fn append_columns_keeps_old_entries() {
        let mut m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut k = 10.0;
        m.append_columns(2, || {
            k += 1.0;
            k
        });
        assert_eq!(m.shape(), (2, 4));
        assert_eq!(m.row(0), &[1.0, 2.0, 11.0, 13.0]);
        assert_eq!(m.row(1), &[3.0, 4.0, 12.0, 14.0]);
    }

    fn small_matrix(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-3.0f64..3.0, r * c)
            .prop_map(move |d| Matrix::new(r, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_associative(a in small_matrix(3, 4), b in small_matrix(4, 2), c in small_matrix(2, 5)) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) < 1e-9);
        }

        #[test]
        fn softmax_is_distribution_and_shift_invariant(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..12),
            mask_bits in proptest::collection::vec(any::<bool>(), 12),
            shift in -100.0f64..100.0,
            t in 0.1f64..5.0,
        ) {
            let n = logits.len();
            let mut support: Vec<bool> = mask_bits[..n].to_vec();
            support[0] = true;
            let p = softmax_t(&logits, t, &support).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..n {
                if !support[i] { prop_assert_eq!(p[i], 0.0); }
                prop_assert!(p[i] >= 0.0);
            }
            let shifted: Vec<f64> = logits.iter().zip(&support)
                .map(|(&l, &s)| if s { l + shift } else { l }).collect();
            let q = softmax_t(&shifted, t, &support).unwrap();
            for i in 0..n {
                prop_assert!((p[i] - q[i]).abs() < 1e-12);
            }
        }
    }
}
