//! Dense vectors and matrices over `f64`, plus the seedable random stream
//! every stochastic component draws from.
//!
//! Public constructors reject non-finite entries, so a `DenseVector` or
//! `DenseMatrix` in hand is always finite. Arithmetic is plain sequential
//! `f64` with a fixed summation order; identical inputs give bitwise
//! identical outputs.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().all(|v| v.is_finite()) {
            Ok(Self(data))
        } else {
            Err(Error::NonFinite("DenseVector::new"))
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn filled(n: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self(vec![value; n])
    }

    /// Caller guarantees finiteness.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self(data)
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        check_dim("dot", self.len(), other.len())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn sq_norm(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    /// `a * self + b * other`, elementwise.
    pub fn axpby(&self, a: f64, other: &DenseVector, b: f64) -> Result<DenseVector> {
        check_dim("axpby", self.len(), other.len())?;
        let out: Vec<f64> = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(x, y)| a * x + b * y)
            .collect();
        DenseVector::new(out)
    }

    pub fn scale(&self, a: f64) -> Result<DenseVector> {
        DenseVector::new(self.0.iter().map(|x| a * x).collect())
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        DenseVector::new(v)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::InvalidParameter("matrix size overflows usize".into()))?;
        check_dim("DenseMatrix::new", expected, data.len())?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("DenseMatrix::new"));
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            check_dim("DenseMatrix::from_rows", c, row.len())?;
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("DenseMatrix::set"));
        }
        self.data[r * self.cols + c] = value;
        Ok(())
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn matvec(&self, v: &DenseVector) -> Result<DenseVector> {
        matvec(self, v)
    }

    /// `W^T v`.
    pub fn matvec_t(&self, v: &DenseVector) -> Result<DenseVector> {
        check_dim("matvec_t", self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let vr = v[r];
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * vr;
            }
        }
        DenseVector::new(out)
    }
}

pub fn matvec(w: &DenseMatrix, v: &DenseVector) -> Result<DenseVector> {
    check_dim("matvec", w.cols, v.len())?;
    let out: Vec<f64> = (0..w.rows).map(|r| dot(w.row(r), v.as_slice())).collect();
    DenseVector::new(out)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seeded random stream backed by ChaCha8.
///
/// Streams are identified by `(seed, stream)`; `split(i)` derives a child
/// stream id from the parent id and `i`, starting a fresh ChaCha stream with
/// the same key. Distinct stream ids never overlap, and a split depends only
/// on the parent's identity, not on how much of the parent was consumed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    pub fn split(&self, index: u64) -> RngStream {
        let child = splitmix64(self.stream ^ splitmix64(index.wrapping_add(0xD1B5_4A32_D192_ED03)));
        Self::with_stream(self.seed, child)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }
}

/// `n` i.i.d. standard normal draws.
pub fn gauss_sample(rng: &mut RngStream, n: usize) -> DenseVector {
    DenseVector::from_raw((0..n).map(|_| rng.standard_normal()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matvec(w: &DenseMatrix, v: &DenseVector) -> Vec<f64> {
        let mut out = vec![0.0; w.rows()];
        for (r, o) in out.iter_mut().enumerate() {
            for c in 0..w.cols() {
                *o += w.get(r, c) * v[c];
            }
        }
        out
    }

    #[test]
    fn matvec_identity_and_hand_values() {
        let v = DenseVector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(matvec(&DenseMatrix::identity(2), &v).unwrap().as_slice(), &[3.0, 4.0]);
        let w = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ones = DenseVector::filled(2, 1.0);
        assert_eq!(matvec(&w, &ones).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_matches_naive_loop_exactly() {
        let mut rng = RngStream::new(7);
        let w = DenseMatrix::new(5, 3, gauss_sample(&mut rng, 15).into_vec()).unwrap();
        let v = gauss_sample(&mut rng, 3);
        assert_eq!(matvec(&w, &v).unwrap().as_slice(), naive_matvec(&w, &v).as_slice());
    }

    #[test]
    fn matvec_rejects_mismatch() {
        let w = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            matvec(&w, &DenseVector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn constructors_reject_non_finite() {
        assert!(DenseVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(DenseMatrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn gauss_sample_moments_and_determinism() {
        let n = 1_000_000;
        let a = gauss_sample(&mut RngStream::new(42), n);
        let b = gauss_sample(&mut RngStream::new(42), n);
        assert_eq!(a, b);
        let mean = a.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((0.99..=1.01).contains(&var), "var {var}");
    }

    #[test]
    fn split_streams_are_reproducible_and_distinct() {
        let root = RngStream::new(3);
        let mut a1 = root.split(1);
        let mut a2 = root.split(1);
        let mut b = root.split(2);
        let xa1: Vec<f64> = (0..8).map(|_| a1.uniform()).collect();
        let xa2: Vec<f64> = (0..8).map(|_| a2.uniform()).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.uniform()).collect();
        assert_eq!(xa1, xa2);
        assert_ne!(xa1, xb);
        // consuming the parent does not change its children
        let mut consumed = root.clone();
        consumed.uniform();
        let mut a3 = consumed.split(1);
        assert_eq!(a3.uniform(), xa1[0]);
    }

    #[test]
    fn uniform_open_never_hits_endpoints() {
        let mut rng = RngStream::new(0);
        for _ in 0..100_000 {
            let u = rng.uniform_open();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    proptest! {
        #[test]
        fn matvec_is_linear(
            seed in 0u64..1000,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let mut rng = RngStream::new(seed);
            let w = DenseMatrix::new(4, 6, gauss_sample(&mut rng, 24).into_vec()).unwrap();
            let u = gauss_sample(&mut rng, 6);
            let v = gauss_sample(&mut rng, 6);
            let lhs = matvec(&w, &u.axpby(a, &v, b).unwrap()).unwrap();
            let rhs = matvec(&w, &u).unwrap().axpby(a, &matvec(&w, &v).unwrap(), b).unwrap();
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                let scale = l.abs().max(r.abs()).max(1.0);
                prop_assert!((l - r).abs() <= 1e-12 * scale);
            }
        }
    }
}
