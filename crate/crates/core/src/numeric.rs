//! Dense vectors and matrices, parameter-set plumbing and seeded randomness.
//!
//! Everything here is 64-bit. Shapes never broadcast: every binary operation
//! checks that its operands agree exactly and reports both shapes otherwise.

use std::fmt;
use std::ops::{Deref, DerefMut};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense column vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Vector(vec![value; dim])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        self.check_same(other, "dot")?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// `self - other`.
    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        self.check_same(other, "sub")?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Vector) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Vector) -> Result<Vector> {
        self.check_same(other, "hadamard")?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect()))
    }

    fn check_same(&self, other: &Vector, op: &'static str) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::shape(op, format!("[{}]", self.dim()), format!("[{}]", other.dim())));
        }
        Ok(())
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

/// A dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}x{}]", self.rows, self.cols)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix construction",
                format!("[{rows}x{cols}]"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("matrix construction", format!("{cols} columns"), format!("{} columns", row.len())));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vector> {
        if self.cols != x.len() {
            return Err(Error::shape("matvec", self, format!("[{}]", x.len())));
        }
        let mut out = vec![0.0; self.rows];
        self.matvec_acc(x, &mut out);
        Ok(Vector(out))
    }

    /// `out += self * x` with shapes already validated by the caller.
    pub(crate) fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `out += self^T * y` with shapes already validated by the caller.
    pub(crate) fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if *yi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += yi * w;
            }
        }
    }

    /// `self += a * b^T` with shapes already validated by the caller.
    pub(crate) fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if *ai == 0.0 {
                continue;
            }
            for (r, bj) in row.iter_mut().zip(b) {
                *r += ai * bj;
            }
        }
    }
}

/// `w * x`, the product feeding every gate pre-activation.
pub fn matvec(w: &Matrix, x: &Vector) -> Result<Vector> {
    w.matvec(x)
}

/// Uniform initialization on `[lo, hi)`; bit-reproducible for a given seed.
pub fn uniform_init(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Result<Matrix> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("uniform_init requires lo < hi, got [{lo}, {hi})")));
    }
    let data = (0..rows * cols).map(|_| rng.uniform_range(lo, hi)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Anything that owns a fixed list of real-valued buffers: single tensors,
/// whole parameter sets, and gradients shaped like them.
pub trait ParamBuffers {
    fn buffers(&self) -> Vec<&[f64]>;
    fn buffers_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_values(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    /// Global L2 norm over every buffer.
    fn global_norm(&self) -> f64 {
        self.buffers()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for buf in self.buffers_mut() {
            for v in buf.iter_mut() {
                *v *= factor;
            }
        }
    }

    fn fill(&mut self, value: f64) {
        for buf in self.buffers_mut() {
            buf.fill(value);
        }
    }

    fn all_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Checks that two parameter sets have identical buffer layouts.
pub fn same_layout<A: ParamBuffers + ?Sized, B: ParamBuffers + ?Sized>(a: &A, b: &B) -> bool {
    let (a, b) = (a.buffers(), b.buffers());
    a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
}

/// `acc += factor * other`, buffer by buffer.
pub fn add_scaled<P: ParamBuffers + ?Sized>(acc: &mut P, factor: f64, other: &P) -> Result<()> {
    if !same_layout(acc, other) {
        return Err(Error::shape("add_scaled", "accumulator layout", "operand layout"));
    }
    for (dst, src) in acc.buffers_mut().into_iter().zip(other.buffers()) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += factor * s;
        }
    }
    Ok(())
}

impl ParamBuffers for Vector {
    fn buffers(&self) -> Vec<&[f64]> {
        vec![&self.0]
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.0]
    }
}

impl ParamBuffers for Matrix {
    fn buffers(&self) -> Vec<&[f64]> {
        vec![&self.data]
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.data]
    }
}

impl<T: ParamBuffers> ParamBuffers for [T] {
    fn buffers(&self) -> Vec<&[f64]> {
        self.iter().flat_map(|t| t.buffers()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.iter_mut().flat_map(|t| t.buffers_mut()).collect()
    }
}

impl<T: ParamBuffers> ParamBuffers for Vec<T> {
    fn buffers(&self) -> Vec<&[f64]> {
        self.as_slice().buffers()
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.as_mut_slice().buffers_mut()
    }
}

/// Rescales `grads` in place when their global L2 norm exceeds `threshold`
/// and returns the norm measured before clipping.
pub fn clip_by_global_norm<P: ParamBuffers + ?Sized>(grads: &mut P, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::invalid(format!("clip threshold must be positive, got {threshold}")));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    let norm = grads.global_norm();
    if norm > threshold {
        grads.scale(threshold / norm);
    }
    Ok(norm)
}

/// Seeded pseudo-random source.
///
/// The generator is ChaCha8 (`rand_chacha`), seeded from a `u64` through the
/// `rand_core` PCG32 seed expansion. Derived quantities are produced by the
/// fixed conversions below so that the draw sequence does not depend on the
/// platform word size:
///
/// * `uniform()`: top 53 bits of `next_u64`, scaled by 2^-53, giving `[0, 1)`.
/// * `below(n)`: rejection sampling on `next_u64` against the largest multiple of `n`.
/// * `normal()`: Box-Muller on two `uniform()` draws (cosine branch only).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A generator for an independent stream identified by `stream`,
    /// derived from this generator's seed only (not its current position).
    pub fn derive(&self, stream: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// A draw from `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let v = lo + (hi - lo) * self.uniform();
            // rounding can land exactly on `hi` for some ranges
            if v < hi {
                return v;
            }
        }
    }

    /// Unbiased integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle driven by `below`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
