//! Numeric substrate: seeded random streams, Gaussian sampling, stable scalar
//! functions, small dense matrices and finite-difference oracles.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Seeded ChaCha8 stream.
///
/// A `(seed, stream)` pair names an independent sequence; the word position
/// inside that sequence is the only mutable state, so the whole generator can
/// be captured in a checkpoint and restored bit-exactly on any platform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub algorithm: RngAlgorithm,
    pub seed: u64,
    pub stream: u64,
    /// Position in 32-bit words, stored as a decimal string (JSON has no u128).
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RngAlgorithm {
    Chacha8,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent sub-stream of `seed`, e.g. one per (experiment, minibatch).
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    /// Derives a child generator keyed by a fresh draw from this stream.
    pub fn fork(&mut self) -> Self {
        Self::new(self.next_u64())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            algorithm: RngAlgorithm::Chacha8,
            seed: self.seed,
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: &RngState) -> Self {
        let mut rng = Self::with_stream(state.seed, state.stream);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Lemire's multiply-shift; the bias is < n / 2^64.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Box-Muller pair of independent standard normals.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    pub fn normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    /// Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}

/// `d` independent standard-normal draws.
pub fn sample_std_normal<T: Real>(rng: &mut Rng, d: usize) -> Result<Vec<T>> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "sample dimension must be >= 1".into(),
        ));
    }
    let mut out = Vec::with_capacity(d);
    while out.len() < d {
        let (a, b) = rng.normal_pair();
        out.push(T::lit(a));
        if out.len() < d {
            out.push(T::lit(b));
        }
    }
    Ok(out)
}

/// `log(1 + e^x)`, never overflowing and clamped to stay strictly positive.
pub fn softplus<T: Real>(x: T) -> T {
    let y = if x > T::lit(30.0) {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    y.max(T::min_positive_value())
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log sigmoid(x) = -softplus(-x)` without the positivity clamp.
pub fn log_sigmoid<T: Real>(x: T) -> T {
    if x < T::lit(-30.0) {
        x - x.exp().ln_1p()
    } else {
        -(-x).exp().ln_1p()
    }
}

pub fn logit<T: Real>(x: T) -> Result<T> {
    if !(x > T::zero() && x < T::one()) {
        return Err(Error::Domain(format!("logit needs 0 < x < 1, got {x}")));
    }
    Ok((x / (T::one() - x)).ln())
}

pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() || !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// `|a - b| / max(1, |a|, |b|)`
pub fn rel_err<T: Real>(a: T, b: T) -> T {
    (a - b).abs() / T::one().max(a.abs()).max(b.abs())
}

/// Largest coordinate-wise [`rel_err`] between two vectors.
pub fn max_rel_err<T: Real>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(T::zero(), T::max)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn fd_gradient<T: Real, F>(f: F, x: &[T], h: T) -> Result<Vec<T>>
where
    F: Fn(&[T]) -> T,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("finite-difference probe of coordinate {i}"),
                sample: None,
            });
        }
        grad.push((fp - fm) / (h + h));
    }
    Ok(grad)
}

/// Central-difference Jacobian; row `i` holds `d f_i / d x`.
pub fn fd_jacobian<T: Real, F>(f: F, x: &[T], h: T) -> Result<Mat<T>>
where
    F: Fn(&[T]) -> Vec<T>,
{
    let m = f(x).len();
    let n = x.len();
    let mut jac = Mat::zeros(m, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        probe[j] = x[j] + h;
        let fp = f(&probe);
        probe[j] = x[j] - h;
        let fm = f(&probe);
        probe[j] = x[j];
        for i in 0..m {
            let v = (fp[i] - fm[i]) / (h + h);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("finite-difference Jacobian column {j}"),
                    sample: None,
                });
            }
            jac[(i, j)] = v;
        }
    }
    Ok(jac)
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(
                "matrix dimensions must be positive".into(),
            ));
        }
        check_dim(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `A x`
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| crate::scalar::dot(self.row(i), x))
            .collect()
    }

    /// `Aᵀ y`
    pub fn matvec_t(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != T::zero() {
                crate::scalar::axpy(yi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Determinant by LU with partial pivoting. Square matrices only.
    pub fn det(&self) -> T {
        assert_eq!(self.rows, self.cols, "determinant of a non-square matrix");
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = T::one();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().partial_cmp(&a[j * n + k].abs()).unwrap())
                .unwrap();
            if a[p * n + k] == T::zero() {
                return T::zero();
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                det = -det;
            }
            let pivot = a[k * n + k];
            det *= pivot;
            for i in k + 1..n {
                let f = a[i * n + k] / pivot;
                for j in k..n {
                    let v = a[k * n + j];
                    a[i * n + j] -= f * v;
                }
            }
        }
        det
    }

    /// Lower-triangular `L` with `L Lᵀ = self` for a symmetric positive
    /// definite matrix.
    pub fn cholesky(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::InvalidArgument(
                "Cholesky of a non-square matrix".into(),
            ));
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if !(s > T::zero()) {
                        return Err(Error::Singular("matrix is not positive definite".into()));
                    }
                    l[(i, i)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(l)
    }

    /// Solves `L Lᵀ x = b` given the Cholesky factor `L` (`self`).
    pub fn cholesky_solve(&self, b: &[T]) -> Vec<T> {
        let n = self.rows;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let v = self[(i, k)] * y[k];
                y[i] -= v;
            }
            y[i] /= self[(i, i)];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let v = self[(k, i)] * y[k];
                y[i] -= v;
            }
            y[i] /= self[(i, i)];
        }
        y
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Householder QR of a square matrix, returning `(Q, diag(R))`.
fn householder_qr<T: Real>(a: &Mat<T>) -> (Mat<T>, Vec<T>) {
    let n = a.rows();
    let mut r = a.clone();
    let mut q = Mat::<T>::identity(n);
    let mut diag = vec![T::zero(); n];
    for k in 0..n {
        let norm = (k..n).map(|i| r[(i, k)] * r[(i, k)]).sum::<T>().sqrt();
        if norm == T::zero() {
            diag[k] = T::zero();
            continue;
        }
        let x0 = r[(k, k)];
        let alpha = if x0 >= T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (k..n).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm = crate::scalar::norm_sq(&v).sqrt();
        if vnorm == T::zero() {
            diag[k] = x0;
            continue;
        }
        for vi in v.iter_mut() {
            *vi /= vnorm;
        }
        let two = T::lit(2.0);
        // R <- H R on rows k.., columns k..
        for j in k..n {
            let s = (k..n).map(|i| v[i - k] * r[(i, j)]).sum::<T>();
            for i in k..n {
                r[(i, j)] -= two * v[i - k] * s;
            }
        }
        // Q <- Q H on columns k..
        for i in 0..n {
            let s = (k..n).map(|j| q[(i, j)] * v[j - k]).sum::<T>();
            for j in k..n {
                q[(i, j)] -= two * s * v[j - k];
            }
        }
        diag[k] = r[(k, k)];
    }
    (q, diag)
}

/// Haar-distributed orthogonal matrix: QR of an iid standard-normal matrix
/// with the columns of `Q` sign-corrected so that `R` has a positive diagonal.
pub fn random_orthogonal<T: Real>(rng: &mut Rng, d: usize) -> Result<Mat<T>> {
    let entries = sample_std_normal::<T>(rng, d * d)?;
    let a = Mat::new(d, d, entries)?;
    let (mut q, diag) = householder_qr(&a);
    for (k, &rkk) in diag.iter().enumerate() {
        if rkk < T::zero() {
            for i in 0..d {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_stream_is_reproducible() {
        let mut a = Rng::new(42);
        let x: Vec<f64> = sample_std_normal(&mut a, 2).unwrap();
        let y: Vec<f64> = sample_std_normal(&mut a, 2).unwrap();
        assert_ne!(x, y);
        let mut b = Rng::new(42);
        assert_eq!(x, sample_std_normal::<f64>(&mut b, 2).unwrap());
        assert_eq!(y, sample_std_normal::<f64>(&mut b, 2).unwrap());
    }

    #[test]
    fn normal_moments() {
        let mut rng = Rng::new(7);
        let n = 100_000;
        let xs: Vec<f64> = sample_std_normal(&mut rng, n).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(sample_std_normal::<f64>(&mut Rng::new(1), 0).is_err());
    }

    #[test]
    fn state_roundtrip_resumes_stream() {
        let mut a = Rng::with_stream(3, 9);
        a.next_u64();
        a.normal();
        let st = a.state();
        let json = serde_json::to_string(&st).unwrap();
        let mut b = Rng::from_state(&serde_json::from_str(&json).unwrap());
        for _ in 0..10 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = Rng::with_stream(5, 0);
        let mut b = Rng::with_stream(5, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn permutation_is_bijection() {
        let mut p = Rng::new(11).permutation(17);
        p.sort_unstable();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        let tiny = softplus(-1000.0f64);
        assert!(tiny > 0.0 && tiny < 1e-300);
        assert!((softplus(40.0f64) - 40.0).abs() < 1e-16);
        assert!(softplus(-1000.0f32) > 0.0);
    }

    #[test]
    fn logit_inverts_sigmoid() {
        assert_eq!(logit(0.5f64).unwrap(), 0.0);
        for t in [-5.0f64, 0.0, 3.0] {
            assert!((logit(sigmoid(t)).unwrap() - t).abs() < 1e-12);
        }
        assert!(logit(0.0f64).is_err());
        assert!(logit(1.0f64).is_err());
    }

    #[test]
    fn log_sigmoid_matches_naive() {
        for x in [-20.0f64, -3.0, 0.0, 2.5, 35.0] {
            assert!((log_sigmoid(x) - sigmoid(x).ln()).abs() < 1e-12);
        }
        assert!((log_sigmoid(-800.0f64) + 800.0).abs() < 1e-12);
    }

    #[test]
    fn fd_gradient_cases() {
        let g = fd_gradient(
            |x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1]),
            &[1.0, 2.0],
            1e-5,
        )
        .unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8 && (g[1] - 2.0).abs() < 1e-8);
        let g = fd_gradient(|_: &[f64]| 3.0, &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let g = fd_gradient(|x: &[f64]| x[0].sin(), &[0.3, 1.0], 1e-5).unwrap();
        assert!((g[0] - 0.3f64.cos()).abs() < 1e-8);
        assert!(g[1].abs() < 1e-12);
        assert!(fd_gradient(|x: &[f64]| 1.0 / x[0], &[0.0], 1e-5).is_ok());
        assert!(fd_gradient(|x: &[f64]| (x[0] - 1e-5).ln(), &[1e-5], 1e-5).is_err());
    }

    #[test]
    fn orthogonal_matrix_properties() {
        let mut rng = Rng::new(2024);
        for d in [1, 2, 4, 8, 64] {
            let q: Mat<f64> = random_orthogonal(&mut rng, d).unwrap();
            let qtq = q.transpose().matmul(&q);
            assert!(qtq.max_abs_diff(&Mat::identity(d)) <= 1e-12, "d={d}");
            for j in 0..d {
                let n: f64 = (0..d).map(|i| q[(i, j)] * q[(i, j)]).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() <= 1e-12);
            }
            if d <= 8 {
                assert!((q.det().abs() - 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn qr_positive_diagonal_convention() {
        // R = Qᵀ A must have a positive diagonal after sign correction.
        let mut rng = Rng::new(99);
        let a_entries: Vec<f64> = sample_std_normal(&mut rng.clone(), 16).unwrap();
        let a = Mat::new(4, 4, a_entries).unwrap();
        let q: Mat<f64> = random_orthogonal(&mut rng, 4).unwrap();
        let r = q.transpose().matmul(&a);
        for k in 0..4 {
            assert!(r[(k, k)] > 0.0);
            for i in k + 1..4 {
                assert!(r[(i, k)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn det_small() {
        let m = Mat::new(2, 2, vec![1.5f64, 0.0, 0.0, 1.25]).unwrap();
        assert!((m.det() - 1.875).abs() < 1e-15);
        let p = Mat::new(2, 2, vec![0.0f64, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.det(), -1.0);
    }

    #[test]
    fn f32_paths_compile_and_agree() {
        let mut rng = Rng::new(1);
        let q: Mat<f32> = random_orthogonal(&mut rng, 3).unwrap();
        assert!(q.transpose().matmul(&q).max_abs_diff(&Mat::identity(3)) < 1e-5);
        assert!((softplus(0.0f32) - std::f32::consts::LN_2).abs() < 1e-7);
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = Mat::new(3, 3, vec![4.0f64, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]).unwrap();
        let l = a.cholesky().unwrap();
        assert!(l.matmul(&l.transpose()).max_abs_diff(&a) < 1e-14);
        let x = l.cholesky_solve(&[1.0, -2.0, 0.5]);
        let r = a.matvec(&x);
        assert!(
            (r[0] - 1.0).abs() < 1e-14 && (r[1] + 2.0).abs() < 1e-14 && (r[2] - 0.5).abs() < 1e-14
        );
        assert!(Mat::new(2, 2, vec![1.0f64, 2.0, 2.0, 1.0])
            .unwrap()
            .cholesky()
            .is_err());
    }
}
