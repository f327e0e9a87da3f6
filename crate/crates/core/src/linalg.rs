//! Small dense Hermitian matrices (C x C, C up to a few dozen).

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Row-major square complex matrix, used for Hermitian quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct HermMat {
    n: usize,
    data: Vec<Complex64>,
}

impl HermMat {
    pub fn zeros(n: usize) -> Self {
        HermMat {
            n,
            data: vec![ZERO; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(n: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), n * n, "HermMat::from_rows: wrong element count");
        HermMat { n, data }
    }

    /// `v v^H`.
    pub fn outer(v: &[Complex64]) -> Self {
        let n = v.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = v[i] * v[j].conj();
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).re).sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    pub fn add_assign(&mut self, other: &HermMat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    /// Replaces the matrix with `(A + A^H) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.n;
        for i in 0..n {
            self.data[i * n + i].im = 0.0;
            for j in i + 1..n {
                let v = (self.get(i, j) + self.get(j, i).conj()) * 0.5;
                self.set(i, j, v);
                self.set(j, i, v.conj());
            }
        }
    }

    /// Largest `|A_ij - conj(A_ji)|`.
    pub fn hermitian_error(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn matmul(&self, other: &HermMat) -> HermMat {
        let n = self.n;
        let mut out = HermMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        (0..n)
            .map(|i| (0..n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// `v^H A v`, real part (exact for Hermitian `A`).
    pub fn quad_form(&self, v: &[Complex64]) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.get(i, i).re * v[i].norm_sqr();
            for j in i + 1..n {
                acc += 2.0 * (v[i].conj() * self.get(i, j) * v[j]).re;
            }
        }
        acc
    }

    fn to_na(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    fn from_na(m: &DMatrix<Complex64>) -> Self {
        let n = m.nrows();
        let mut out = HermMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] = m[(i, j)];
            }
        }
        out
    }

    /// Eigendecomposition of a Hermitian matrix; eigenvalues ascending.
    pub fn eigh(&self) -> Eigh {
        let mut a = self.clone();
        a.symmetrize();
        let se = SymmetricEigen::new(a.to_na());
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
        let values: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
        let vectors: Vec<Vec<Complex64>> = order
            .iter()
            .map(|&i| se.eigenvectors.column(i).iter().copied().collect())
            .collect();
        Eigh { values, vectors }
    }

    /// Inverse through Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<HermMat> {
        self.to_na().try_inverse().map(|m| Self::from_na(&m))
    }
}

/// Eigenpairs of a Hermitian matrix, ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<Complex64>>,
}

impl Eigh {
    /// `sum_i g(lambda_i) v_i v_i^H`.
    pub fn reconstruct(&self, g: impl Fn(f64) -> f64) -> HermMat {
        let n = self.values.len();
        let mut out = HermMat::zeros(n);
        for (lambda, v) in self.values.iter().zip(&self.vectors) {
            let s = g(*lambda);
            for i in 0..n {
                let vi = v[i] * s;
                for j in 0..n {
                    out.data[i * n + j] += vi * v[j].conj();
                }
            }
        }
        out
    }

    pub fn principal(&self) -> &[Complex64] {
        self.vectors.last().expect("non-empty matrix")
    }
}

/// `|a^H b| / (|a| |b|)`.
pub fn abs_cos(a: &[Complex64], b: &[Complex64]) -> f64 {
    let dot: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    dot.norm() / (na * nb)
}

/// Numerically stable `log(sum(exp(xs)))`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
