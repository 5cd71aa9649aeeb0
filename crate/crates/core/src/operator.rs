//! Sparse complex operators on the truncated space.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Compressed-sparse-row complex matrix with a human-readable label.
///
/// Entries are kept sorted by column within each row and exact zeros are
/// dropped, so structurally equal constructions are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
    pub label: String,
}

impl OperatorMatrix {
    pub fn from_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, Complex64)>,
        label: impl Into<String>,
    ) -> Self {
        let mut rows: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); dim];
        for (i, j, v) in triplets {
            assert!(i < dim && j < dim, "entry ({i}, {j}) outside {dim}x{dim}");
            *rows[i].entry(j).or_insert(ZERO) += v;
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                if v != ZERO {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            dim,
            row_ptr,
            cols,
            vals,
            label: label.into(),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_triplets(dim, [], "0")
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_triplets(dim, (0..dim).map(|i| (i, i, ONE)), "I")
    }

    /// Diagonal operator from real values.
    pub fn diagonal(values: &[f64], label: impl Into<String>) -> Self {
        Self::from_triplets(
            values.len(),
            values.iter().enumerate().map(|(i, &v)| (i, i, Complex64::new(v, 0.0))),
            label,
        )
    }

    pub fn from_dense(m: &DMatrix<Complex64>, label: impl Into<String>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let n = m.nrows();
        Self::from_triplets(
            n,
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j, m[(i, j)]))),
            label,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.vals[k]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => ZERO,
        }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(
            self.dim,
            self.entries().map(|(i, j, v)| (j, i, v.conj())),
            format!("{}†", self.label),
        )
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::from_triplets(self.dim, self.entries().map(|(i, j, v)| (i, j, v * s)), self.label.clone())
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &OperatorMatrix) -> Self {
        let n = other.dim;
        let trip: Vec<_> = self
            .entries()
            .flat_map(|(i, j, a)| other.entries().map(move |(k, l, b)| (i * n + k, j * n + l, a * b)))
            .collect();
        Self::from_triplets(self.dim * n, trip, format!("{}⊗{}", self.label, other.label))
    }

    pub fn matmul(&self, other: &OperatorMatrix) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut trip = Vec::new();
        for (i, k, a) in self.entries() {
            for idx in other.row_ptr[k]..other.row_ptr[k + 1] {
                trip.push((i, other.cols[idx], a * other.vals[idx]));
            }
        }
        Self::from_triplets(self.dim, trip, format!("{}·{}", self.label, other.label))
    }

    /// `out = self · x`.
    pub fn apply_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.dim];
        self.apply_into(x, &mut out);
        out
    }

    /// `⟨x| self |x⟩`.
    pub fn expectation(&self, x: &[Complex64]) -> Complex64 {
        let mut acc = ZERO;
        for (i, j, v) in self.entries() {
            acc += x[i].conj() * v * x[j];
        }
        acc
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::from_element(self.dim, self.dim, ZERO);
        for (i, j, v) in self.entries() {
            m[(i, j)] = v;
        }
        m
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Hermitian and anti-Hermitian parts `((A + A†)/2, (A - A†)/2i)`.
    pub fn hermitian_parts(&self) -> (Self, Self) {
        let adj = self.adjoint();
        let herm = (self + &adj).scale_re(0.5);
        let anti = (self - &adj).scale(Complex64::new(0.0, -0.5));
        (herm, anti)
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let diff = self - &self.adjoint();
        diff.max_abs() <= rel_tol * scale
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.dim, rhs.dim);
        OperatorMatrix::from_triplets(
            self.dim,
            self.entries().chain(rhs.entries()),
            format!("({} + {})", self.label, rhs.label),
        )
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        self + &(-rhs)
    }
}

impl Neg for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn neg(self) -> OperatorMatrix {
        self.scale_re(-1.0)
    }
}

impl Mul for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        self.matmul(rhs)
    }
}

/// Mode annihilation operator on a Fock space truncated at `n_max`.
pub fn annihilation(n_max: usize) -> OperatorMatrix {
    OperatorMatrix::from_triplets(
        n_max + 1,
        (1..=n_max).map(|n| (n - 1, n, Complex64::new((n as f64).sqrt(), 0.0))),
        "a",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn annihilation_matrix_elements() {
        let a = annihilation(3);
        for n in 1..=3 {
            assert_eq!(a.get(n - 1, n), c((n as f64).sqrt(), 0.0));
        }
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn commutator_is_identity_below_truncation() {
        let n_max = 4;
        let a = annihilation(n_max);
        let ad = a.adjoint();
        let comm = &(&a * &ad) - &(&ad * &a);
        for n in 0..n_max {
            for m in 0..=n_max {
                let expected = if n == m { 1.0 } else { 0.0 };
                assert!((comm.get(n, m) - c(expected, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn kron_matches_dense() {
        let a = OperatorMatrix::from_triplets(2, [(0, 1, c(1.0, 2.0)), (1, 1, c(-0.5, 0.0))], "a");
        let b = annihilation(2);
        let k = a.kron(&b).to_dense();
        let (da, db) = (a.to_dense(), b.to_dense());
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..3 {
                    for q in 0..3 {
                        assert_eq!(k[(i * 3 + p, j * 3 + q)], da[(i, j)] * db[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn apply_matches_dense_product() {
        let a = annihilation(3).kron(&OperatorMatrix::identity(2));
        let x: Vec<_> = (0..8).map(|i| c(i as f64, -(i as f64) * 0.5)).collect();
        let y = a.apply(&x);
        let dense = a.to_dense() * nalgebra::DVector::from_vec(x.clone());
        for i in 0..8 {
            assert!((y[i] - dense[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn hermitian_parts_recombine() {
        let a = OperatorMatrix::from_triplets(2, [(0, 1, c(1.0, 2.0)), (1, 1, c(0.0, -3.0))], "a");
        let (h, k) = a.hermitian_parts();
        assert!(h.is_hermitian(1e-14));
        assert!(k.is_hermitian(1e-14));
        let back = &h + &k.scale(c(0.0, 1.0));
        assert!((&back - &a).max_abs() < 1e-14);
    }
}
