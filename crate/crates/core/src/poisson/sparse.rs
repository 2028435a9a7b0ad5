//! Compressed sparse rows, ILU(0) and preconditioned conjugate gradients.

use rayon::prelude::*;

use crate::{Error, Real, Result};

/// Rows above which mat-vec products are split across threads.
const PARALLEL_ROWS: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    /// Column indices within a row come out sorted.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => T::zero(),
        }
    }

    fn row_dot(&self, i: usize, x: &[T]) -> T {
        let (cols, vals) = self.row(i);
        cols.iter().zip(vals).fold(T::zero(), |acc, (&c, &v)| acc + v * x[c])
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        if self.nrows >= PARALLEL_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = self.row_dot(i, x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row_dot(i, x);
            }
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![T::zero(); self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xi;
            }
        }
        y
    }

    /// Largest absolute entry of `A − Aᵀ` (square matrices).
    pub fn asymmetry(&self) -> T {
        let mut m = T::zero();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }
}

/// Incomplete LU factorization with the sparsity pattern of the matrix.
///
/// For a symmetric matrix the factors satisfy `U = D Lᵀ`, so the preconditioner
/// is symmetric and may be used inside CG.
#[derive(Clone, Debug)]
pub struct Ilu0<T> {
    lu: CsrMatrix<T>,
    diag: Vec<usize>,
}

impl<T: Real> Ilu0<T> {
    pub fn new(a: &CsrMatrix<T>) -> Result<Self> {
        assert_eq!(a.nrows, a.ncols);
        let n = a.nrows;
        let mut lu = a.clone();
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            let (s, e) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for p in s..e {
                if lu.col_idx[p] == i {
                    diag[i] = p;
                }
            }
            if diag[i] == usize::MAX {
                return Err(Error::InvalidMesh(format!("row {i} has no diagonal entry")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (s, e) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for p in s..e {
                pos[lu.col_idx[p]] = p;
            }
            for p in s..e {
                let k = lu.col_idx[p];
                if k >= i {
                    break;
                }
                let pivot = lu.values[diag[k]];
                let lik = lu.values[p] / pivot;
                lu.values[p] = lik;
                for q in diag[k] + 1..lu.row_ptr[k + 1] {
                    let j = lu.col_idx[q];
                    let target = pos[j];
                    if target != usize::MAX {
                        let ukj = lu.values[q];
                        lu.values[target] -= lik * ukj;
                    }
                }
            }
            for p in s..e {
                pos[lu.col_idx[p]] = usize::MAX;
            }
            if !(lu.values[diag[i]].abs() > T::zero()) {
                return Err(Error::InvalidMesh(format!("zero pivot in ILU(0) at row {i}")));
            }
        }
        Ok(Self { lu, diag })
    }

    /// `z = (LU)⁻¹ r`.
    pub fn apply(&self, r: &[T], z: &mut [T]) {
        let n = self.diag.len();
        z.copy_from_slice(r);
        for i in 0..n {
            let s = self.lu.row_ptr[i];
            let mut acc = z[i];
            for p in s..self.diag[i] {
                acc -= self.lu.values[p] * z[self.lu.col_idx[p]];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let e = self.lu.row_ptr[i + 1];
            let mut acc = z[i];
            for p in self.diag[i] + 1..e {
                acc -= self.lu.values[p] * z[self.lu.col_idx[p]];
            }
            z[i] = acc / self.lu.values[self.diag[i]];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgReport<T> {
    pub iterations: usize,
    pub relative_residual: T,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Preconditioned conjugate gradients for SPD `a`, starting from `x`.
///
/// Stops when `‖b − A x‖ ≤ tol·‖b‖`.
pub fn pcg<T: Real>(
    a: &CsrMatrix<T>,
    precond: &Ilu0<T>,
    b: &[T],
    x: &mut [T],
    tol: T,
    max_iter: usize,
) -> Result<CgReport<T>> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(CgReport { iterations: 0, relative_residual: T::zero() });
    }
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    if rel <= tol {
        return Ok(CgReport { iterations: 0, relative_residual: rel });
    }
    let mut z = vec![T::zero(); n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![T::zero(); n];
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::SolverFailure { iterations: it, residual: rel.as_f64() });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= tol {
            return Ok(CgReport { iterations: it, relative_residual: rel });
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure { iterations: max_iter, residual: rel.as_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn ilu0_is_exact_for_tridiagonal() {
        // no fill-in occurs, so ILU(0) is the exact LU factorization
        let a = laplacian_1d(20);
        let ilu = Ilu0::new(&a).unwrap();
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; 20];
        ilu.apply(&b, &mut x);
        let r = a.mul_vec(&x);
        for i in 0..20 {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pcg_converges_in_one_step_with_exact_preconditioner() {
        let a = laplacian_1d(50);
        let ilu = Ilu0::new(&a).unwrap();
        let b = vec![1.0; 50];
        let mut x = vec![0.0; 50];
        let rep = pcg(&a, &ilu, &b, &mut x, 1e-12, 100).unwrap();
        assert!(rep.iterations <= 2);
    }

    #[test]
    fn pcg_reports_non_convergence() {
        let a = laplacian_1d(200);
        let ident = CsrMatrix::from_triplets(200, 200, (0..200).map(|i| (i, i, 1.0)).collect());
        let jacobi_free = Ilu0::new(&ident).unwrap();
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        assert!(matches!(
            pcg(&a, &jacobi_free, &b, &mut x, 1e-14, 5),
            Err(Error::SolverFailure { iterations: 5, .. })
        ));
    }

    #[test]
    fn transpose_product() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]);
        assert_eq!(m.tr_mul_vec(&[1.0, 2.0]), vec![1.0, 6.0, 2.0]);
    }
}
