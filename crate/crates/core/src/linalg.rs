//! Sparse matrices, weighted vector algebra and Krylov solvers shared by the
//! time stepper, the implicit solves and the spectral probe.

use num_complex::Complex64;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

pub trait Scalar:
    Copy
    + Send
    + Sync
    + Default
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Mul<f64, Output = Self>
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn from_c64(z: Complex64) -> Self;
    fn to_c64(self) -> Complex64;
    fn conj(self) -> Self;
    fn abs2(self) -> f64;
    fn re(self) -> f64;
    fn is_finite(self) -> bool;
    fn abs(self) -> f64 {
        self.abs2().sqrt()
    }
    fn zero() -> Self {
        Self::default()
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    /// Drops the imaginary part.
    fn from_c64(z: Complex64) -> Self {
        z.re
    }
    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn conj(self) -> Self {
        self
    }
    fn abs2(self) -> f64 {
        self * self
    }
    fn re(self) -> f64 {
        self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for Complex64 {
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn from_c64(z: Complex64) -> Self {
        z
    }
    fn to_c64(self) -> Complex64 {
        self
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn re(self) -> f64 {
        self.re
    }
    fn is_finite(self) -> bool {
        Complex64::is_finite(self)
    }
}

/// Weighted inner product `sum w_i conj(u_i) v_i`.
pub fn wdot<T: Scalar>(w: &[f64], u: &[T], v: &[T]) -> T {
    let mut acc = T::zero();
    for ((wi, ui), vi) in w.iter().zip(u).zip(v) {
        acc += ui.conj() * *vi * *wi;
    }
    acc
}

pub fn wnorm2<T: Scalar>(w: &[f64], u: &[T]) -> f64 {
    w.iter().zip(u).map(|(wi, ui)| wi * ui.abs2()).sum()
}

pub fn wnorm<T: Scalar>(w: &[f64], u: &[T]) -> f64 {
    wnorm2(w, u).sqrt()
}

pub fn norm<T: Scalar>(u: &[T]) -> f64 {
    u.iter().map(|x| x.abs2()).sum::<f64>().sqrt()
}

pub fn max_abs<T: Scalar>(u: &[T]) -> f64 {
    u.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `y += a x`
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

/// Compressed sparse row matrix with real entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Duplicate entries are summed; explicit zeros are kept out.
    pub fn from_triplets(nrows: usize, ncols: usize, trip: &[(usize, usize, f64)]) -> Csr {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in trip {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of range");
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; trip.len()];
        let mut vals = vec![0.0; trip.len()];
        let mut next = counts.clone();
        for &(i, j, v) in trip {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut s = 0.0;
                while k < row.len() && row[k].0 == j {
                    s += row[k].1;
                    k += 1;
                }
                if s != 0.0 {
                    indices.push(j);
                    values.push(s);
                }
            }
            indptr.push(indices.len());
        }
        Csr { nrows, ncols, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Csr {
        Csr {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    /// `y = A x`
    pub fn matvec<T: Scalar>(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = T::zero();
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += x[self.indices[k]] * self.values[k];
            }
            *yi = s;
        }
    }

    /// `y += a A x`
    pub fn matvec_add<T: Scalar>(&self, a: f64, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = T::zero();
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += x[self.indices[k]] * self.values[k];
            }
            *yi += s * a;
        }
    }

    pub fn apply<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Csr {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                trip.push((j, i, v));
            }
        }
        Csr::from_triplets(self.ncols, self.nrows, &trip)
    }

    /// `diag(l) A diag(r)`
    pub fn scaled(&self, l: &[f64], r: &[f64]) -> Csr {
        let mut out = self.clone();
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.values[k] *= l[i] * r[self.indices[k]];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.ncols, other.nrows);
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut cols: Vec<usize> = Vec::new();
        let mut trip = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &cols {
                trip.push((i, j, acc[j]));
            }
        }
        Csr::from_triplets(self.nrows, other.ncols, &trip)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            t.extend(self.row(i).map(|(j, v)| (i, j, v)));
        }
        t
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned conjugate gradients for an operator self-adjoint and
/// positive definite in the `w`-weighted inner product.
pub fn cg<T: Scalar>(
    mut apply: impl FnMut(&[T], &mut [T]),
    mut precond: impl FnMut(&[T], &mut [T]),
    b: &[T],
    w: &[f64],
    x: &mut [T],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = wnorm(w, b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(SolveStats::default());
    }
    let mut r = vec![T::zero(); n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = *bi - *ri;
    }
    let mut z = vec![T::zero(); n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = wdot(w, &r, &z);
    let mut ap = vec![T::zero(); n];
    let mut res = wnorm(w, &r) / bnorm;
    let mut it = 0;
    while res > tol {
        if it >= max_iter {
            return Err(Error::IterativeSolveFailure { iterations: it, residual: res });
        }
        apply(&p, &mut ap);
        let alpha = rz / wdot(w, &p, &ap);
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        precond(&r, &mut z);
        let rz_new = wdot(w, &r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = *zi + beta * *pi;
        }
        res = wnorm(w, &r) / bnorm;
        it += 1;
        if !res.is_finite() {
            return Err(Error::IterativeSolveFailure { iterations: it, residual: res });
        }
    }
    Ok(SolveStats { iterations: it, residual: res })
}

/// Right-preconditioned restarted GMRES in the `w`-weighted inner product.
/// The residual reported is the true relative residual of the final iterate.
#[allow(clippy::too_many_arguments)]
pub fn gmres<T: Scalar>(
    mut apply: impl FnMut(&[T], &mut [T]),
    mut precond: impl FnMut(&[T], &mut [T]),
    b: &[T],
    w: &[f64],
    x: &mut [T],
    tol: f64,
    max_iter: usize,
    restart: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = wnorm(w, b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(SolveStats::default());
    }
    let m = restart.max(1).min(n.max(1));
    let mut total = 0;
    let mut r = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    loop {
        apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = *bi - *ri;
        }
        let beta = wnorm(w, &r);
        let res = beta / bnorm;
        if res <= tol {
            return Ok(SolveStats { iterations: total, residual: res });
        }
        if total >= max_iter || !res.is_finite() {
            return Err(Error::IterativeSolveFailure { iterations: total, residual: res });
        }
        let mut v: Vec<Vec<T>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|ri| *ri * (1.0 / beta)).collect());
        let mut h = vec![vec![T::zero(); m]; m + 1];
        let mut cs = vec![T::zero(); m];
        let mut sn = vec![T::zero(); m];
        let mut g = vec![T::zero(); m + 1];
        g[0] = T::from_f64(beta);
        let mut k_used = 0;
        for k in 0..m {
            precond(&v[k], &mut tmp);
            let mut wv = vec![T::zero(); n];
            apply(&tmp, &mut wv);
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let hij = wdot(w, vi, &wv);
                    h[i][k] += hij;
                    axpy(-hij, vi, &mut wv);
                }
            }
            let hn = wnorm(w, &wv);
            h[k + 1][k] = T::from_f64(hn);
            for i in 0..k {
                let a = h[i][k];
                let bb = h[i + 1][k];
                h[i][k] = cs[i].conj() * a + sn[i].conj() * bb;
                h[i + 1][k] = -sn[i] * a + cs[i] * bb;
            }
            let a = h[k][k];
            let bb = h[k + 1][k];
            let den = (a.abs2() + bb.abs2()).sqrt();
            if den == 0.0 {
                cs[k] = T::from_f64(1.0);
                sn[k] = T::zero();
            } else {
                cs[k] = a * (1.0 / den);
                sn[k] = bb * (1.0 / den);
            }
            h[k][k] = T::from_f64(den);
            h[k + 1][k] = T::zero();
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k].conj() * g[k];
            k_used = k + 1;
            total += 1;
            let est = g[k + 1].abs() / bnorm;
            if hn == 0.0 || est <= tol * 0.5 || total >= max_iter {
                break;
            }
            v.push(wv.iter().map(|x| *x * (1.0 / hn)).collect());
        }
        let mut y = vec![T::zero(); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        let mut z = vec![T::zero(); n];
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &v[j], &mut z);
        }
        precond(&z, &mut tmp);
        axpy(T::from_f64(1.0), &tmp, x);
    }
}

/// Sparse LU factorization (row pivoting) of a square matrix given by triplets.
pub struct SparseLu<T: Scalar + faer::traits::ComplexField> {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, T>,
}

impl<T: Scalar + faer::traits::ComplexField> SparseLu<T> {
    pub fn new(n: usize, trip: &[(usize, usize, T)]) -> Result<Self> {
        use faer::sparse::{SparseColMat, Triplet};
        let t: Vec<Triplet<usize, usize, T>> = trip.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        let a = SparseColMat::<usize, T>::try_new_from_triplets(n, n, &t)
            .map_err(|e| Error::ShapeMismatch(format!("sparse matrix: {e:?}")))?;
        let lu = a.sp_lu().map_err(|e| Error::EigensolveFailure(format!("sparse LU: {e:?}")))?;
        Ok(SparseLu { n, lu })
    }

    pub fn from_csr(a: &Csr) -> Result<Self> {
        let t: Vec<(usize, usize, T)> = a.triplets().into_iter().map(|(i, j, v)| (i, j, T::from_f64(v))).collect();
        Self::new(a.nrows, &t)
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        use faer::linalg::solvers::Solve;
        let mut m = faer::Mat::<T>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }

    /// Solves with the conjugate transpose.
    pub fn solve_adjoint(&self, b: &[T]) -> Vec<T> {
        use faer::linalg::solvers::Solve;
        let mut m = faer::Mat::<T>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_adjoint_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, shift: f64) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.7));
            }
        }
        Csr::from_triplets(n, n, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = Csr::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 1.0), (1, 0, -1.0)]);
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(0, 1), 3.0);
    }

    #[test]
    fn matmul_matches_dense() {
        let a = tridiag(6, 0.3);
        let b = a.transpose();
        let c = a.matmul(&b);
        let (da, db) = (a.to_dense(), b.to_dense());
        for i in 0..6 {
            for j in 0..6 {
                let s: f64 = (0..6).map(|k| da[i][k] * db[k][j]).sum();
                assert!((s - c.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_complex() {
        let a = tridiag(50, 0.1);
        let w = vec![1.0; 50];
        let b: Vec<Complex64> = (0..50).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let mut x = vec![Complex64::default(); 50];
        let shift = Complex64::new(0.0, 0.5);
        let op = |u: &[Complex64], out: &mut [Complex64]| {
            a.matvec(u, out);
            for (o, ui) in out.iter_mut().zip(u) {
                *o += shift * *ui;
            }
        };
        let st = gmres(op, |u, o| o.copy_from_slice(u), &b, &w, &mut x, 1e-12, 500, 20).unwrap();
        assert!(st.residual <= 1e-12);
        let mut r = vec![Complex64::default(); 50];
        op(&x, &mut r);
        let err: f64 = r.iter().zip(&b).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm(&b) < 1e-11);
    }

    #[test]
    fn cg_solves_weighted_spd() {
        let n = 40;
        let w: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        // symmetric in the w inner product: W^{-1} S with S symmetric
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0 / w[i]));
            if i > 0 {
                t.push((i, i - 1, -1.0 / w[i]));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 / w[i]));
            }
        }
        let a = Csr::from_triplets(n, n, &t);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        cg(|u, o| a.matvec(u, o), |u, o| o.copy_from_slice(u), &b, &w, &mut x, 1e-13, 200).unwrap();
        let r = a.apply(&x);
        assert!(r.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-11));
    }
}
