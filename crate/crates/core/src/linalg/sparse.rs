use crate::geom::Mat3;
use crate::real::Real;

use super::LinalgError;

/// Coordinate-list assembly buffer. Duplicate coordinates are summed by [`SparseBuilder::build`].
#[derive(Clone, Debug)]
pub struct SparseBuilder<T> {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Real> SparseBuilder<T> {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: T) {
        assert!(row < self.nrows && col < self.ncols, "entry ({row}, {col}) out of bounds");
        self.entries.push((row, col, value));
    }

    /// Adds a 3x3 block at node rows `3*bi..`, node columns `3*bj..`.
    pub fn push_block3(&mut self, bi: usize, bj: usize, block: &Mat3<T>) {
        for r in 0..3 {
            for c in 0..3 {
                self.push(3 * bi + r, 3 * bj + c, block.0[r][c]);
            }
        }
    }

    /// Adds `s * I₃` at node block `(bi, bj)`.
    pub fn push_scaled_identity3(&mut self, bi: usize, bj: usize, s: T) {
        for r in 0..3 {
            self.push(3 * bi + r, 3 * bj + r, s);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Finalizes into compressed row storage with sorted column indices.
    pub fn build(mut self) -> SparseMatrix<T> {
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut data: Vec<T> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            indptr[r + 1] += indptr[r];
        }
        SparseMatrix { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }
}

/// Compressed sparse row matrix. Column indices within a row are sorted and unique.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> SparseMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), data: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![T::one(); n])
    }

    pub fn from_diagonal(d: &[T]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: d.to_vec(),
        }
    }

    /// Builds from a dense row-major matrix, dropping exact zeros.
    pub fn from_dense(rows: &[Vec<T>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut b = SparseBuilder::new(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v != T::zero() {
                    b.push(i, j, *v);
                }
            }
        }
        b.build()
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    /// Iterates `(row, col, value)` over stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(j, x)| (i, *j, *x))
        })
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            let mut s = T::zero();
            for (j, a) in c.iter().zip(v) {
                s += *a * x[*j];
            }
            *yi = s;
        }
    }

    /// `y += alpha * A x`
    pub fn mul_vec_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            let mut s = T::zero();
            for (j, a) in c.iter().zip(v) {
                s += *a * x[*j];
            }
            *yi += alpha * s;
        }
    }

    /// `Aᵀ x`
    pub fn tr_mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![T::zero(); self.ncols];
        for (i, xi) in x.iter().enumerate() {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                y[*j] += *a * *xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut data = vec![T::zero(); self.nnz()];
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                let p = next[*j];
                indices[p] = i;
                data[p] = *a;
                next[*j] += 1;
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, indptr: counts, indices, data }
    }

    /// `alpha * self + beta * other` on the union pattern.
    pub fn linear_combination(&self, alpha: T, other: &Self, beta: T) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        indptr.push(0);
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut data = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let ja = ca.get(p).copied().unwrap_or(usize::MAX);
                let jb = cb.get(q).copied().unwrap_or(usize::MAX);
                if ja < jb {
                    indices.push(ja);
                    data.push(alpha * va[p]);
                    p += 1;
                } else if jb < ja {
                    indices.push(jb);
                    data.push(beta * vb[q]);
                    q += 1;
                } else {
                    indices.push(ja);
                    data.push(alpha * va[p] + beta * vb[q]);
                    p += 1;
                    q += 1;
                }
            }
            indptr.push(indices.len());
        }
        Self { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }

    /// Sparse product `self * other` (row-wise Gustavson accumulation).
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let n = other.ncols;
        let mut acc = vec![T::zero(); n];
        let mut mark = vec![usize::MAX; n];
        let mut cols: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            let (ca, va) = self.row(i);
            for (k, a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(*k);
                for (j, b) in cb.iter().zip(vb) {
                    if mark[*j] != i {
                        mark[*j] = i;
                        acc[*j] = T::zero();
                        cols.push(*j);
                    }
                    acc[*j] += *a * *b;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                indices.push(j);
                data.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        Self { nrows: self.nrows, ncols: n, indptr, indices, data }
    }

    /// Multiplies each row `i` by `d[i]`.
    pub fn scale_rows(&self, d: &[T]) -> Self {
        assert_eq!(d.len(), self.nrows);
        let mut out = self.clone();
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                out.data[p] *= d[i];
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= s);
        out
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    /// Exact entry-wise symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.is_square() && self.triplets().all(|(i, j, v)| self.get(j, i) == v)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        let d = self.linear_combination(T::one(), other, -T::one());
        d.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub(crate) fn check_square(&self) -> Result<(), LinalgError> {
        if self.is_square() {
            Ok(())
        } else {
            Err(LinalgError::NotSquare { rows: self.nrows, cols: self.ncols })
        }
    }
}
