use crate::real::Real;

use super::ordering::block_minimum_degree;
use super::{LinalgError, SparseMatrix};

const NONE: usize = usize::MAX;

/// Sparse Cholesky factorization `Pᵀ A P = L Lᵀ` with a fill-reducing
/// permutation chosen once. Immutable, so it can be shared across threads.
#[derive(Clone, Debug)]
pub struct SymmetricFactorization<T> {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<T>,
}

/// Factorizes a symmetric positive definite matrix. Only the entries with
/// `row <= col` after permutation are read, so the input must be symmetric.
pub fn factorize_spd<T: Real>(a: &SparseMatrix<T>) -> Result<SymmetricFactorization<T>, LinalgError> {
    a.check_square()?;
    let perm = block_minimum_degree(a, 3);
    SymmetricFactorization::with_permutation(a, perm)
}

impl<T: Real> SymmetricFactorization<T> {
    /// Factorizes with a caller-supplied permutation (`perm[new] = old`).
    pub fn with_permutation(a: &SparseMatrix<T>, perm: Vec<usize>) -> Result<Self, LinalgError> {
        a.check_square()?;
        let n = a.nrows();
        if perm.len() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, found: perm.len() });
        }
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // Upper triangle of the permuted matrix in compressed column form.
        let mut cp = vec![0usize; n + 1];
        for (i, j, _) in a.triplets() {
            let (ni, nj) = (iperm[i], iperm[j]);
            if ni <= nj {
                cp[nj + 1] += 1;
            }
        }
        for k in 0..n {
            cp[k + 1] += cp[k];
        }
        let mut next = cp.clone();
        let mut ci = vec![0usize; cp[n]];
        let mut cx = vec![T::zero(); cp[n]];
        for (i, j, v) in a.triplets() {
            let (ni, nj) = (iperm[i], iperm[j]);
            if ni <= nj {
                let p = next[nj];
                ci[p] = ni;
                cx[p] = v;
                next[nj] += 1;
            }
        }

        let parent = etree(n, &cp, &ci);

        // Column counts from the row patterns.
        let mut mark = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = ereach(k, &cp, &ci, &parent, &mut stack, &mut mark);
            for &i in &stack[top..n] {
                counts[i] += 1;
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + counts[k];
        }
        let nnz = lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![T::zero(); nnz];
        let mut c: Vec<usize> = lp[..n].to_vec();
        let mut x = vec![T::zero(); n];
        mark.iter_mut().for_each(|m| *m = NONE);

        for k in 0..n {
            let top = ereach(k, &cp, &ci, &parent, &mut stack, &mut mark);
            x[k] = T::zero();
            for p in cp[k]..cp[k + 1] {
                x[ci[p]] += cx[p];
            }
            let mut d = x[k];
            x[k] = T::zero();
            for &i in &stack[top..n] {
                let lki = x[i] / lx[lp[i]];
                x[i] = T::zero();
                for p in lp[i] + 1..c[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = c[i];
                c[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > T::zero()) {
                return Err(LinalgError::NotPositiveDefinite { column: perm[k] });
            }
            let p = c[k];
            c[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        Ok(Self { n, perm, lp, li, lx })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Nonzeros in the triangular factor.
    pub fn factor_nnz(&self) -> usize {
        self.lx.len()
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, LinalgError> {
        let mut out = vec![T::zero(); self.n];
        let mut work = vec![T::zero(); self.n];
        self.solve_into(b, &mut out, &mut work)?;
        Ok(out)
    }

    /// Back-substitution only; `work` must have length `dim()`.
    pub fn solve_into(&self, b: &[T], out: &mut [T], work: &mut [T]) -> Result<(), LinalgError> {
        let n = self.n;
        for len in [b.len(), out.len(), work.len()] {
            if len != n {
                return Err(LinalgError::DimensionMismatch { expected: n, found: len });
            }
        }
        let (lp, li, lx) = (&self.lp, &self.li, &self.lx);
        for (k, &old) in self.perm.iter().enumerate() {
            work[k] = b[old];
        }
        for j in 0..n {
            let xj = work[j] / lx[lp[j]];
            work[j] = xj;
            for p in lp[j] + 1..lp[j + 1] {
                work[li[p]] -= lx[p] * xj;
            }
        }
        for j in (0..n).rev() {
            let mut s = work[j];
            for p in lp[j] + 1..lp[j + 1] {
                s -= lx[p] * work[li[p]];
            }
            work[j] = s / lx[lp[j]];
        }
        for (k, &old) in self.perm.iter().enumerate() {
            out[old] = work[k];
        }
        Ok(())
    }
}

fn etree(n: usize, cp: &[usize], ci: &[usize]) -> Vec<usize> {
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for p in cp[k]..cp[k + 1] {
            let mut i = ci[p];
            while i != NONE && i < k {
                let inext = ancestor[i];
                ancestor[i] = k;
                if inext == NONE {
                    parent[i] = k;
                }
                i = inext;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of L, written to `stack[top..n]` in topological order.
fn ereach(
    k: usize,
    cp: &[usize],
    ci: &[usize],
    parent: &[usize],
    stack: &mut [usize],
    mark: &mut [usize],
) -> usize {
    let n = stack.len();
    let mut top = n;
    mark[k] = k;
    for p in cp[k]..cp[k + 1] {
        let mut i = ci[p];
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve_returns_rhs() {
        let f = factorize_spd(&SparseMatrix::<f64>::identity(3)).unwrap();
        assert_eq!(f.solve(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
        assert_eq!(f.solve(&[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn diagonal_solve() {
        let f = factorize_spd(&SparseMatrix::from_diagonal(&[2.0, 4.0, 8.0])).unwrap();
        let x = f.solve(&[2.0, 4.0, 8.0]).unwrap();
        for xi in x {
            assert!((xi - 1.0f64).abs() < 1e-15);
        }
        let f = factorize_spd(&SparseMatrix::from_diagonal(&[4.0])).unwrap();
        assert_eq!(f.solve(&[8.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(factorize_spd(&a), Err(LinalgError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn wrong_rhs_length_is_dimension_mismatch() {
        let f = factorize_spd(&SparseMatrix::<f64>::identity(3)).unwrap();
        assert_eq!(
            f.solve(&[1.0, 2.0]),
            Err(LinalgError::DimensionMismatch { expected: 3, found: 2 })
        );
    }
}
