use crate::real::Real;

use super::ordering::block_minimum_degree;
use super::{LinalgError, SparseMatrix};

const NONE: usize = usize::MAX;

/// Left-looking sparse LU with threshold partial pivoting, `P A Q = L U`.
///
/// The column order `Q` is a minimum-degree ordering of `A + Aᵀ`; within each
/// column the diagonal is preferred as pivot when it is within `pivot_tol` of
/// the largest candidate.
#[derive(Clone, Debug)]
pub struct LuFactorization<T> {
    n: usize,
    q: Vec<usize>,
    pinv: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<T>,
    up: Vec<usize>,
    ui: Vec<usize>,
    ux: Vec<T>,
}

/// Solves `A x = b` for a square, possibly nonsymmetric `A`.
pub fn solve_general<T: Real>(a: &SparseMatrix<T>, b: &[T]) -> Result<Vec<T>, LinalgError> {
    LuFactorization::factorize(a)?.solve(b)
}

impl<T: Real> LuFactorization<T> {
    pub fn factorize(a: &SparseMatrix<T>) -> Result<Self, LinalgError> {
        a.check_square()?;
        let q = block_minimum_degree(a, 3);
        Self::with_column_order(a, q, T::lit(1e-3))
    }

    pub fn with_column_order(a: &SparseMatrix<T>, q: Vec<usize>, pivot_tol: T) -> Result<Self, LinalgError> {
        a.check_square()?;
        let n = a.nrows();
        // compressed columns of A = rows of Aᵀ
        let at = a.transpose();
        let mut pinv = vec![NONE; n];
        let mut lp = Vec::with_capacity(n + 1);
        let mut up = Vec::with_capacity(n + 1);
        let cap = 4 * a.nnz() + n;
        let mut li: Vec<usize> = Vec::with_capacity(cap);
        let mut lx: Vec<T> = Vec::with_capacity(cap);
        let mut ui: Vec<usize> = Vec::with_capacity(cap);
        let mut ux: Vec<T> = Vec::with_capacity(cap);
        let mut x = vec![T::zero(); n];
        let mut xi = vec![0usize; n];
        let mut pstack = vec![0usize; n];
        let mut marked = vec![false; n];

        for k in 0..n {
            lp.push(li.len());
            up.push(ui.len());
            let col = q[k];
            let (bi, bx) = at.row(col);

            // Reach of column `col` in the graph of the partial L.
            let mut top = n;
            for &start in bi {
                if !marked[start] {
                    top = dfs(start, &lp, &li, &pinv, &mut xi, &mut pstack, &mut marked, top);
                }
            }
            for &j in &xi[top..n] {
                marked[j] = false;
                x[j] = T::zero();
            }
            for (i, v) in bi.iter().zip(bx) {
                x[*i] += *v;
            }
            for px in top..n {
                let j = xi[px];
                let jcol = pinv[j];
                if jcol == NONE {
                    continue;
                }
                let xj = x[j];
                let end = if jcol + 1 < lp.len() { lp[jcol + 1] } else { li.len() };
                for p in lp[jcol] + 1..end {
                    x[li[p]] -= lx[p] * xj;
                }
            }

            let mut ipiv = NONE;
            let mut amax = -T::one();
            for &i in &xi[top..n] {
                if pinv[i] == NONE {
                    let t = x[i].abs();
                    if t > amax {
                        amax = t;
                        ipiv = i;
                    }
                } else {
                    ui.push(pinv[i]);
                    ux.push(x[i]);
                }
            }
            if ipiv == NONE || !(amax > T::zero()) {
                return Err(LinalgError::SingularMatrix { column: col });
            }
            if pinv[col] == NONE && x[col].abs() >= amax * pivot_tol {
                ipiv = col;
            }
            let pivot = x[ipiv];
            ui.push(k);
            ux.push(pivot);
            pinv[ipiv] = k;
            li.push(ipiv);
            lx.push(T::one());
            for &i in &xi[top..n] {
                if pinv[i] == NONE {
                    li.push(i);
                    lx.push(x[i] / pivot);
                }
                x[i] = T::zero();
            }
        }
        lp.push(li.len());
        up.push(ui.len());
        for r in li.iter_mut() {
            *r = pinv[*r];
        }
        Ok(Self { n, q, pinv, lp, li, lx, up, ui, ux })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lx.len() + self.ux.len()
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, LinalgError> {
        let n = self.n;
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, found: b.len() });
        }
        let mut x = vec![T::zero(); n];
        for i in 0..n {
            x[self.pinv[i]] = b[i];
        }
        for j in 0..n {
            let xj = x[j];
            for p in self.lp[j] + 1..self.lp[j + 1] {
                x[self.li[p]] -= self.lx[p] * xj;
            }
        }
        for j in (0..n).rev() {
            let last = self.up[j + 1] - 1;
            let xj = x[j] / self.ux[last];
            x[j] = xj;
            for p in self.up[j]..last {
                x[self.ui[p]] -= self.ux[p] * xj;
            }
        }
        let mut out = vec![T::zero(); n];
        for k in 0..n {
            out[self.q[k]] = x[k];
        }
        Ok(out)
    }
}

/// Depth-first search from `start` over the graph of L (row `j` links to column
/// `pinv[j]`); finished nodes are pushed to `xi[..top]` from the back.
#[allow(clippy::too_many_arguments)]
fn dfs(
    start: usize,
    lp: &[usize],
    li: &[usize],
    pinv: &[usize],
    xi: &mut [usize],
    pstack: &mut [usize],
    marked: &mut [bool],
    mut top: usize,
) -> usize {
    // xi[..] doubles as the recursion stack below `top`
    let mut head: isize = 0;
    let mut stack = Vec::with_capacity(16);
    stack.push(start);
    while head >= 0 {
        let j = stack[head as usize];
        let jcol = pinv[j];
        let (begin, end) = if jcol == NONE {
            (0, 0)
        } else {
            let end = if jcol + 1 < lp.len() { lp[jcol + 1] } else { li.len() };
            (lp[jcol], end)
        };
        if !marked[j] {
            marked[j] = true;
            pstack[head as usize] = begin;
        }
        let mut done = true;
        let mut p = pstack[head as usize];
        while p < end {
            let i = li[p];
            p += 1;
            if marked[i] {
                continue;
            }
            pstack[head as usize] = p;
            head += 1;
            if stack.len() <= head as usize {
                stack.push(i);
            } else {
                stack[head as usize] = i;
            }
            done = false;
            break;
        }
        if done {
            pstack[head as usize] = end;
            head -= 1;
            top -= 1;
            xi[top] = j;
        }
    }
    top
}
