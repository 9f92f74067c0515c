//! Anderson acceleration (type II) for fixed-point maps `v ↦ g(v)`.

use crate::real::Real;

/// Keeps the last `depth` differences of iterates and residuals and
/// extrapolates the next iterate from them. Depth 0 is plain iteration.
#[derive(Clone, Debug)]
pub struct Anderson<T> {
    depth: usize,
    prev_v: Option<Vec<T>>,
    prev_g: Option<Vec<T>>,
    dg: Vec<Vec<T>>,
    df: Vec<Vec<T>>,
}

impl<T: Real> Anderson<T> {
    pub fn new(depth: usize) -> Self {
        Self { depth, prev_v: None, prev_g: None, dg: Vec::new(), df: Vec::new() }
    }

    pub fn reset(&mut self) {
        self.prev_v = None;
        self.prev_g = None;
        self.dg.clear();
        self.df.clear();
    }

    /// Given the current iterate `v` and its image `g = g(v)`, returns the next iterate.
    pub fn next(&mut self, v: &[T], g: &[T]) -> Vec<T> {
        if self.depth == 0 {
            return g.to_vec();
        }
        if let (Some(pv), Some(pg)) = (&self.prev_v, &self.prev_g) {
            let dg: Vec<T> = g.iter().zip(pg).map(|(a, b)| *a - *b).collect();
            let df: Vec<T> = g.iter().zip(v).zip(pg.iter().zip(pv)).map(|((g1, v1), (g0, v0))| (*g1 - *v1) - (*g0 - *v0)).collect();
            if self.dg.len() == self.depth {
                self.dg.remove(0);
                self.df.remove(0);
            }
            self.dg.push(dg);
            self.df.push(df);
        }
        self.prev_v = Some(v.to_vec());
        self.prev_g = Some(g.to_vec());
        let k = self.df.len();
        if k == 0 {
            return g.to_vec();
        }
        let f: Vec<T> = g.iter().zip(v).map(|(a, b)| *a - *b).collect();
        let mut a = vec![vec![T::zero(); k]; k];
        let mut rhs = vec![T::zero(); k];
        let mut trace = T::zero();
        for i in 0..k {
            for j in 0..=i {
                let s = crate::real::dot(&self.df[i], &self.df[j]);
                a[i][j] = s;
                a[j][i] = s;
            }
            rhs[i] = crate::real::dot(&self.df[i], &f);
            trace += a[i][i];
        }
        let reg = trace * T::lit(1e-12) + T::min_positive_value();
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += reg;
        }
        let Some(gamma) = solve_small_spd(a, rhs) else {
            self.reset();
            return g.to_vec();
        };
        let mut out = g.to_vec();
        for (gi, dgi) in gamma.iter().zip(&self.dg) {
            for (o, d) in out.iter_mut().zip(dgi) {
                *o -= *gi * *d;
            }
        }
        if out.iter().all(|x| x.is_finite()) {
            out
        } else {
            self.reset();
            g.to_vec()
        }
    }
}

fn solve_small_spd<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    for j in 0..n {
        let d = a[j][j];
        if !(d > T::zero()) {
            return None;
        }
        let l = d.sqrt();
        a[j][j] = l;
        for i in j + 1..n {
            a[i][j] /= l;
        }
        for c in j + 1..n {
            for r in c..n {
                let s = a[r][j] * a[c][j];
                a[r][c] -= s;
            }
        }
    }
    for i in 0..n {
        for k in 0..i {
            let s = a[i][k] * b[k];
            b[i] -= s;
        }
        b[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let s = a[k][i] * b[k];
            b[i] -= s;
        }
        b[i] /= a[i][i];
    }
    Some(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accelerates_linear_contraction() {
        // g(v) = M v + c with spectral radius 0.99 converges in a handful of steps.
        let diag = [0.99, 0.5, -0.9, 0.1];
        let c = [1.0, 2.0, -1.0, 0.5];
        let g = |v: &[f64]| -> Vec<f64> { v.iter().zip(diag).zip(c).map(|((x, d), c)| d * x + c).collect() };
        let fixed: Vec<f64> = diag.iter().zip(c).map(|(d, c)| c / (1.0 - d)).collect();
        let mut aa = Anderson::new(5);
        let mut v = vec![0.0; 4];
        for _ in 0..12 {
            let gv = g(&v);
            v = aa.next(&v, &gv);
        }
        let err = v.iter().zip(&fixed).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn depth_zero_is_plain_iteration() {
        let mut aa = Anderson::<f64>::new(0);
        assert_eq!(aa.next(&[1.0, 2.0], &[3.0, 4.0]), vec![3.0, 4.0]);
    }
}
