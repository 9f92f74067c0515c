//! Small fixed-size vector and matrix types used per node, per constraint and per contact.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::real::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<T>(pub [T; 3]);

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3([x, y, z])
    }

    #[inline]
    pub fn zero() -> Self {
        Vec3([T::zero(); 3])
    }

    #[inline]
    pub fn unit(axis: usize) -> Self {
        let mut v = Self::zero();
        v.0[axis] = T::one();
        v
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vec3([b * f - c * e, c * d - a * f, a * e - b * d])
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }

    pub fn outer(self, o: Self) -> Mat3<T> {
        let mut m = Mat3::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[i] * o.0[j];
            }
        }
        m
    }

    /// Reads node `i` from a flat `3m` vector.
    #[inline]
    pub fn read(x: &[T], i: usize) -> Self {
        Vec3([x[3 * i], x[3 * i + 1], x[3 * i + 2]])
    }

    #[inline]
    pub fn write(self, x: &mut [T], i: usize) {
        x[3 * i..3 * i + 3].copy_from_slice(&self.0);
    }

    #[inline]
    pub fn add_to(self, x: &mut [T], i: usize) {
        x[3 * i] += self.0[0];
        x[3 * i + 1] += self.0[1];
        x[3 * i + 2] += self.0[2];
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        Vec3([T::lit(v[0]), T::lit(v[1]), T::lit(v[2])])
    }

    pub fn to_f64(self) -> [f64; 3] {
        [self.0[0].to_f64_lossy(), self.0[1].to_f64_lossy(), self.0[2].to_f64_lossy()]
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for Vec3<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Real> Mat3<T> {
    pub fn zero() -> Self {
        Mat3([[T::zero(); 3]; 3])
    }

    pub fn identity() -> Self {
        Self::diagonal(T::one())
    }

    pub fn diagonal(d: T) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            m.0[i][i] = d;
        }
        m
    }

    pub fn from_cols(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Self {
        Mat3([
            [a.0[0], b.0[0], c.0[0]],
            [a.0[1], b.0[1], c.0[1]],
            [a.0[2], b.0[2], c.0[2]],
        ])
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3(self.0[i])
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[j][i];
            }
        }
        m
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3([self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v)])
    }

    /// `selfᵀ v`
    #[inline]
    pub fn tr_mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3([self.col(0).dot(v), self.col(1).dot(v), self.col(2).dot(v)])
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = T::zero();
                for k in 0..3 {
                    s += self.0[i][k] * o.0[k][j];
                }
                m.0[i][j] = s;
            }
        }
        m
    }

    pub fn scale(&self, s: T) -> Self {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|x| *x *= s);
        m
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut m = *self;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] += o.0[i][j];
            }
        }
        m
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(-T::one()))
    }

    /// Frobenius inner product.
    pub fn frobenius_dot(&self, o: &Self) -> T {
        let mut s = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                s += self.0[i][j] * o.0[i][j];
            }
        }
        s
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().flatten().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Moore-Penrose pseudoinverse. Singular values below `rel_tol * σ_max` are
    /// treated as zero. Returns the inverse and the numerical rank.
    pub fn pseudo_inverse(&self, rel_tol: T) -> (Self, usize) {
        let ata = self.transpose().mul_mat(self);
        let (eig, v) = symmetric_eigen(&ata);
        let sigma: Vec<T> = eig.iter().map(|l| l.max(T::zero()).sqrt()).collect();
        let smax = sigma.iter().fold(T::zero(), |m, s| m.max(*s));
        let mut pinv = Self::zero();
        let mut rank = 0;
        if smax == T::zero() {
            return (pinv, 0);
        }
        for k in 0..3 {
            if sigma[k] <= rel_tol * smax {
                continue;
            }
            rank += 1;
            let vk = v.col(k);
            // u_k = A v_k / σ_k, contribution v_k u_kᵀ / σ_k = v_k (A v_k)ᵀ / σ_k²
            let avk = self.mul_vec(vk);
            pinv = pinv.add(&vk.outer(avk).scale(T::one() / (sigma[k] * sigma[k])));
        }
        (pinv, rank)
    }
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and a matrix whose columns are the eigenvectors.
pub fn symmetric_eigen<T: Real>(m: &Mat3<T>) -> ([T; 3], Mat3<T>) {
    let mut a = *m;
    let mut v = Mat3::identity();
    for _sweep in 0..50 {
        let off = a.0[0][1].abs() + a.0[0][2].abs() + a.0[1][2].abs();
        let scale = a.0[0][0].abs() + a.0[1][1].abs() + a.0[2][2].abs();
        if off <= T::epsilon() * scale || off == T::zero() {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a.0[p][q];
            if apq == T::zero() {
                continue;
            }
            let theta = (a.0[q][q] - a.0[p][p]) / (T::lit(2.0) * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            let mut rot = Mat3::identity();
            rot.0[p][p] = c;
            rot.0[q][q] = c;
            rot.0[p][q] = s;
            rot.0[q][p] = -s;
            a = rot.transpose().mul_mat(&a).mul_mat(&rot);
            v = v.mul_mat(&rot);
        }
    }
    ([a.0[0][0], a.0[1][1], a.0[2][2]], v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_inverse_of_invertible_matrix_is_inverse() {
        let m = Mat3([[2.0, 1.0, 0.0], [0.5, 3.0, 1.0], [0.0, -1.0, 4.0]]);
        let (p, rank) = m.pseudo_inverse(1e-10);
        assert_eq!(rank, 3);
        let id = m.mul_mat(&p);
        assert!(id.sub(&Mat3::identity()).max_abs() < 1e-12);
    }

    #[test]
    fn pseudo_inverse_rank_deficient_satisfies_penrose_identities() {
        // rank 2
        let m: Mat3<f64> = Mat3([[0.0, 0.0, 0.0], [1.0, 0.0, 0.3], [0.0, 1.0, -0.4]]);
        let (p, rank) = m.pseudo_inverse(1e-10);
        assert_eq!(rank, 2);
        assert!(m.mul_mat(&p).mul_mat(&m).sub(&m).max_abs() < 1e-12);
        assert!(p.mul_mat(&m).mul_mat(&p).sub(&p).max_abs() < 1e-12);
        let mp = m.mul_mat(&p);
        assert!(mp.sub(&mp.transpose()).max_abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_pseudo_inverse_is_zero() {
        let (p, rank) = Mat3::<f64>::zero().pseudo_inverse(1e-10);
        assert_eq!(rank, 0);
        assert_eq!(p, Mat3::zero());
    }
}
