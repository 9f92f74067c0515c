#![allow(dead_code)]

use diffcloth::linalg::SparseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense Gaussian elimination with partial pivoting; independent of the sparse solvers.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| m[i][k].abs().partial_cmp(&m[j][k].abs()).unwrap()).unwrap();
        m.swap(k, piv);
        x.swap(k, piv);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            if f != 0.0 {
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                x[i] -= f * x[k];
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= m[k][j] * x[j];
        }
        x[k] = s / m[k][k];
    }
    x
}

pub fn dense_matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random sparse nonsymmetric matrix with a dominant-ish diagonal.
pub fn random_sparse(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if i == j || rng.random_bool(density) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        row[i] += 2.0;
    }
    a
}

/// `BᵀB + I` with sparse `B`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<Vec<f64>> {
    let b = random_sparse(rng, n, density);
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += b[k][i] * b[k][j];
            }
            a[i][j] = s + if i == j { 1.0 } else { 0.0 };
        }
    }
    a
}

pub fn to_sparse(a: &[Vec<f64>]) -> SparseMatrix<f64> {
    SparseMatrix::from_dense(a)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub mod fd;

pub mod scenes {
    use diffcloth::contact::{Obstacle, SelfCollision};
    use diffcloth::energy::MaterialWeights;
    use diffcloth::forward::{ForceModel, SceneSpec, SolverSettings};
    use diffcloth::geom::Vec3;
    use diffcloth::mesh::{make_grid, TriMesh};

    pub fn no_self() -> SelfCollision<f64> {
        SelfCollision { enabled: false, radius: 0.01, friction: 0.0 }
    }

    pub fn base_spec(mesh: TriMesh<f64>) -> SceneSpec<f64> {
        SceneSpec {
            mesh,
            attachments: vec![],
            obstacles: vec![],
            self_collision: no_self(),
            margin: 1e-3,
            density: 0.2,
            weights: MaterialWeights { stretch: 50.0, bend: 1e-3, attach: 5e3 },
            force: ForceModel::gravity_only(9.81),
            h: 0.01,
            steps: 10,
            solver: SolverSettings::default(),
        }
    }

    /// Ribbon lying on a plane through the origin inclined by `theta` about the y axis.
    pub fn slope(theta: f64, mu: f64, nx: usize, ny: usize) -> SceneSpec<f64> {
        let (s, c) = theta.sin_cos();
        let mesh = make_grid(nx, ny, 0.02).unwrap().map_vertices(|v| Vec3::new(v[0] * c, v[1], -v[0] * s));
        let mut spec = base_spec(mesh);
        spec.obstacles = vec![Obstacle::half_space(Vec3::zero(), Vec3::new(s, 0.0, c), mu).unwrap()];
        spec
    }
}
