//! Quadratic projective-dynamics constraints: stretch (per edge), bending
//! (per interior hinge) and attachment (per pinned vertex).
//!
//! Every constraint has the form `wᵢ/2 ‖Aᵢx − pᵢ‖²` where `Aᵢx = Σₖ cₖ x_{vₖ}`
//! is a weighted sum of stencil vertex positions, so `AᵢᵀAᵢ = (c cᵀ) ⊗ I₃`.

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{Mat3, Vec3};
use crate::linalg::{SparseBuilder, SparseMatrix};
use crate::mesh::{MassMatrix, TriMesh};
use crate::real::Real;

/// Below this length a rescaling projection has no defined direction.
pub const DEGENERATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("constraint {constraint}: projected quantity has norm below {DEGENERATE_TOLERANCE}, direction undefined")]
    DegenerateEdge { constraint: usize },
    #[error("attachment vertex {vertex} out of range ({count} vertices)")]
    InvalidAttachment { vertex: usize, count: usize },
    #[error("{0} weight must be positive")]
    NonPositiveWeight(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintKind {
    Stretch,
    Bend,
    Attach,
}

/// Target position of a pinned vertex as a function of time.
#[derive(Clone, Debug, PartialEq)]
pub enum Trajectory<T> {
    Fixed(Vec3<T>),
    /// Piecewise-linear interpolation of `(time, position)` samples, clamped at both ends.
    Waypoints(Vec<(T, Vec3<T>)>),
}

impl<T: Real> Trajectory<T> {
    pub fn at(&self, t: T) -> Vec3<T> {
        match self {
            Trajectory::Fixed(p) => *p,
            Trajectory::Waypoints(w) => {
                let (first, last) = (w[0], w[w.len() - 1]);
                if t <= first.0 {
                    return first.1;
                }
                if t >= last.0 {
                    return last.1;
                }
                let k = w.iter().position(|(tk, _)| *tk > t).unwrap();
                let (t0, p0) = w[k - 1];
                let (t1, p1) = w[k];
                let s = (t - t0) / (t1 - t0);
                p0 + (p1 - p0) * s
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attachment<T> {
    pub vertex: usize,
    pub trajectory: Trajectory<T>,
}

/// The set `ℳᵢ` the auxiliary variable is projected onto.
#[derive(Clone, Debug, PartialEq)]
pub enum Manifold<T> {
    /// `‖p‖ = radius` (stretch rest length, curved bending rest state).
    Sphere { radius: T },
    /// `p = 0` (flat bending rest state).
    Origin,
    Target(Trajectory<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint<T> {
    pub kind: ConstraintKind,
    pub weight: T,
    pub stencil: Vec<usize>,
    pub coeffs: Vec<T>,
    pub manifold: Manifold<T>,
}

/// Result of the local step for one constraint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection<T> {
    pub p: Vec3<T>,
    /// `∂p*/∂(Aᵢx)`; the full Jacobian is this block times `cₖ` per stencil vertex.
    pub dp_dax: Mat3<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialWeights<T> {
    pub stretch: T,
    pub bend: T,
    pub attach: T,
}

impl<T: Real> Constraint<T> {
    /// `Aᵢx`
    #[inline]
    pub fn apply(&self, x: &[T]) -> Vec3<T> {
        let mut s = Vec3::zero();
        for (v, c) in self.stencil.iter().zip(&self.coeffs) {
            s += Vec3::read(x, *v) * *c;
        }
        s
    }

    /// `x += scale · Aᵢᵀ q`
    #[inline]
    pub fn scatter_transpose(&self, q: Vec3<T>, scale: T, x: &mut [T]) {
        for (v, c) in self.stencil.iter().zip(&self.coeffs) {
            (q * (*c * scale)).add_to(x, *v);
        }
    }

    /// `∂p*/∂x` restricted to the stencil, one 3x3 block per stencil vertex.
    pub fn stencil_jacobian(&self, proj: &Projection<T>) -> Vec<Mat3<T>> {
        self.coeffs.iter().map(|c| proj.dp_dax.scale(*c)).collect()
    }
}

/// Projects `Aᵢx` onto the constraint manifold (local step) and returns the
/// exact derivative of the projection map.
pub fn project_local<T: Real>(
    c: &Constraint<T>,
    index: usize,
    x: &[T],
    t: T,
) -> Result<Projection<T>, EnergyError> {
    match &c.manifold {
        Manifold::Sphere { radius } => {
            let ax = c.apply(x);
            let len = ax.norm();
            if len < T::lit(DEGENERATE_TOLERANCE) {
                return Err(EnergyError::DegenerateEdge { constraint: index });
            }
            let dir = ax * (T::one() / len);
            let dp = Mat3::identity().sub(&dir.outer(dir)).scale(*radius / len);
            Ok(Projection { p: dir * *radius, dp_dax: dp })
        }
        Manifold::Origin => Ok(Projection { p: Vec3::zero(), dp_dax: Mat3::zero() }),
        Manifold::Target(traj) => Ok(Projection { p: traj.at(t), dp_dax: Mat3::zero() }),
    }
}

/// Local step over all constraints. Runs in parallel; output order equals constraint order.
pub fn project_all<T: Real>(
    constraints: &[Constraint<T>],
    x: &[T],
    t: T,
) -> Result<Vec<Projection<T>>, EnergyError> {
    constraints
        .par_iter()
        .enumerate()
        .map(|(i, c)| project_local(c, i, x, t))
        .collect()
}

fn cot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a.dot(b) / a.cross(b).norm()
}

/// Cotangent bending stencil for the hinge with edge `(x0, x1)` and opposite
/// vertices `x2`, `x3`, scaled by `sqrt(3 / (A₁ + A₂))`. It vanishes on any
/// planar configuration.
pub fn bending_coefficients<T: Real>(x0: Vec3<T>, x1: Vec3<T>, x2: Vec3<T>, x3: Vec3<T>) -> [T; 4] {
    let c01 = cot(x1 - x0, x2 - x0);
    let c02 = cot(x1 - x0, x3 - x0);
    let c03 = cot(x0 - x1, x2 - x1);
    let c04 = cot(x0 - x1, x3 - x1);
    let a1 = (x1 - x0).cross(x2 - x0).norm() * T::lit(0.5);
    let a2 = (x1 - x0).cross(x3 - x0).norm() * T::lit(0.5);
    let s = (T::lit(3.0) / (a1 + a2)).sqrt();
    [(c03 + c04) * s, (c01 + c02) * s, -(c01 + c03) * s, -(c02 + c04) * s]
}

/// One stretch constraint per edge, one bending constraint per hinge and one
/// attachment constraint per pinned vertex, in that order.
pub fn build_constraints<T: Real>(
    mesh: &TriMesh<T>,
    weights: MaterialWeights<T>,
    attachments: &[Attachment<T>],
) -> Result<Vec<Constraint<T>>, EnergyError> {
    if !(weights.stretch > T::zero()) {
        return Err(EnergyError::NonPositiveWeight("stretch"));
    }
    if !(weights.bend > T::zero()) {
        return Err(EnergyError::NonPositiveWeight("bend"));
    }
    if !attachments.is_empty() && !(weights.attach > T::zero()) {
        return Err(EnergyError::NonPositiveWeight("attach"));
    }
    let v = &mesh.vertices;
    let mut out = Vec::with_capacity(mesh.edges().len() + mesh.hinges().len() + attachments.len());
    for &[a, b] in mesh.edges() {
        out.push(Constraint {
            kind: ConstraintKind::Stretch,
            weight: weights.stretch,
            stencil: vec![a, b],
            coeffs: vec![-T::one(), T::one()],
            manifold: Manifold::Sphere { radius: (v[b] - v[a]).norm() },
        });
    }
    for h in mesh.hinges() {
        let stencil = vec![h.edge[0], h.edge[1], h.opposite[0], h.opposite[1]];
        let coeffs = bending_coefficients(v[stencil[0]], v[stencil[1]], v[stencil[2]], v[stencil[3]]);
        let mut rest = Vec3::zero();
        let mut magnitude = T::zero();
        for (k, c) in coeffs.iter().enumerate() {
            rest += (v[stencil[k]] - v[stencil[0]]) * *c;
            magnitude += c.abs() * (v[stencil[k]] - v[stencil[0]]).norm();
        }
        let r0 = rest.norm();
        let manifold = if r0 <= T::lit(1e-9) * magnitude {
            Manifold::Origin
        } else {
            Manifold::Sphere { radius: r0 }
        };
        out.push(Constraint {
            kind: ConstraintKind::Bend,
            weight: weights.bend,
            stencil,
            coeffs: coeffs.to_vec(),
            manifold,
        });
    }
    for att in attachments {
        if att.vertex >= mesh.num_vertices() {
            return Err(EnergyError::InvalidAttachment { vertex: att.vertex, count: mesh.num_vertices() });
        }
        out.push(Constraint {
            kind: ConstraintKind::Attach,
            weight: weights.attach,
            stencil: vec![att.vertex],
            coeffs: vec![T::one()],
            manifold: Manifold::Target(att.trajectory.clone()),
        });
    }
    Ok(out)
}

/// `Σᵢ wᵢ AᵢᵀAᵢ`
pub fn assemble_stiffness<T: Real>(n_nodes: usize, constraints: &[Constraint<T>]) -> SparseMatrix<T> {
    let cap: usize = constraints.iter().map(|c| 3 * c.stencil.len() * c.stencil.len()).sum();
    let mut b = SparseBuilder::with_capacity(3 * n_nodes, 3 * n_nodes, cap);
    for c in constraints {
        for (va, ca) in c.stencil.iter().zip(&c.coeffs) {
            for (vb, cb) in c.stencil.iter().zip(&c.coeffs) {
                b.push_scaled_identity3(*va, *vb, c.weight * (*ca * *cb));
            }
        }
    }
    b.build()
}

/// System matrix `P = M + h² Σᵢ wᵢ AᵢᵀAᵢ`.
pub fn assemble_system_matrix<T: Real>(mass: &MassMatrix<T>, constraints: &[Constraint<T>], h: T) -> SparseMatrix<T> {
    let k = assemble_stiffness(mass.num_nodes(), constraints);
    SparseMatrix::from_diagonal(&mass.diagonal()).linear_combination(T::one(), &k, h * h)
}

/// `Σᵢ wᵢ Aᵢᵀ pᵢ`
pub fn weighted_projection_sum<T: Real>(constraints: &[Constraint<T>], proj: &[Projection<T>], n_dofs: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n_dofs];
    for (c, p) in constraints.iter().zip(proj) {
        c.scatter_transpose(p.p, c.weight, &mut out);
    }
    out
}

/// `W(x) = Σᵢ wᵢ/2 ‖Aᵢx − pᵢ*(x)‖²`
pub fn elastic_energy<T: Real>(constraints: &[Constraint<T>], proj: &[Projection<T>], x: &[T]) -> T {
    constraints
        .iter()
        .zip(proj)
        .map(|(c, p)| c.weight * T::lit(0.5) * (c.apply(x) - p.p).norm_squared())
        .sum()
}

/// `∇W(x) = Σᵢ wᵢ Aᵢᵀ(Aᵢx − pᵢ*)`; the internal force is its negative.
pub fn elastic_gradient<T: Real>(constraints: &[Constraint<T>], proj: &[Projection<T>], x: &[T]) -> Vec<T> {
    let mut g = vec![T::zero(); x.len()];
    for (c, p) in constraints.iter().zip(proj) {
        c.scatter_transpose(c.apply(x) - p.p, c.weight, &mut g);
    }
    g
}

/// Gradient of the unit-weight energy of one constraint kind, `Σ_{i∈kind} Aᵢᵀ(Aᵢx − pᵢ*)`.
pub fn unit_weight_gradient<T: Real>(
    constraints: &[Constraint<T>],
    proj: &[Projection<T>],
    x: &[T],
    kind: ConstraintKind,
) -> Vec<T> {
    let mut g = vec![T::zero(); x.len()];
    for (c, p) in constraints.iter().zip(proj).filter(|(c, _)| c.kind == kind) {
        c.scatter_transpose(c.apply(x) - p.p, T::one(), &mut g);
    }
    g
}

/// Surrogate `g̃(x, p) = (x−y)ᵀM(x−y)/(2h²) + Σᵢ wᵢ/2 ‖Aᵢx − pᵢ‖²` for fixed `p`.
pub fn surrogate_energy<T: Real>(
    mass: &MassMatrix<T>,
    y: &[T],
    h: T,
    constraints: &[Constraint<T>],
    proj: &[Projection<T>],
    x: &[T],
) -> T {
    let inertia: T = x
        .iter()
        .zip(y)
        .enumerate()
        .map(|(k, (a, b))| mass.node(k / 3) * (*a - *b) * (*a - *b))
        .sum();
    inertia / (T::lit(2.0) * h * h) + elastic_energy(constraints, proj, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{lumped_mass, make_grid};

    fn weights() -> MaterialWeights<f64> {
        MaterialWeights { stretch: 10.0, bend: 0.1, attach: 1e5 }
    }

    #[test]
    fn grid_2x2_constraint_counts() {
        let m = make_grid(2, 2, 1.0).unwrap();
        let cs = build_constraints(&m, weights(), &[]).unwrap();
        let count = |k| cs.iter().filter(|c| c.kind == k).count();
        assert_eq!((count(ConstraintKind::Stretch), count(ConstraintKind::Bend)), (5, 1));
    }

    #[test]
    fn pinned_vertex_adds_one_constraint() {
        let m = make_grid(3, 3, 1.0).unwrap();
        let base = build_constraints(&m, weights(), &[]).unwrap();
        let att = Attachment { vertex: 4, trajectory: Trajectory::Fixed(m.vertices[4]) };
        let cs = build_constraints(&m, weights(), &[att]).unwrap();
        assert_eq!(cs.len(), base.len() + 1);
        let last = cs.last().unwrap();
        assert_eq!(last.stencil, vec![4]);
        let k = assemble_stiffness(9, std::slice::from_ref(last));
        assert_eq!(k.nnz(), 3);
    }

    #[test]
    fn invalid_attachment_and_weights_rejected() {
        let m = make_grid(2, 2, 1.0).unwrap();
        let att = Attachment { vertex: 9, trajectory: Trajectory::Fixed(Vec3::zero()) };
        assert!(matches!(build_constraints(&m, weights(), &[att]), Err(EnergyError::InvalidAttachment { .. })));
        let mut w = weights();
        w.stretch = 0.0;
        assert!(build_constraints(&m, w, &[]).is_err());
    }

    #[test]
    fn flat_hinge_bending_vanishes() {
        let x0 = Vec3::new(0.0, 0.0, 0.0);
        let x1 = Vec3::new(1.0, 1.0, 0.0);
        let x2 = Vec3::new(1.0, 0.0, 0.0);
        let x3 = Vec3::new(0.0, 1.0, 0.0);
        let c = bending_coefficients(x0, x1, x2, x3);
        let v = x0 * c[0] + x1 * c[1] + x2 * c[2] + x3 * c[3];
        assert!(v.norm() < 1e-14);
        let m = make_grid(4, 4, 0.3).unwrap();
        let cs = build_constraints(&m, weights(), &[]).unwrap();
        let x = m.positions();
        for c in cs.iter().filter(|c| c.kind == ConstraintKind::Bend) {
            assert_eq!(c.manifold, Manifold::Origin);
            assert!(c.apply(&x).norm() < 1e-12);
        }
    }

    #[test]
    fn stretch_projection_at_rest_length_is_identity() {
        let m = make_grid(2, 2, 1.0).unwrap();
        let cs = build_constraints(&m, weights(), &[]).unwrap();
        let x = m.positions();
        let c = &cs[0];
        let p = project_local(c, 0, &x, 0.0).unwrap();
        let ax = c.apply(&x);
        assert!((p.p - ax).norm() < 1e-15);
        let e = ax.normalized();
        assert!(p.dp_dax.sub(&Mat3::identity().sub(&e.outer(e))).max_abs() < 1e-15);
    }

    #[test]
    fn attach_projection_ignores_positions() {
        let target = Vec3::new(1.0, 2.0, 3.0);
        let c = Constraint {
            kind: ConstraintKind::Attach,
            weight: 1.0,
            stencil: vec![0],
            coeffs: vec![1.0],
            manifold: Manifold::Target(Trajectory::Fixed(target)),
        };
        let p = project_local(&c, 0, &[5.0, 5.0, 5.0], 0.3).unwrap();
        assert_eq!(p.p, target);
        assert_eq!(p.dp_dax, Mat3::zero());
    }

    #[test]
    fn degenerate_edge_is_reported() {
        let m = make_grid(2, 2, 1.0).unwrap();
        let cs = build_constraints(&m, weights(), &[]).unwrap();
        let x = vec![0.0; 12];
        assert_eq!(project_local(&cs[0], 0, &x, 0.0), Err(EnergyError::DegenerateEdge { constraint: 0 }));
    }

    #[test]
    fn waypoint_trajectory_interpolates_and_clamps() {
        let t = Trajectory::Waypoints(vec![(0.0, Vec3::new(0.0, 0.0, 0.0)), (1.0, Vec3::new(2.0, 0.0, 0.0))]);
        assert_eq!(t.at(-1.0)[0], 0.0);
        assert_eq!(t.at(0.25)[0], 0.5);
        assert_eq!(t.at(3.0)[0], 2.0);
    }

    #[test]
    fn system_matrix_without_constraints_is_mass() {
        let m = make_grid(3, 3, 1.0).unwrap();
        let mass = lumped_mass(&m, 0.5);
        let p = assemble_system_matrix(&mass, &[], 0.01);
        assert_eq!(p, SparseMatrix::from_diagonal(&mass.diagonal()));
    }

    #[test]
    fn single_attach_adds_scaled_identity_block() {
        let m = make_grid(2, 2, 1.0).unwrap();
        let mass = lumped_mass(&m, 1.0);
        let (h, w): (f64, f64) = (0.01, 50.0);
        let c = Constraint {
            kind: ConstraintKind::Attach,
            weight: w,
            stencil: vec![0],
            coeffs: vec![1.0],
            manifold: Manifold::Target(Trajectory::Fixed(Vec3::zero())),
        };
        let p = assemble_system_matrix(&mass, &[c], h);
        for r in 0..3 {
            assert!((p.get(r, r) - (mass.node(0) + h * h * w)).abs() < 1e-15);
        }
        assert_eq!(p.get(3, 3), mass.node(1));
    }
}
