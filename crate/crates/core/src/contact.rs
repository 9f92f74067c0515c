//! Contact detection against analytic obstacles and node-node proximity,
//! local contact frames, the contact Jacobian, and the per-node
//! Signorini-Coulomb projection used by the forward solver.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{Mat3, Vec3};
use crate::linalg::{SparseBuilder, SparseMatrix};
use crate::mesh::{MassMatrix, TriMesh};
use crate::real::Real;

pub const DEFAULT_MARGIN: f64 = 1e-3;

/// Below this tangential speed the slip direction is undefined.
pub const ZERO_TANGENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContactError {
    #[error("slip case with tangential velocity norm {norm:e} below {ZERO_TANGENT_TOLERANCE}")]
    SlipWithZeroTangent { norm: f64 },
    #[error("invalid obstacle: {0}")]
    InvalidObstacle(String),
    #[error("self-collision radius must be positive")]
    InvalidSelfCollisionRadius,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Interior,
    Exterior,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape<T> {
    /// Points with `(x − point)·normal ≥ 0` are free.
    HalfSpace { point: Vec3<T>, normal: Vec3<T> },
    Sphere { center: Vec3<T>, radius: T, side: Side },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Obstacle<T> {
    pub shape: Shape<T>,
    pub friction: T,
}

impl<T: Real> Obstacle<T> {
    pub fn half_space(point: Vec3<T>, normal: Vec3<T>, friction: T) -> Result<Self, ContactError> {
        let len = normal.norm();
        if !(len > T::zero()) {
            return Err(ContactError::InvalidObstacle("half-space normal must be nonzero".into()));
        }
        Self::checked(Shape::HalfSpace { point, normal: normal * (T::one() / len) }, friction)
    }

    pub fn sphere(center: Vec3<T>, radius: T, side: Side, friction: T) -> Result<Self, ContactError> {
        if !(radius > T::zero()) {
            return Err(ContactError::InvalidObstacle("sphere radius must be positive".into()));
        }
        Self::checked(Shape::Sphere { center, radius, side }, friction)
    }

    fn checked(shape: Shape<T>, friction: T) -> Result<Self, ContactError> {
        if !(friction >= T::zero()) {
            return Err(ContactError::InvalidObstacle("friction coefficient must be non-negative".into()));
        }
        Ok(Self { shape, friction })
    }

    /// Signed distance, positive on the free side.
    pub fn signed_distance(&self, x: Vec3<T>) -> T {
        match &self.shape {
            Shape::HalfSpace { point, normal } => (x - *point).dot(*normal),
            Shape::Sphere { center, radius, side } => {
                let d = (x - *center).norm();
                match side {
                    Side::Exterior => d - *radius,
                    Side::Interior => *radius - d,
                }
            }
        }
    }

    /// Contact normal at `x` (pointing from the obstacle into the free region)
    /// and its derivative with respect to `x`.
    pub fn normal_at(&self, x: Vec3<T>) -> (Vec3<T>, Mat3<T>) {
        match &self.shape {
            Shape::HalfSpace { normal, .. } => (*normal, Mat3::zero()),
            Shape::Sphere { center, side, .. } => {
                let r = x - *center;
                let len = r.norm();
                let n = r * (T::one() / len);
                let dn = Mat3::identity().sub(&n.outer(n)).scale(T::one() / len);
                match side {
                    Side::Exterior => (n, dn),
                    Side::Interior => (-n, dn.scale(-T::one())),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfCollision<T> {
    pub enabled: bool,
    pub radius: T,
    pub friction: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContactKind {
    Obstacle { obstacle: usize },
    /// Node-node contact; the normal points from `partner` to the contact's `node`.
    Node { partner: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContactCase {
    TakeOff,
    Stick,
    Slip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Contact<T> {
    pub kind: ContactKind,
    pub node: usize,
    /// Columns `(t1, t2, n)`.
    pub frame: Mat3<T>,
    pub friction: T,
    pub effective_mass: T,
    /// Signed distance (obstacle) or gap minus radius (node-node) at detection.
    pub gap: T,
    /// `∂n/∂x_node`; the partner of a node-node contact sees the negative.
    pub normal_jacobian: Mat3<T>,
}

impl<T: Real> Contact<T> {
    pub fn normal(&self) -> Vec3<T> {
        self.frame.col(2)
    }

    pub fn partner(&self) -> Option<usize> {
        match self.kind {
            ContactKind::Node { partner } => Some(partner),
            ContactKind::Obstacle { .. } => None,
        }
    }

    /// Relative world-space quantity `q_node − q_partner` (or `q_node` alone).
    #[inline]
    pub fn relative(&self, q: &[T]) -> Vec3<T> {
        let a = Vec3::read(q, self.node);
        match self.partner() {
            Some(b) => a - Vec3::read(q, b),
            None => a,
        }
    }

    /// Row block of `Jₙ` applied to `v`: `Rᵀ(v_A − v_B)`.
    #[inline]
    pub fn local(&self, v: &[T]) -> Vec3<T> {
        self.frame.tr_mul_vec(self.relative(v))
    }

    /// `out += scale · Jⱼᵀ r`.
    #[inline]
    pub fn scatter(&self, r: Vec3<T>, scale: T, out: &mut [T]) {
        let w = self.frame.mul_vec(r) * scale;
        w.add_to(out, self.node);
        if let Some(b) = self.partner() {
            (-w).add_to(out, b);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactSet<T> {
    pub contacts: Vec<Contact<T>>,
    pub jacobian: SparseMatrix<T>,
}

impl<T: Real> ContactSet<T> {
    pub fn empty(n_nodes: usize) -> Self {
        Self { contacts: Vec::new(), jacobian: SparseMatrix::zeros(0, 3 * n_nodes) }
    }

    pub fn from_contacts(contacts: Vec<Contact<T>>, n_nodes: usize) -> Self {
        let jacobian = contact_jacobian(&contacts, n_nodes);
        Self { contacts, jacobian }
    }

    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    /// `Jₙᵀ r` for stacked local vectors `r`.
    pub fn apply_transpose(&self, r: &[Vec3<T>], n_dofs: usize) -> Vec<T> {
        let mut out = vec![T::zero(); n_dofs];
        for (c, rj) in self.contacts.iter().zip(r) {
            c.scatter(*rj, T::one(), &mut out);
        }
        out
    }

    /// Nodes touched by any contact, sorted.
    pub fn nodes(&self) -> Vec<usize> {
        let mut s = BTreeSet::new();
        for c in &self.contacts {
            s.insert(c.node);
            if let Some(b) = c.partner() {
                s.insert(b);
            }
        }
        s.into_iter().collect()
    }
}

/// Assembles `Jₙ` (3k × 3m) with row block `Rⱼᵀ` at the node and `−Rⱼᵀ` at the partner.
pub fn contact_jacobian<T: Real>(contacts: &[Contact<T>], n_nodes: usize) -> SparseMatrix<T> {
    let mut b = SparseBuilder::with_capacity(3 * contacts.len(), 3 * n_nodes, 18 * contacts.len());
    for (j, c) in contacts.iter().enumerate() {
        let rt = c.frame.transpose();
        b.push_block3(j, c.node, &rt);
        if let Some(p) = c.partner() {
            b.push_block3(j, p, &rt.scale(-T::one()));
        }
    }
    b.build()
}

fn reference_axis<T: Real>(n: Vec3<T>) -> Vec3<T> {
    if n[0].abs() > T::lit(0.9) {
        Vec3::unit(1)
    } else {
        Vec3::unit(0)
    }
}

/// Orthonormal frame with columns `(t1, t2, n)` obtained by Gram-Schmidt of a
/// fixed reference axis against `n`.
pub fn frame_from_normal<T: Real>(n: Vec3<T>) -> Mat3<T> {
    let a = reference_axis(n);
    let t1 = (a - n * a.dot(n)).normalized();
    let t2 = n.cross(t1);
    Mat3::from_cols(t1, t2, n)
}

/// `∂R/∂nₖ` for k = 0, 1, 2, with the reference axis held fixed.
pub fn frame_derivatives<T: Real>(n: Vec3<T>) -> [Mat3<T>; 3] {
    let a = reference_axis(n);
    let an = a.dot(n);
    let w = a - n * an;
    let wl = w.norm();
    let t1 = w * (T::one() / wl);
    let proj = Mat3::identity().sub(&t1.outer(t1)).scale(T::one() / wl);
    let mut out = [Mat3::zero(); 3];
    for (k, o) in out.iter_mut().enumerate() {
        let ek = Vec3::unit(k);
        let dw = n * (-a[k]) - ek * an;
        let dt1 = proj.mul_vec(dw);
        let dt2 = ek.cross(t1) + n.cross(dt1);
        *o = Mat3::from_cols(dt1, dt2, ek);
    }
    out
}

/// Collision detector with the mesh-dependent self-collision exclusion list
/// precomputed.
#[derive(Clone, Debug)]
pub struct Detector<T> {
    pub obstacles: Vec<Obstacle<T>>,
    pub self_collision: SelfCollision<T>,
    pub margin: T,
    excluded: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, Debug)]
struct Candidate<T> {
    depth: T,
    kind: ContactKind,
    node: usize,
}

impl<T: Real> Detector<T> {
    pub fn new(
        mesh: &TriMesh<T>,
        obstacles: Vec<Obstacle<T>>,
        self_collision: SelfCollision<T>,
        margin: T,
    ) -> Result<Self, ContactError> {
        if self_collision.enabled && !(self_collision.radius > T::zero()) {
            return Err(ContactError::InvalidSelfCollisionRadius);
        }
        let excluded = if self_collision.enabled { two_ring(mesh) } else { Vec::new() };
        Ok(Self { obstacles, self_collision, margin, excluded })
    }

    pub fn is_excluded(&self, a: usize, b: usize) -> bool {
        a == b || self.excluded.get(a).is_some_and(|e| e.binary_search(&b).is_ok())
    }

    fn obstacle_candidates(&self, x: &[T]) -> Vec<Candidate<T>> {
        let m = x.len() / 3;
        (0..m)
            .into_par_iter()
            .filter_map(|i| {
                let p = Vec3::read(x, i);
                let mut best: Option<Candidate<T>> = None;
                for (k, o) in self.obstacles.iter().enumerate() {
                    let d = o.signed_distance(p);
                    if d <= self.margin && best.is_none_or(|b| -d > b.depth) {
                        best = Some(Candidate { depth: -d, kind: ContactKind::Obstacle { obstacle: k }, node: i });
                    }
                }
                best
            })
            .collect()
    }

    /// Node pairs `(a, b)`, `a < b`, closer than the self-collision radius, via a uniform hash grid.
    pub fn close_pairs(&self, x: &[T]) -> Vec<(usize, usize)> {
        if !self.self_collision.enabled {
            return Vec::new();
        }
        let r = self.self_collision.radius;
        let m = x.len() / 3;
        let cell = |p: Vec3<T>| -> [i64; 3] {
            [0, 1, 2].map(|d| (p[d] / r).floor().to_f64_lossy() as i64)
        };
        let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for i in 0..m {
            grid.entry(cell(Vec3::read(x, i))).or_default().push(i);
        }
        let mut pairs = Vec::new();
        for i in 0..m {
            let p = Vec3::read(x, i);
            let c = cell(p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &j in bucket {
                                if j > i && !self.is_excluded(i, j) && (p - Vec3::read(x, j)).norm() < r {
                                    pairs.push((i, j));
                                }
                            }
                        }
                    }
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// Detects the contact set at positions `x`. Each node takes part in at most
    /// one contact, assigned greedily by penetration depth; the result is sorted
    /// by kind then node.
    pub fn detect(&self, x: &[T], mass: &MassMatrix<T>) -> ContactSet<T> {
        let m = x.len() / 3;
        let mut cands = self.obstacle_candidates(x);
        for (a, b) in self.close_pairs(x) {
            let dist = (Vec3::read(x, a) - Vec3::read(x, b)).norm();
            cands.push(Candidate { depth: self.self_collision.radius - dist, kind: ContactKind::Node { partner: b }, node: a });
        }
        cands.sort_by(|p, q| {
            q.depth
                .partial_cmp(&p.depth)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(p.kind.cmp(&q.kind))
                .then(p.node.cmp(&q.node))
        });
        let mut used = vec![false; m];
        let mut contacts = Vec::new();
        for c in cands {
            let partner = match c.kind {
                ContactKind::Node { partner } => Some(partner),
                ContactKind::Obstacle { .. } => None,
            };
            if used[c.node] || partner.is_some_and(|b| used[b]) {
                continue;
            }
            used[c.node] = true;
            if let Some(b) = partner {
                used[b] = true;
            }
            contacts.push(self.build_contact(c, x, mass));
        }
        contacts.sort_by(|p, q| p.kind_rank().cmp(&q.kind_rank()).then(p.node.cmp(&q.node)));
        ContactSet::from_contacts(contacts, m)
    }

    fn build_contact(&self, c: Candidate<T>, x: &[T], mass: &MassMatrix<T>) -> Contact<T> {
        let pa = Vec3::read(x, c.node);
        match c.kind {
            ContactKind::Obstacle { obstacle } => {
                let o = &self.obstacles[obstacle];
                let (n, dn) = o.normal_at(pa);
                Contact {
                    kind: c.kind,
                    node: c.node,
                    frame: frame_from_normal(n),
                    friction: o.friction,
                    effective_mass: mass.node(c.node),
                    gap: -c.depth,
                    normal_jacobian: dn,
                }
            }
            ContactKind::Node { partner } => {
                let r = pa - Vec3::read(x, partner);
                let dist = r.norm();
                let n = r * (T::one() / dist);
                let (ma, mb) = (mass.node(c.node), mass.node(partner));
                Contact {
                    kind: c.kind,
                    node: c.node,
                    frame: frame_from_normal(n),
                    friction: self.self_collision.friction,
                    effective_mass: ma * mb / (ma + mb),
                    gap: -c.depth,
                    normal_jacobian: Mat3::identity().sub(&n.outer(n)).scale(T::one() / dist),
                }
            }
        }
    }
}

impl<T> Contact<T> {
    fn kind_rank(&self) -> (u8, usize) {
        match self.kind {
            ContactKind::Obstacle { obstacle } => (0, obstacle),
            ContactKind::Node { partner } => (1, partner),
        }
    }
}

/// Sorted neighbour lists up to graph distance 2 (excluding the node itself).
fn two_ring<T: Real>(mesh: &TriMesh<T>) -> Vec<Vec<usize>> {
    let one = mesh.vertex_neighbors();
    one.iter()
        .enumerate()
        .map(|(i, n1)| {
            let mut s: BTreeSet<usize> = n1.iter().copied().collect();
            for &j in n1 {
                s.extend(one[j].iter().copied());
            }
            s.remove(&i);
            s.into_iter().collect()
        })
        .collect()
}

/// Local Signorini-Coulomb projection. `d` is the free local momentum
/// `m_eff · u_free` with components `(t1, t2, n)`; the returned impulse `r̂`
/// makes `u = (d + r̂)/m_eff` satisfy the contact law.
pub fn enforce_signorini_coulomb<T: Real>(d: Vec3<T>, mu: T) -> (Vec3<T>, ContactCase) {
    if d[2] >= T::zero() {
        return (Vec3::zero(), ContactCase::TakeOff);
    }
    let rn = -d[2];
    let dt = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if dt <= mu * rn {
        (Vec3::new(-d[0], -d[1], rn), ContactCase::Stick)
    } else {
        let s = mu * rn / dt;
        (Vec3::new(-d[0] * s, -d[1] * s, rn), ContactCase::Slip)
    }
}

/// Jacobians `(∂C/∂r, ∂C/∂u)` of the active equality constraints of `case`
/// at local impulse `r` and local velocity `u`.
pub fn local_case_jacobians<T: Real>(
    case: ContactCase,
    r: Vec3<T>,
    u: Vec3<T>,
    mu: T,
) -> Result<(Mat3<T>, Mat3<T>), ContactError> {
    match case {
        ContactCase::TakeOff => Ok((Mat3::identity(), Mat3::zero())),
        ContactCase::Stick => Ok((Mat3::zero(), Mat3::identity())),
        ContactCase::Slip => {
            let ut = (u[0] * u[0] + u[1] * u[1]).sqrt();
            if ut < T::lit(ZERO_TANGENT_TOLERANCE) {
                return Err(ContactError::SlipWithZeroTangent { norm: ut.to_f64_lossy() });
            }
            let t = [u[0] / ut, u[1] / ut];
            let mut cr = Mat3::zero();
            let mut cu = Mat3::zero();
            let k = mu * r[2] / ut;
            for a in 0..2 {
                cr.0[a][a] = T::one();
                cr.0[a][2] = mu * t[a];
                for b in 0..2 {
                    let delta = if a == b { T::one() } else { T::zero() };
                    cu.0[a][b] = k * (delta - t[a] * t[b]);
                }
            }
            cu.0[2][2] = T::one();
            Ok((cr, cu))
        }
    }
}

/// Constraint map of `case` evaluated at `(r, u)`; zero at a converged solution.
pub fn case_residual<T: Real>(case: ContactCase, r: Vec3<T>, u: Vec3<T>, mu: T) -> Vec3<T> {
    match case {
        ContactCase::TakeOff => r,
        ContactCase::Stick => u,
        ContactCase::Slip => {
            let ut = (u[0] * u[0] + u[1] * u[1]).sqrt();
            Vec3::new(r[0] + mu * r[2] * u[0] / ut, r[1] + mu * r[2] * u[1] / ut, u[2])
        }
    }
}

/// Largest violation of the contact law for `case` at local force `r` and
/// local velocity `u`: the active equalities plus the inequalities of the
/// case (separating velocity, force inside the cone, non-negative normal force).
pub fn law_violation<T: Real>(case: ContactCase, r: Vec3<T>, u: Vec3<T>, mu: T) -> T {
    let pos = |x: T| x.max(T::zero());
    let rt = (r[0] * r[0] + r[1] * r[1]).sqrt();
    match case {
        ContactCase::TakeOff => r.norm().max(pos(-u[2])),
        ContactCase::Stick => u.norm().max(pos(-r[2])).max(pos(rt - mu * r[2])),
        ContactCase::Slip => {
            let ut = (u[0] * u[0] + u[1] * u[1]).sqrt();
            if ut < T::lit(ZERO_TANGENT_TOLERANCE) {
                return T::infinity();
            }
            case_residual(case, r, u, mu).norm().max(pos(-r[2]))
        }
    }
}

/// Derivative of the local projection `r̂(d)` obtained by differentiating the
/// active constraints `C(r̂, (d + r̂)/m_eff) = 0`.
pub fn impulse_sensitivity<T: Real>(
    case: ContactCase,
    r_hat: Vec3<T>,
    d: Vec3<T>,
    mu: T,
    m_eff: T,
) -> Result<Mat3<T>, ContactError> {
    let inv_m = T::one() / m_eff;
    let u = (d + r_hat) * inv_m;
    let (cr, cu) = local_case_jacobians(case, r_hat, u, mu)?;
    let cu_m = cu.scale(inv_m);
    let (pinv, _) = cr.add(&cu_m).pseudo_inverse(T::lit(1e-12));
    Ok(pinv.mul_mat(&cu_m).scale(-T::one()))
}

/// Local impulse of the smooth branch `case`, extended beyond the region
/// where `case` is selected by [`enforce_signorini_coulomb`]. Returns `None`
/// for the slip branch at zero tangential component.
pub fn branch_impulse<T: Real>(case: ContactCase, d: Vec3<T>, mu: T) -> Option<Vec3<T>> {
    match case {
        ContactCase::TakeOff => Some(Vec3::zero()),
        ContactCase::Stick => Some(-d),
        ContactCase::Slip => {
            let dt = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if dt < T::lit(ZERO_TANGENT_TOLERANCE) {
                return None;
            }
            let s = mu * d[2] / dt;
            Some(Vec3::new(d[0] * s, d[1] * s, -d[2]))
        }
    }
}

/// `∂r/∂d` of [`branch_impulse`].
pub fn branch_sensitivity<T: Real>(case: ContactCase, d: Vec3<T>, mu: T) -> Option<Mat3<T>> {
    match case {
        ContactCase::TakeOff => Some(Mat3::zero()),
        ContactCase::Stick => Some(Mat3::identity().scale(-T::one())),
        ContactCase::Slip => {
            let dt = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if dt < T::lit(ZERO_TANGENT_TOLERANCE) {
                return None;
            }
            let t = [d[0] / dt, d[1] / dt];
            let k = mu * d[2] / dt;
            let mut m = Mat3::zero();
            for a in 0..2 {
                for b in 0..2 {
                    let delta = if a == b { T::one() } else { T::zero() };
                    m.0[a][b] = k * (delta - t[a] * t[b]);
                }
                m.0[a][2] = mu * t[a];
            }
            m.0[2][2] = -T::one();
            Some(m)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn take_off_example() {
        let (r, c) = enforce_signorini_coulomb(Vec3::new(0.3, 0.0, 0.5), 0.5);
        assert_eq!((r, c), (Vec3::zero(), ContactCase::TakeOff));
    }

    #[test]
    fn stick_example() {
        let d = Vec3::new(0.01, 0.0, -1.0);
        let (r, c) = enforce_signorini_coulomb(d, 0.5);
        assert_eq!(c, ContactCase::Stick);
        assert_eq!(r, Vec3::new(-0.01, 0.0, 1.0));
        assert_eq!(d + r, Vec3::zero());
    }

    #[test]
    fn slip_example() {
        let m: f64 = 2.0;
        let (r, c) = enforce_signorini_coulomb(Vec3::<f64>::new(1.0, 0.0, -1.0), 0.5);
        assert_eq!(c, ContactCase::Slip);
        assert_eq!(r, Vec3::new(-0.5, 0.0, 1.0));
        let u = (Vec3::new(1.0, 0.0, -1.0) + r) * (1.0 / m);
        assert_eq!(u, Vec3::new(0.5 / m, 0.0, 0.0));
        assert!(u[0] * r[0] < 0.0);
        assert_eq!((r[0] * r[0] + r[1] * r[1]).sqrt(), 0.5 * r[2]);
    }

    #[test]
    fn frictionless_slip_has_no_tangential_impulse() {
        let (r, c) = enforce_signorini_coulomb(Vec3::new(0.2, -0.1, -1.0), 0.0);
        assert_eq!(c, ContactCase::Slip);
        assert_eq!((r[0], r[1], r[2]), (0.0, 0.0, 1.0));
    }

    #[test]
    fn trivial_case_jacobians() {
        let z = Vec3::zero();
        assert_eq!(local_case_jacobians(ContactCase::TakeOff, z, z, 0.5).unwrap(), (Mat3::identity(), Mat3::zero()));
        assert_eq!(local_case_jacobians(ContactCase::Stick, z, z, 0.5).unwrap(), (Mat3::zero(), Mat3::identity()));
        assert!(matches!(
            local_case_jacobians(ContactCase::Slip, Vec3::new(0.0, 0.0, 1.0), z, 0.5),
            Err(ContactError::SlipWithZeroTangent { .. })
        ));
    }

    #[test]
    fn sensitivity_of_trivial_cases() {
        let s = impulse_sensitivity(ContactCase::TakeOff, Vec3::zero(), Vec3::new(0.0, 0.0, 1.0), 0.3, 2.0).unwrap();
        assert_eq!(s, Mat3::zero());
        let d = Vec3::new(0.01, 0.0, -1.0);
        let s = impulse_sensitivity(ContactCase::Stick, Vec3::new(-0.01, 0.0, 1.0), d, 0.3, 2.0).unwrap();
        assert!(s.add(&Mat3::identity()).max_abs() < 1e-14);
    }

    #[test]
    fn node_on_plane_gives_transposed_frame_row_block() {
        let mesh = crate::mesh::make_grid::<f64>(2, 2, 1.0).unwrap();
        let mass = crate::mesh::lumped_mass(&mesh, 1.0);
        let plane = Obstacle::half_space(Vec3::zero(), Vec3::new(0.0, 0.0, 1.0), 0.3).unwrap();
        let det = Detector::new(&mesh, vec![plane], SelfCollision { enabled: false, radius: 0.1, friction: 0.0 }, 1e-3).unwrap();
        let mut x = mesh.positions();
        for i in 0..4 {
            x[3 * i + 2] = 1.0;
        }
        assert!(det.detect(&x, &mass).is_empty());
        x[2] = 0.0;
        let set = det.detect(&x, &mass);
        assert_eq!(set.len(), 1);
        let c = &set.contacts[0];
        assert_eq!(c.normal(), Vec3::new(0.0, 0.0, 1.0));
        let rt = c.frame.transpose();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(set.jacobian.get(a, b), rt.0[a][b]);
            }
        }
    }
}
