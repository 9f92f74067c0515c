//! Linearization of one implicit step around a recorded solution: the
//! projection correction `ΔP` and the contact gain `Z = Jₙᵀ Ŝ Jₙ M⁻¹`,
//! where `Ŝ` collects `m_eff · ∂r̂/∂d` per contact.

use crate::contact::{impulse_sensitivity, ContactError, ContactSet};
use crate::energy::{Constraint, Projection};
use crate::forward::ContactSolution;
use crate::geom::Mat3;
use crate::linalg::{SparseBuilder, SparseMatrix};
use crate::mesh::MassMatrix;
use crate::real::Real;

/// `ΔP = h² Σᵢ wᵢ Aᵢᵀ (∂pᵢ*/∂x)`.
pub fn assemble_delta_p<T: Real>(
    n_nodes: usize,
    constraints: &[Constraint<T>],
    projections: &[Projection<T>],
    h: T,
) -> SparseMatrix<T> {
    let h2 = h * h;
    let mut b = SparseBuilder::new(3 * n_nodes, 3 * n_nodes);
    for (c, p) in constraints.iter().zip(projections) {
        if p.dp_dax == Mat3::zero() {
            continue;
        }
        let base = p.dp_dax.scale(h2 * c.weight);
        for (va, ca) in c.stencil.iter().zip(&c.coeffs) {
            for (vb, cb) in c.stencil.iter().zip(&c.coeffs) {
                b.push_block3(*va, *vb, &base.scale(*ca * *cb));
            }
        }
    }
    b.build()
}

/// Per-contact `Ŝⱼ = m_eff · ∂r̂ⱼ/∂dⱼ` in local coordinates.
pub fn contact_sensitivities<T: Real>(
    contacts: &ContactSet<T>,
    solution: &[ContactSolution<T>],
) -> Result<Vec<Mat3<T>>, ContactError> {
    contacts
        .contacts
        .iter()
        .zip(solution)
        .map(|(c, s)| {
            impulse_sensitivity(s.case, s.r_hat, s.d, c.friction, c.effective_mass).map(|m| m.scale(c.effective_mass))
        })
        .collect()
}

/// `Z = Jₙᵀ Ŝ Jₙ M⁻¹`; its transpose is the contact response operator `B`.
pub fn contact_gain<T: Real>(contacts: &ContactSet<T>, s_hat: &[Mat3<T>], mass: &MassMatrix<T>) -> SparseMatrix<T> {
    let n = 3 * mass.num_nodes();
    let mut b = SparseBuilder::with_capacity(n, n, 36 * contacts.len());
    for (c, s) in contacts.contacts.iter().zip(s_hat) {
        let g = c.frame.mul_mat(s).mul_mat(&c.frame.transpose());
        let a = c.node;
        b.push_block3(a, a, &g.scale(T::one() / mass.node(a)));
        if let Some(p) = c.partner() {
            b.push_block3(a, p, &g.scale(-T::one() / mass.node(p)));
            b.push_block3(p, a, &g.scale(-T::one() / mass.node(a)));
            b.push_block3(p, p, &g.scale(T::one() / mass.node(p)));
        }
    }
    b.build()
}

/// Applies `B = Zᵀ = M⁻¹ Jₙᵀ Ŝᵀ Jₙ` to `z` without assembling it.
pub fn apply_contact_response<T: Real>(
    contacts: &ContactSet<T>,
    s_hat: &[Mat3<T>],
    mass: &MassMatrix<T>,
    z: &[T],
    out: &mut [T],
) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for (c, s) in contacts.contacts.iter().zip(s_hat) {
        let local = s.tr_mul_vec(c.local(z));
        let w = c.frame.mul_vec(local);
        (w * (T::one() / mass.node(c.node))).add_to(out, c.node);
        if let Some(p) = c.partner() {
            (w * (-T::one() / mass.node(p))).add_to(out, p);
        }
    }
}

/// Jacobian of the step residual `P v − b̃ − Jₙᵀ r̂` with respect to `v`:
/// `P − ΔP − Z (ΔP − C)`.
pub fn step_jacobian<T: Real>(
    system: &SparseMatrix<T>,
    coupling: &SparseMatrix<T>,
    delta_p: &SparseMatrix<T>,
    gain: Option<&SparseMatrix<T>>,
) -> SparseMatrix<T> {
    let mut a = system.linear_combination(T::one(), delta_p, -T::one());
    if let Some(z) = gain {
        let dpc = delta_p.linear_combination(T::one(), coupling, -T::one());
        a = a.linear_combination(T::one(), &z.matmul(&dpc), -T::one());
    }
    a
}
