//! Reverse-mode differentiation of the implicit step. Each step solves the
//! adjoint system `(P − ΔP − ΔR) z = ∂L/∂v + h ∂L/∂x` by a Jacobi iteration
//! on the prefactorized `P`, with a sparse LU fallback, and maps `z` to
//! gradients with respect to the previous state and the physical parameters.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::contact::{frame_derivatives, ContactCase, ContactError, ContactSet};
use crate::energy::ConstraintKind;
use crate::forward::{Rollout, Scene, StepTape};
use crate::geom::{Mat3, Vec3};
use crate::linalg::{LinalgError, LuFactorization, SparseMatrix, SymmetricFactorization};
use crate::linearize::{apply_contact_response, assemble_delta_p, contact_gain, contact_sensitivities};
use crate::mesh::MassMatrix;
use crate::real::{diff_norm_inf, dot, norm_inf, Real};

#[derive(Debug, Error)]
pub enum BackwardError {
    #[error("degenerate contact Jacobian: {0}")]
    DegenerateContactJacobian(#[from] ContactError),
    #[error("singular adjoint system: {0}")]
    SingularAdjointSystem(LinalgError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("gradient inputs have {found} entries, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointMethod {
    /// Jacobi iteration on the prefactorized `P`, falling back to LU on divergence.
    Jacobi,
    /// Sparse LU of the assembled adjoint matrix.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdjointOptions<T> {
    pub method: AdjointMethod,
    pub epsilon: T,
    pub max_iterations: usize,
    /// Consecutive increment growths that count as divergence.
    pub divergence_window: usize,
    /// Differentiate the contact frames through their dependence on `xₙ`.
    pub frame_gradients: bool,
}

impl<T: Real> Default for AdjointOptions<T> {
    fn default() -> Self {
        Self {
            method: AdjointMethod::Jacobi,
            epsilon: T::lit(1e-6),
            max_iterations: 400,
            divergence_window: 5,
            frame_gradients: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdjointSolveReport<T> {
    pub iterations: usize,
    pub converged: bool,
    pub used_fallback: bool,
    /// `‖(P − ΔP − ΔR) z − rhs‖∞`
    pub residual: T,
}

/// Wall-clock split of one backward step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BackwardTimings {
    pub delta_p: Duration,
    pub contact: Duration,
    pub jacobi: Duration,
    pub direct: Duration,
    pub other: Duration,
}

impl BackwardTimings {
    pub fn total(&self) -> Duration {
        self.delta_p + self.contact + self.jacobi + self.direct + self.other
    }

    pub fn accumulate(&mut self, o: &Self) {
        self.delta_p += o.delta_p;
        self.contact += o.contact;
        self.jacobi += o.jacobi;
        self.direct += o.direct;
        self.other += o.other;
    }
}

/// Gradient of a scalar loss with respect to the physical parameters of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient<T> {
    pub stretch: T,
    pub bend: T,
    pub attach: T,
    pub density: T,
    /// One entry per obstacle.
    pub friction: Vec<T>,
    pub self_friction: T,
    pub wind_amplitude: Vec3<T>,
    pub wind_frequency: T,
    pub wind_phase: T,
}

impl<T: Real> ParamGradient<T> {
    pub fn zeros(n_obstacles: usize) -> Self {
        Self {
            stretch: T::zero(),
            bend: T::zero(),
            attach: T::zero(),
            density: T::zero(),
            friction: vec![T::zero(); n_obstacles],
            self_friction: T::zero(),
            wind_amplitude: Vec3::zero(),
            wind_frequency: T::zero(),
            wind_phase: T::zero(),
        }
    }

    pub fn accumulate(&mut self, o: &Self) {
        self.stretch += o.stretch;
        self.bend += o.bend;
        self.attach += o.attach;
        self.density += o.density;
        for (a, b) in self.friction.iter_mut().zip(&o.friction) {
            *a += *b;
        }
        self.self_friction += o.self_friction;
        self.wind_amplitude += o.wind_amplitude;
        self.wind_frequency += o.wind_frequency;
        self.wind_phase += o.wind_phase;
    }
}

/// The adjoint system of one step in operator form.
pub struct AdjointSystem<'a, T> {
    pub system: &'a SparseMatrix<T>,
    pub factor: &'a SymmetricFactorization<T>,
    pub coupling: &'a SparseMatrix<T>,
    pub mass: &'a MassMatrix<T>,
    pub delta_p: SparseMatrix<T>,
    pub contacts: &'a ContactSet<T>,
    /// `m_eff · ∂r̂/∂d` per contact.
    pub s_hat: Vec<Mat3<T>>,
}

impl<'a, T: Real> AdjointSystem<'a, T> {
    /// Linearizes the step recorded in `tape`.
    pub fn from_tape(scene: &'a Scene<T>, tape: &'a StepTape<T>) -> Result<Self, BackwardError> {
        Ok(Self {
            system: scene.system_matrix(),
            factor: scene.factorization(),
            coupling: scene.coupling(),
            mass: &scene.mass,
            delta_p: assemble_delta_p(scene.mass.num_nodes(), &scene.constraints, &tape.projections, tape.h),
            contacts: &tape.contact_set,
            s_hat: contact_sensitivities(&tape.contact_set, &tape.contact_solution)?,
        })
    }

    pub fn n(&self) -> usize {
        self.system.nrows()
    }

    /// `B z = M⁻¹ Jₙᵀ Ŝᵀ Jₙ z`
    pub fn contact_response(&self, z: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); z.len()];
        if !self.contacts.is_empty() {
            apply_contact_response(self.contacts, &self.s_hat, self.mass, z, &mut out);
        }
        out
    }

    /// `(ΔP + ΔR) z = ΔP (z + Bz) − C Bz`
    pub fn apply_correction(&self, z: &[T]) -> Vec<T> {
        if self.contacts.is_empty() {
            return self.delta_p.mul_vec(z);
        }
        let bz = self.contact_response(z);
        let w: Vec<T> = z.iter().zip(&bz).map(|(a, b)| *a + *b).collect();
        let mut out = self.delta_p.mul_vec(&w);
        self.coupling.mul_vec_add(-T::one(), &bz, &mut out);
        out
    }

    /// `ΔR = (ΔP − C) B`, assembled.
    pub fn assemble_delta_r(&self) -> SparseMatrix<T> {
        let n = self.n();
        if self.contacts.is_empty() {
            return SparseMatrix::zeros(n, n);
        }
        let b = contact_gain(self.contacts, &self.s_hat, self.mass).transpose();
        self.delta_p.linear_combination(T::one(), self.coupling, -T::one()).matmul(&b)
    }

    /// `P − ΔP − ΔR`, assembled.
    pub fn assemble_matrix(&self) -> SparseMatrix<T> {
        self.system
            .linear_combination(T::one(), &self.delta_p, -T::one())
            .linear_combination(T::one(), &self.assemble_delta_r(), -T::one())
    }

    pub fn residual(&self, z: &[T], rhs: &[T]) -> T {
        let mut r = self.system.mul_vec(z);
        for ((ri, ci), bi) in r.iter_mut().zip(self.apply_correction(z)).zip(rhs) {
            *ri -= ci + *bi;
        }
        norm_inf(&r)
    }

    pub fn solve_direct(&self, rhs: &[T]) -> Result<Vec<T>, BackwardError> {
        LuFactorization::factorize(&self.assemble_matrix())
            .and_then(|lu| lu.solve(rhs))
            .map_err(BackwardError::SingularAdjointSystem)
    }
}

/// Factor applied to the rate-corrected error estimate; the estimate uses the
/// recent contraction ratios and can undershoot the true error slightly.
pub const RATE_SAFETY: f64 = 0.25;

/// Jacobi iteration `P z^{k+1} = (ΔP + ΔR) z^k + rhs`. Stops when the
/// increment, corrected by the observed contraction rate `q` as
/// `‖Δz‖ q/(1−q)`, is below `ε max(1, ‖z‖∞)` with a safety factor of
/// [`RATE_SAFETY`], or when the increment reaches rounding level. Falls back
/// to the direct solver after `divergence_window` consecutive increment growths or at the iteration cap.
pub fn solve_adjoint<T: Real>(
    sys: &AdjointSystem<'_, T>,
    rhs: &[T],
    options: &AdjointOptions<T>,
    timings: &mut BackwardTimings,
) -> Result<(Vec<T>, AdjointSolveReport<T>), BackwardError> {
    let n = sys.n();
    if rhs.len() != n {
        return Err(BackwardError::DimensionMismatch { expected: n, found: rhs.len() });
    }
    let direct = |timings: &mut BackwardTimings, iterations: usize, used_fallback: bool| {
        let t0 = Instant::now();
        let z = sys.solve_direct(rhs);
        timings.direct += t0.elapsed();
        z.map(|z| {
            let residual = sys.residual(&z, rhs);
            let report = AdjointSolveReport { iterations, converged: !used_fallback, used_fallback, residual };
            (z, report)
        })
    };
    if options.method == AdjointMethod::Direct {
        return direct(timings, 0, false);
    }

    let t0 = Instant::now();
    let mut z = sys.factor.solve(rhs)?;
    if sys.delta_p.nnz() == 0 && sys.contacts.is_empty() {
        timings.jacobi += t0.elapsed();
        return Ok((z, AdjointSolveReport { iterations: 1, converged: true, used_fallback: false, residual: T::zero() }));
    }
    let mut next = vec![T::zero(); n];
    let mut work = vec![T::zero(); n];
    let mut prev_inc: Option<T> = None;
    let mut ratios: Vec<T> = Vec::new();
    let mut growths = 0;
    let mut iterations = 1;
    let mut converged = false;
    while iterations < options.max_iterations {
        iterations += 1;
        let mut y = sys.apply_correction(&z);
        for (yi, bi) in y.iter_mut().zip(rhs) {
            *yi += *bi;
        }
        sys.factor.solve_into(&y, &mut next, &mut work)?;
        let inc = diff_norm_inf(&next, &z);
        std::mem::swap(&mut z, &mut next);
        if !inc.is_finite() {
            break;
        }
        if inc <= T::lit(64.0) * T::epsilon() * norm_inf(&z) {
            converged = true;
            break;
        }
        if let Some(p) = prev_inc {
            if inc > p {
                growths += 1;
                if growths >= options.divergence_window {
                    break;
                }
            } else {
                growths = 0;
            }
            ratios.push(inc / p);
            if ratios.len() > 3 {
                ratios.remove(0);
            }
            let q = ratios.iter().copied().fold(T::zero(), T::max);
            if q < T::one() && inc * q / (T::one() - q) <= T::lit(RATE_SAFETY) * options.epsilon * norm_inf(&z).max(T::one()) {
                converged = true;
                break;
            }
        }
        prev_inc = Some(inc);
    }
    timings.jacobi += t0.elapsed();
    if converged {
        let residual = sys.residual(&z, rhs);
        return Ok((z, AdjointSolveReport { iterations, converged, used_fallback: false, residual }));
    }
    direct(timings, iterations, true)
}

/// Result of one backward step.
#[derive(Clone, Debug)]
pub struct StepAdjoint<T> {
    pub dl_dx_prev: Vec<T>,
    pub dl_dv_prev: Vec<T>,
    pub z: Vec<T>,
    pub params: ParamGradient<T>,
    pub report: AdjointSolveReport<T>,
    pub timings: BackwardTimings,
}

/// Propagates `∂L/∂x_{n+1}`, `∂L/∂v_{n+1}` through the step recorded in `tape`.
pub fn backward_step<T: Real>(
    scene: &Scene<T>,
    tape: &StepTape<T>,
    dl_dx: &[T],
    dl_dv: &[T],
    options: &AdjointOptions<T>,
) -> Result<StepAdjoint<T>, BackwardError> {
    let n = scene.n_dofs();
    for len in [dl_dx.len(), dl_dv.len()] {
        if len != n {
            return Err(BackwardError::DimensionMismatch { expected: n, found: len });
        }
    }
    let h = tape.h;
    let mut timings = BackwardTimings::default();
    let t0 = Instant::now();
    let delta_p = assemble_delta_p(scene.mass.num_nodes(), &scene.constraints, &tape.projections, h);
    timings.delta_p += t0.elapsed();
    let t0 = Instant::now();
    let s_hat = contact_sensitivities(&tape.contact_set, &tape.contact_solution)?;
    timings.contact += t0.elapsed();
    let sys = AdjointSystem {
        system: scene.system_matrix(),
        factor: scene.factorization(),
        coupling: scene.coupling(),
        mass: &scene.mass,
        delta_p,
        contacts: &tape.contact_set,
        s_hat,
    };

    let rhs: Vec<T> = dl_dv.iter().zip(dl_dx).map(|(gv, gx)| *gv + h * *gx).collect();
    let (z, report) = solve_adjoint(&sys, &rhs, options, &mut timings)?;

    let t0 = Instant::now();
    let bz = sys.contact_response(&z);
    timings.contact += t0.elapsed();
    let t_other = Instant::now();
    let w: Vec<T> = z.iter().zip(&bz).map(|(a, b)| *a + *b).collect();

    let dl_dv_prev = scene.mass.apply(&w);
    let mut dl_dx_prev = dl_dx.to_vec();
    let inv_h = T::one() / h;
    sys.delta_p.mul_vec_add(inv_h, &w, &mut dl_dx_prev);
    sys.coupling.mul_vec_add(-inv_h, &w, &mut dl_dx_prev);

    timings.other += t_other.elapsed();
    let t0 = Instant::now();
    if options.frame_gradients {
        add_frame_gradients(scene, tape, &sys.s_hat, &z, &mut dl_dx_prev);
    }
    let params = parameter_gradients(scene, tape, &z, &w);
    timings.contact += t0.elapsed();

    Ok(StepAdjoint { dl_dx_prev, dl_dv_prev, z, params, report, timings })
}

/// Contribution of `Jₙ(xₙ)` through the contact normals.
fn add_frame_gradients<T: Real>(scene: &Scene<T>, tape: &StepTape<T>, s_hat: &[Mat3<T>], z: &[T], out: &mut [T]) {
    for ((c, sol), s) in tape.contact_set.contacts.iter().zip(&tape.contact_solution).zip(s_hat) {
        if c.normal_jacobian == Mat3::zero() {
            continue;
        }
        let dz = c.relative(z);
        let a = scene.relative_free_velocity(c, &tape.free_momentum);
        let sj = s.tr_mul_vec(c.local(z));
        let q = dz.outer(sol.r_hat).add(&a.outer(sj));
        let d_frame = frame_derivatives(c.normal());
        let gn = Vec3::new(d_frame[0].frobenius_dot(&q), d_frame[1].frobenius_dot(&q), d_frame[2].frobenius_dot(&q));
        let gx = c.normal_jacobian.tr_mul_vec(gn);
        gx.add_to(out, c.node);
        if let Some(b) = c.partner() {
            (-gx).add_to(out, b);
        }
    }
}

/// Parameter gradients of one step given the adjoint `z` and `w = z + Bz`.
pub fn parameter_gradients<T: Real>(scene: &Scene<T>, tape: &StepTape<T>, z: &[T], w: &[T]) -> ParamGradient<T> {
    let h = tape.h;
    let spec = &scene.spec;
    let mut g = ParamGradient::zeros(spec.obstacles.len());
    let weight_grad = |kind| {
        let gk = crate::energy::unit_weight_gradient(&scene.constraints, &tape.projections, &tape.x_next, kind);
        -h * dot(w, &gk)
    };
    g.stretch = weight_grad(ConstraintKind::Stretch);
    g.bend = weight_grad(ConstraintKind::Bend);
    if !spec.attachments.is_empty() {
        g.attach = weight_grad(ConstraintKind::Attach);
    }

    let rho = spec.density;
    let mz = scene.mass.apply(z);
    let mut free: Vec<T> = tape.v_prev.clone();
    for i in 0..scene.mass.num_nodes() {
        for d in 0..3 {
            free[3 * i + d] += h * spec.force.gravity[d];
        }
    }
    let mw = scene.mass.apply(w);
    g.density = (dot(&mw, &free) - dot(&mz, &tape.v_next)) / rho;

    for ((c, sol), jz) in tape
        .contact_set
        .contacts
        .iter()
        .zip(&tape.contact_solution)
        .zip(tape.contact_set.contacts.iter().map(|c| c.local(z)))
    {
        if sol.case != ContactCase::Slip {
            continue;
        }
        let dt = (sol.d[0] * sol.d[0] + sol.d[1] * sol.d[1]).sqrt();
        let dn = sol.d[2].abs();
        let contrib = -(jz[0] * sol.d[0] + jz[1] * sol.d[1]) * dn / dt;
        match c.kind {
            crate::contact::ContactKind::Obstacle { obstacle } => g.friction[obstacle] += contrib,
            crate::contact::ContactKind::Node { .. } => g.self_friction += contrib,
        }
    }

    let mut wsum = Vec3::zero();
    for i in 0..scene.mass.num_nodes() {
        wsum += Vec3::read(w, i);
    }
    let (s, df, dphi) = spec.force.wind.force_derivatives(tape.t_next);
    g.wind_amplitude = wsum * (h * s);
    g.wind_frequency = h * df.dot(wsum);
    g.wind_phase = h * dphi.dot(wsum);
    g
}

/// Gradient of a trajectory loss.
#[derive(Clone, Debug)]
pub struct TrajectoryGradient<T> {
    pub dl_dx0: Vec<T>,
    pub dl_dv0: Vec<T>,
    pub params: ParamGradient<T>,
    /// In reverse step order.
    pub reports: Vec<AdjointSolveReport<T>>,
    pub timings: BackwardTimings,
}

/// Backpropagates per-state loss gradients (`dl_dx[n]`, `dl_dv[n]` for states
/// `0..=N`) through a rollout.
pub fn backpropagate<T: Real>(
    scene: &Scene<T>,
    rollout: &Rollout<T>,
    dl_dx: &[Vec<T>],
    dl_dv: &[Vec<T>],
    options: &AdjointOptions<T>,
) -> Result<TrajectoryGradient<T>, BackwardError> {
    let steps = rollout.tapes.len();
    for len in [dl_dx.len(), dl_dv.len()] {
        if len != steps + 1 {
            return Err(BackwardError::DimensionMismatch { expected: steps + 1, found: len });
        }
    }
    let mut gx = dl_dx[steps].clone();
    let mut gv = dl_dv[steps].clone();
    let mut params = ParamGradient::zeros(scene.spec.obstacles.len());
    let mut reports = Vec::with_capacity(steps);
    let mut timings = BackwardTimings::default();
    for n in (0..steps).rev() {
        let adj = backward_step(scene, &rollout.tapes[n], &gx, &gv, options)?;
        params.accumulate(&adj.params);
        reports.push(adj.report);
        timings.accumulate(&adj.timings);
        gx = adj.dl_dx_prev;
        gv = adj.dl_dv_prev;
        for (a, b) in gx.iter_mut().zip(&dl_dx[n]) {
            *a += *b;
        }
        for (a, b) in gv.iter_mut().zip(&dl_dv[n]) {
            *a += *b;
        }
    }
    Ok(TrajectoryGradient { dl_dx0: gx, dl_dv0: gv, params, reports, timings })
}
