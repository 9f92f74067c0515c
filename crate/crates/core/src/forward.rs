//! Implicit time stepping: projective-dynamics local/global iteration in
//! velocity form, coupled with frictional contact through a splitting
//! iteration that reuses the prefactorized system matrix.

use thiserror::Error;

use crate::anderson::Anderson;
use crate::contact::{
    branch_impulse, branch_sensitivity, enforce_signorini_coulomb, ContactCase, ContactError, ContactKind, ContactSet, Detector, Obstacle,
    SelfCollision,
};
use crate::energy::{
    assemble_stiffness, build_constraints, project_all, surrogate_energy, weighted_projection_sum, Attachment,
    Constraint, EnergyError, MaterialWeights, Projection,
};
use crate::geom::Vec3;
use crate::linalg::{factorize_spd, LinalgError, LuFactorization, SparseMatrix, SymmetricFactorization};
use crate::linearize::{assemble_delta_p, contact_gain, step_jacobian};
use crate::mesh::{lumped_mass, MassMatrix, TriMesh};
use crate::real::{diff_norm_inf, Real};

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("non-finite state at time {t}")]
    NonFinite { t: f64 },
}

/// Sinusoidal wind force `a·sin(2πf·t + φ)` applied to every node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wind<T> {
    pub amplitude: Vec3<T>,
    pub frequency: T,
    pub phase: T,
}

impl<T: Real> Wind<T> {
    pub fn calm() -> Self {
        Self { amplitude: Vec3::zero(), frequency: T::zero(), phase: T::zero() }
    }

    fn angle(&self, t: T) -> T {
        T::TAU() * self.frequency * t + self.phase
    }

    /// Per-node wind force at time `t`.
    pub fn force(&self, t: T) -> Vec3<T> {
        self.amplitude * self.angle(t).sin()
    }

    /// Derivatives of the per-node force with respect to `(a, f, φ)`:
    /// `∂F/∂a = sin(·)·I`, and the `f`, `φ` columns.
    pub fn force_derivatives(&self, t: T) -> (T, Vec3<T>, Vec3<T>) {
        let (s, c) = self.angle(t).sin_cos();
        (s, self.amplitude * (c * T::TAU() * t), self.amplitude * c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceModel<T> {
    /// Gravitational acceleration (m/s²).
    pub gravity: Vec3<T>,
    pub wind: Wind<T>,
}

impl<T: Real> ForceModel<T> {
    pub fn gravity_only(g: T) -> Self {
        Self { gravity: Vec3::new(T::zero(), T::zero(), -g), wind: Wind::calm() }
    }
}

/// Gravity `M·g` plus the wind force at every node.
pub fn external_force<T: Real>(model: &ForceModel<T>, t: T, mass: &MassMatrix<T>) -> Vec<T> {
    let wind = model.wind.force(t);
    let mut f = vec![T::zero(); 3 * mass.num_nodes()];
    for (i, m) in mass.node_masses().iter().enumerate() {
        (model.gravity * *m + wind).write(&mut f, i);
    }
    f
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings<T> {
    /// Outer local/global convergence threshold on `‖Δx‖∞` (m).
    pub forward_tolerance: T,
    pub forward_max_iterations: usize,
    /// Contact iteration threshold on `‖Δv‖∞` (m/s).
    pub contact_tolerance: T,
    pub contact_max_iterations: usize,
    pub adjoint_tolerance: T,
    pub adjoint_max_iterations: usize,
    /// Anderson acceleration depth for the fixed-point iterations; 0 runs
    /// plain alternation.
    pub anderson_depth: usize,
    /// Fixed-point iterations before switching to semi-smooth Newton steps
    /// with a direct solve of the step Jacobian.
    pub newton_after: usize,
    /// Newton corrections applied after the fixed-point iteration has met
    /// its tolerance. Each removes the error left by slow contraction; a
    /// correction is kept only if it leaves the contact cases unchanged.
    pub newton_refinements: usize,
    /// Record the surrogate energy after every local and global step.
    pub record_surrogate: bool,
}

impl<T: Real> Default for SolverSettings<T> {
    fn default() -> Self {
        Self {
            forward_tolerance: T::lit(1e-6),
            forward_max_iterations: 200,
            contact_tolerance: T::lit(1e-9),
            contact_max_iterations: 400,
            adjoint_tolerance: T::lit(1e-6),
            adjoint_max_iterations: 400,
            anderson_depth: 5,
            newton_after: 40,
            newton_refinements: 0,
            record_surrogate: false,
        }
    }
}

/// Everything needed to build a [`Scene`]; the tunable physical parameters
/// live here so a scene can be rebuilt after changing them.
#[derive(Clone, Debug)]
pub struct SceneSpec<T> {
    pub mesh: TriMesh<T>,
    pub attachments: Vec<Attachment<T>>,
    pub obstacles: Vec<Obstacle<T>>,
    pub self_collision: SelfCollision<T>,
    /// Detection margin (m).
    pub margin: T,
    /// Areal density (kg/m²).
    pub density: T,
    pub weights: MaterialWeights<T>,
    pub force: ForceModel<T>,
    /// Time step (s).
    pub h: T,
    pub steps: usize,
    pub solver: SolverSettings<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState<T> {
    pub x: Vec<T>,
    pub v: Vec<T>,
    pub t: T,
}

impl<T: Real> SimState<T> {
    pub fn at_rest(x: Vec<T>) -> Self {
        let n = x.len();
        Self { x, v: vec![T::zero(); n], t: T::zero() }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.v).all(|a| a.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactSolution<T> {
    /// Local impulse `h·r`.
    pub r_hat: Vec3<T>,
    pub case: ContactCase,
    /// Local relative velocity after the step.
    pub u: Vec3<T>,
    /// Local free momentum the projection was applied to.
    pub d: Vec3<T>,
}

#[derive(Clone, Debug)]
pub struct StepTape<T> {
    pub x_prev: Vec<T>,
    pub v_prev: Vec<T>,
    /// Time at the end of the step.
    pub t_next: T,
    pub h: T,
    pub x_next: Vec<T>,
    pub v_next: Vec<T>,
    pub projections: Vec<Projection<T>>,
    pub contact_set: ContactSet<T>,
    pub contact_solution: Vec<ContactSolution<T>>,
    /// `b̃ − C·v_next`, the momentum each node would have without contact impulses.
    pub free_momentum: Vec<T>,
    /// Inertial target `xₙ + h·vₙ + h²M⁻¹f_ext`.
    pub y: Vec<T>,
    pub outer_iterations: usize,
    pub contact_iterations: usize,
    pub converged: bool,
    pub contact_converged: bool,
    pub surrogate_trace: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ContactIterationReport<T> {
    pub solution: Vec<ContactSolution<T>>,
    pub free_momentum: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// A simulation-ready scene: constraints, contact detector and the
/// prefactorized system matrix `P = M + C`.
#[derive(Clone, Debug)]
pub struct Scene<T> {
    pub spec: SceneSpec<T>,
    pub mass: MassMatrix<T>,
    pub constraints: Vec<Constraint<T>>,
    pub detector: Detector<T>,
    stiffness: SparseMatrix<T>,
    coupling: SparseMatrix<T>,
    system: SparseMatrix<T>,
    factor: SymmetricFactorization<T>,
    /// Diagonal of `P` per node; `C` has isotropic 3×3 diagonal blocks.
    local_mass: MassMatrix<T>,
    /// `C` without its diagonal.
    offdiag_coupling: SparseMatrix<T>,
}

impl<T: Real> Scene<T> {
    pub fn new(spec: SceneSpec<T>) -> Result<Self, ForwardError> {
        if !(spec.h > T::zero()) {
            return Err(ForwardError::InvalidScene("time step must be positive".into()));
        }
        if !(spec.density > T::zero()) {
            return Err(ForwardError::InvalidScene("density must be positive".into()));
        }
        let mass = lumped_mass(&spec.mesh, spec.density);
        let constraints = build_constraints(&spec.mesh, spec.weights, &spec.attachments)?;
        let detector = Detector::new(&spec.mesh, spec.obstacles.clone(), spec.self_collision, spec.margin)?;
        let stiffness = assemble_stiffness(mass.num_nodes(), &constraints);
        let coupling = stiffness.scale(spec.h * spec.h);
        let system = SparseMatrix::from_diagonal(&mass.diagonal()).linear_combination(T::one(), &coupling, T::one());
        let factor = factorize_spd(&system)?;
        let diag = coupling.diagonal();
        let local_mass =
            MassMatrix::from_node_masses((0..mass.num_nodes()).map(|i| mass.node(i) + diag[3 * i]).collect());
        let offdiag_coupling = coupling.linear_combination(T::one(), &SparseMatrix::from_diagonal(&diag), -T::one());
        Ok(Self { spec, mass, constraints, detector, stiffness, coupling, system, factor, local_mass, offdiag_coupling })
    }

    pub fn h(&self) -> T {
        self.spec.h
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.mass.num_nodes()
    }

    pub fn initial_state(&self) -> SimState<T> {
        SimState::at_rest(self.spec.mesh.positions())
    }

    /// `K = Σ wᵢAᵢᵀAᵢ`
    pub fn stiffness(&self) -> &SparseMatrix<T> {
        &self.stiffness
    }

    /// `C = h²K = P − M`
    pub fn coupling(&self) -> &SparseMatrix<T> {
        &self.coupling
    }

    pub fn system_matrix(&self) -> &SparseMatrix<T> {
        &self.system
    }

    pub fn factorization(&self) -> &SymmetricFactorization<T> {
        &self.factor
    }

    pub fn external_force(&self, t: T) -> Vec<T> {
        external_force(&self.spec.force, t, &self.mass)
    }

    /// Part of `b̃` independent of the projections: `M vₙ + h f_ext − h K xₙ`.
    fn momentum_base(&self, state: &SimState<T>, f_ext: &[T]) -> Vec<T> {
        let h = self.h();
        let mut base = self.mass.apply(&state.v);
        for (b, f) in base.iter_mut().zip(f_ext) {
            *b += h * *f;
        }
        self.stiffness.mul_vec_add(-h, &state.x, &mut base);
        base
    }

    fn rhs_with_projections(&self, base: &[T], proj: &[Projection<T>]) -> Vec<T> {
        let h = self.h();
        let mut b = weighted_projection_sum(&self.constraints, proj, base.len());
        for (bi, ai) in b.iter_mut().zip(base) {
            *bi = *ai + h * *bi;
        }
        b
    }

    /// `b̃ = (b(p) − P xₙ)/h` for the given state and projections.
    pub fn velocity_rhs(&self, state: &SimState<T>, proj: &[Projection<T>]) -> Vec<T> {
        let f_ext = self.external_force(state.t + self.h());
        self.rhs_with_projections(&self.momentum_base(state, &f_ext), proj)
    }

    /// Local projections for every contact given the free momentum `f`.
    pub fn enforce_contacts(&self, contacts: &ContactSet<T>, f: &[T]) -> Vec<ContactSolution<T>> {
        contacts
            .contacts
            .iter()
            .map(|c| {
                let a = self.relative_free_velocity(c, f);
                let d = c.frame.tr_mul_vec(a) * c.effective_mass;
                let (r_hat, case) = enforce_signorini_coulomb(d, c.friction);
                ContactSolution { r_hat, case, u: (d + r_hat) * (T::one() / c.effective_mass), d }
            })
            .collect()
    }

    /// `(M⁻¹f)_node − (M⁻¹f)_partner` in world coordinates.
    pub fn relative_free_velocity(&self, c: &crate::contact::Contact<T>, f: &[T]) -> Vec3<T> {
        let a = Vec3::read(f, c.node) * (T::one() / self.mass.node(c.node));
        match c.partner() {
            Some(b) => a - Vec3::read(f, b) * (T::one() / self.mass.node(b)),
            None => a,
        }
    }

    /// Effective mass of a contact under the local splitting.
    fn local_effective_mass(&self, c: &crate::contact::Contact<T>) -> T {
        let inv = T::one() / self.local_mass.node(c.node)
            + c.partner().map_or(T::zero(), |b| T::one() / self.local_mass.node(b));
        T::one() / inv
    }

    /// Contact projections under the local splitting: each contact node sees
    /// the momentum `f + diag(C) v` against its diagonal block of `P`, which
    /// has the same fixed points as the mass splitting of
    /// [`Scene::enforce_contacts`] but converges at the rate of the
    /// off-diagonal coupling.
    fn enforce_local(&self, contacts: &ContactSet<T>, f: &[T], v: &[T]) -> Vec<ContactSolution<T>> {
        let diag = |i: usize| self.local_mass.node(i) - self.mass.node(i);
        let local_velocity = |i: usize| (Vec3::read(f, i) + Vec3::read(v, i) * diag(i)) * (T::one() / self.local_mass.node(i));
        contacts
            .contacts
            .iter()
            .map(|c| {
                let mut a = local_velocity(c.node);
                if let Some(b) = c.partner() {
                    a -= local_velocity(b);
                }
                let m = self.local_effective_mass(c);
                let d = c.frame.tr_mul_vec(a) * m;
                let (r_hat, case) = enforce_signorini_coulomb(d, c.friction);
                ContactSolution { r_hat, case, u: (d + r_hat) * (T::one() / m), d }
            })
            .collect()
    }

    /// Sets the velocity of every contact node to `M⁻¹(f + Jᵀr̂)` so that the
    /// recorded contact solution holds exactly at those nodes.
    fn polish(&self, contacts: &ContactSet<T>, sol: &[ContactSolution<T>], f: &[T], v: &mut [T]) {
        let mut impulse = vec![T::zero(); v.len()];
        for (c, s) in contacts.contacts.iter().zip(sol) {
            c.scatter(s.r_hat, T::one(), &mut impulse);
        }
        for node in contacts.nodes() {
            let inv_m = T::one() / self.mass.node(node);
            for k in 3 * node..3 * node + 3 {
                v[k] = (f[k] + impulse[k]) * inv_m;
            }
        }
    }

    /// `b̃ + Jₙᵀ r̂(v)`, leaving the free momentum `b̃ − C v` in `f`.
    fn contact_rhs(&self, b_tilde: &[T], contacts: &ContactSet<T>, v: &[T], f: &mut [T]) -> Vec<T> {
        let mut rhs = b_tilde.to_vec();
        if contacts.is_empty() {
            return rhs;
        }
        f.copy_from_slice(b_tilde);
        self.coupling.mul_vec_add(-T::one(), v, f);
        for (c, s) in contacts.contacts.iter().zip(self.enforce_contacts(contacts, f)) {
            c.scatter(s.r_hat, T::one(), &mut rhs);
        }
        rhs
    }

    /// Solves `P v = b̃ + Jₙᵀ r̂` with `r̂` given by the per-contact projection.
    /// Without contacts this is a single prefactorized solve.
    pub fn global_step_velocity(
        &self,
        b_tilde: &[T],
        contacts: &ContactSet<T>,
        v_guess: &[T],
    ) -> Result<(Vec<T>, ContactIterationReport<T>), ForwardError> {
        let n = b_tilde.len();
        if contacts.is_empty() {
            let v = self.factor.solve(b_tilde)?;
            let report =
                ContactIterationReport { solution: Vec::new(), free_momentum: Vec::new(), iterations: 0, converged: true };
            return Ok((v, report));
        }
        let settings = &self.spec.solver;
        let mut v = v_guess.to_vec();
        let mut g = vec![T::zero(); n];
        let mut work = vec![T::zero(); n];
        let mut f = vec![T::zero(); n];
        let mut accel = Anderson::new(settings.anderson_depth);
        let mut guard = ResidualGuard::new();
        let mut iterations = 0;
        let mut converged = false;
        while iterations < settings.contact_max_iterations {
            iterations += 1;
            let rhs = self.contact_rhs(b_tilde, contacts, &v, &mut f);
            self.factor.solve_into(&rhs, &mut g, &mut work)?;
            let res = diff_norm_inf(&g, &v);
            if !res.is_finite() {
                break;
            }
            if res <= settings.contact_tolerance {
                v.copy_from_slice(&g);
                converged = true;
                break;
            }
            if guard.should_reset(res) {
                accel.reset();
            }
            v = accel.next(&v, &g);
        }
        f.copy_from_slice(b_tilde);
        self.coupling.mul_vec_add(-T::one(), &v, &mut f);
        let mut solution = self.enforce_contacts(contacts, &f);
        self.polish(contacts, &solution, &f, &mut v);
        for (c, s) in contacts.contacts.iter().zip(solution.iter_mut()) {
            s.u = c.local(&v);
        }
        Ok((v, ContactIterationReport { solution, free_momentum: f, iterations, converged }))
    }

    /// One application of the step map at `v`: local projections at
    /// `xₙ + h v`, contact projection on the free momentum, and the global solve.
    fn evaluate(&self, ctx: &StepContext<'_, T>, v: Vec<T>, split: Splitting) -> Result<Evaluation<T>, ForwardError> {
        let x = ctx.advance(&v);
        let proj = project_all(&self.constraints, &x, ctx.t_next)?;
        let b = self.rhs_with_projections(&ctx.base, &proj);
        let mut f = b.clone();
        let mut rhs = b;
        let mut solution = Vec::new();
        if !ctx.contacts.is_empty() {
            self.coupling.mul_vec_add(-T::one(), &v, &mut f);
            solution = match split {
                Splitting::Mass => self.enforce_contacts(ctx.contacts, &f),
                Splitting::Local => self.enforce_local(ctx.contacts, &f, &v),
            };
            for (c, s) in ctx.contacts.contacts.iter().zip(&solution) {
                c.scatter(s.r_hat, T::one(), &mut rhs);
            }
        }
        let g = self.factor.solve(&rhs)?;
        let res = diff_norm_inf(&g, &v);
        if !res.is_finite() {
            return Err(ForwardError::NonFinite { t: ctx.t_next.to_f64_lossy() });
        }
        Ok(Evaluation { v, x, proj, rhs, solution, g, res, split })
    }

    /// Newton direction at `cur` with each contact linearized on the branch
    /// of `cases`; `None` if a branch is undefined or the Jacobian is singular.
    fn newton_direction(
        &self,
        ctx: &StepContext<'_, T>,
        cur: &Evaluation<T>,
        delta_p: &SparseMatrix<T>,
        cases: &[ContactCase],
    ) -> Option<Vec<T>> {
        let mut neg_g = cur.rhs.clone();
        self.system.mul_vec_add(-T::one(), &cur.v, &mut neg_g);
        let mut s_hat = Vec::with_capacity(cases.len());
        for ((c, sol), case) in ctx.contacts.contacts.iter().zip(&cur.solution).zip(cases) {
            let r = branch_impulse(*case, sol.d, c.friction)?;
            c.scatter(r - sol.r_hat, T::one(), &mut neg_g);
            s_hat.push(branch_sensitivity(*case, sol.d, c.friction)?.scale(self.local_effective_mass(c)));
        }
        let gain = (!ctx.contacts.is_empty()).then(|| contact_gain(ctx.contacts, &s_hat, &self.local_mass));
        let a = step_jacobian(&self.system, &self.offdiag_coupling, delta_p, gain.as_ref());
        LuFactorization::factorize(&a).and_then(|lu| lu.solve(&neg_g)).ok()
    }

    /// Newton corrections at a converged point, kept while they preserve the
    /// contact cases and do not raise the residual above `bound`.
    fn refine(&self, ctx: &StepContext<'_, T>, mut cur: Evaluation<T>, bound: T) -> Result<Evaluation<T>, ForwardError> {
        let split = if ctx.contacts.is_empty() { Splitting::Mass } else { Splitting::Local };
        for _ in 0..self.spec.solver.newton_refinements {
            if cur.split != split {
                cur = self.evaluate(ctx, cur.g.clone(), split)?;
            }
            let cases: Vec<ContactCase> = cur.solution.iter().map(|s| s.case).collect();
            let delta_p = assemble_delta_p(self.mass.num_nodes(), &self.constraints, &cur.proj, self.h());
            let Some(delta) = self.newton_direction(ctx, &cur, &delta_p, &cases) else { break };
            let v = cur.v.iter().zip(&delta).map(|(a, d)| *a + *d).collect();
            let next = match self.evaluate(ctx, v, split) {
                Ok(e) => e,
                Err(ForwardError::NonFinite { .. }) => break,
                Err(e) => return Err(e),
            };
            let same = next.solution.iter().map(|s| s.case).eq(cases.iter().copied());
            if !same || next.res > cur.res.max(bound) {
                break;
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Semi-smooth Newton update on `P v − b̃(v) − Jₙᵀ r̂(v) = 0` with an
    /// active-set prediction of the contact cases: each contact is linearized
    /// on the smooth branch of its predicted case, and predictions are replaced
    /// by the cases found at the trial point until they agree. A backtracking
    /// line search on the fixed-point residual follows. Returns `None` when no
    /// step improves the residual.
    fn newton_update(&self, ctx: &StepContext<'_, T>, cur: &Evaluation<T>) -> Result<Option<Evaluation<T>>, ForwardError> {
        let delta_p = assemble_delta_p(self.mass.num_nodes(), &self.constraints, &cur.proj, self.h());
        let solve = |cases: &[ContactCase]| self.newton_direction(ctx, cur, &delta_p, cases);
        let trial = |delta: &[T], alpha: T| -> Result<Option<Evaluation<T>>, ForwardError> {
            let v: Vec<T> = cur.v.iter().zip(delta).map(|(a, d)| *a + alpha * *d).collect();
            match self.evaluate(ctx, v, Splitting::Local) {
                Ok(e) => Ok(Some(e)),
                Err(ForwardError::NonFinite { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };
        let mut cases: Vec<ContactCase> = cur.solution.iter().map(|s| s.case).collect();
        let Some(mut delta) = solve(&cases) else {
            return Ok(None);
        };
        for _ in 0..4 {
            let Some(e) = trial(&delta, T::one())? else { break };
            if e.res < cur.res {
                return Ok(Some(e));
            }
            let predicted: Vec<ContactCase> = e.solution.iter().map(|s| s.case).collect();
            if predicted == cases {
                break;
            }
            cases = predicted;
            match solve(&cases) {
                Some(d) => delta = d,
                None => break,
            }
        }
        let mut alpha = T::lit(0.5);
        for _ in 0..5 {
            if let Some(e) = trial(&delta, alpha)? {
                if e.res < cur.res {
                    return Ok(Some(e));
                }
            }
            alpha *= T::lit(0.5);
        }
        Ok(None)
    }

    /// Advances one implicit step and records the tape for the adjoint pass.
    pub fn step(&self, state: &SimState<T>) -> Result<(SimState<T>, StepTape<T>), ForwardError> {
        let h = self.h();
        let settings = &self.spec.solver;
        let t_next = state.t + h;
        let f_ext = self.external_force(t_next);
        let base = self.momentum_base(state, &f_ext);
        let mut y = self.mass.apply_inverse(&f_ext);
        for ((yi, xi), vi) in y.iter_mut().zip(&state.x).zip(&state.v) {
            *yi = *xi + h * *vi + h * h * *yi;
        }
        let contacts = self.detector.detect(&state.x, &self.mass);
        let ctx = StepContext { x_prev: &state.x, h, t_next, base, contacts: &contacts };

        let mut accel = Anderson::new(settings.anderson_depth);
        let mut guard = ResidualGuard::new();
        let mut trace = Vec::new();
        let mut outer = 0;
        let mut converged = false;
        let mut cur = self.evaluate(&ctx, state.v.clone(), Splitting::Mass)?;
        loop {
            outer += 1;
            if settings.record_surrogate {
                trace.push(surrogate_energy(&self.mass, &y, h, &self.constraints, &cur.proj, &cur.x));
                trace.push(surrogate_energy(&self.mass, &y, h, &self.constraints, &cur.proj, &ctx.advance(&cur.g)));
            }
            if h * cur.res <= settings.forward_tolerance && (contacts.is_empty() || cur.res <= settings.contact_tolerance) {
                converged = true;
                break;
            }
            if outer >= settings.forward_max_iterations {
                break;
            }
            if outer > settings.newton_after {
                if cur.split != Splitting::Local && !contacts.is_empty() {
                    cur = self.evaluate(&ctx, cur.v, Splitting::Local)?;
                }
                if let Some(next) = self.newton_update(&ctx, &cur)? {
                    cur = next;
                    continue;
                }
            }
            if cur.split != Splitting::Mass && !contacts.is_empty() {
                cur = self.evaluate(&ctx, cur.v, Splitting::Mass)?;
                accel.reset();
            }
            if guard.should_reset(cur.res) {
                accel.reset();
            }
            let v = accel.next(&cur.v, &cur.g);
            cur = self.evaluate(&ctx, v, Splitting::Mass)?;
        }
        if converged && settings.newton_refinements > 0 {
            let bound = settings.contact_tolerance.min(settings.forward_tolerance / h);
            cur = self.refine(&ctx, cur, bound)?;
        }
        let contact_converged = converged || contacts.is_empty();
        let contact_iterations = if contacts.is_empty() { 0 } else { outer };
        let mut v = if converged { cur.g } else { cur.v };
        let mut x = ctx.advance(&v);

        let projections = project_all(&self.constraints, &x, t_next)?;
        let b = self.rhs_with_projections(&ctx.base, &projections);
        let mut free_momentum = b.clone();
        self.coupling.mul_vec_add(-T::one(), &v, &mut free_momentum);
        let mut contact_solution = self.enforce_contacts(&contacts, &free_momentum);
        if !contacts.is_empty() {
            self.polish(&contacts, &contact_solution, &free_momentum, &mut v);
            for (c, s) in contacts.contacts.iter().zip(contact_solution.iter_mut()) {
                s.u = c.local(&v);
            }
            x = ctx.advance(&v);
        }
        let next = SimState { x: x.clone(), v: v.clone(), t: t_next };
        if !next.is_finite() {
            return Err(ForwardError::NonFinite { t: t_next.to_f64_lossy() });
        }
        let tape = StepTape {
            x_prev: state.x.clone(),
            v_prev: state.v.clone(),
            t_next,
            h,
            x_next: x,
            v_next: v,
            projections,
            contact_set: contacts,
            contact_solution,
            free_momentum,
            y,
            outer_iterations: outer,
            contact_iterations,
            converged,
            contact_converged,
            surrogate_trace: trace,
        };
        Ok((next, tape))
    }

    /// `P v − b̃ − Jₙᵀ r̂` at the recorded solution of a step.
    pub fn step_residual(&self, tape: &StepTape<T>) -> Vec<T> {
        let prev = SimState { x: tape.x_prev.clone(), v: tape.v_prev.clone(), t: tape.t_next - tape.h };
        let b = self.velocity_rhs(&prev, &tape.projections);
        let mut r = self.system.mul_vec(&tape.v_next);
        for (ri, bi) in r.iter_mut().zip(&b) {
            *ri -= *bi;
        }
        for (c, s) in tape.contact_set.contacts.iter().zip(&tape.contact_solution) {
            c.scatter(s.r_hat, -T::one(), &mut r);
        }
        r
    }

    /// Runs `steps` steps from `initial`, keeping every tape.
    pub fn simulate(&self, initial: &SimState<T>, steps: usize) -> Result<Rollout<T>, ForwardError> {
        let mut states = Vec::with_capacity(steps + 1);
        let mut tapes = Vec::with_capacity(steps);
        states.push(initial.clone());
        for _ in 0..steps {
            let (next, tape) = self.step(states.last().unwrap())?;
            states.push(next);
            tapes.push(tape);
        }
        Ok(Rollout { states, tapes })
    }
}

struct StepContext<'a, T> {
    x_prev: &'a [T],
    h: T,
    t_next: T,
    base: Vec<T>,
    contacts: &'a ContactSet<T>,
}

impl<T: Real> StepContext<'_, T> {
    fn advance(&self, v: &[T]) -> Vec<T> {
        self.x_prev.iter().zip(v).map(|(a, b)| *a + self.h * *b).collect()
    }
}

struct Evaluation<T> {
    v: Vec<T>,
    x: Vec<T>,
    proj: Vec<Projection<T>>,
    rhs: Vec<T>,
    solution: Vec<ContactSolution<T>>,
    g: Vec<T>,
    res: T,
    split: Splitting,
}

/// Contact splitting used by one evaluation of the step map. The mass
/// splitting is a stable fixed-point map; the local splitting moves the
/// stick/slip switching surface away from the solution and is used only to
/// linearize Newton updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Splitting {
    Mass,
    Local,
}

/// Restarts acceleration when the fixed-point residual stops improving.
struct ResidualGuard<T> {
    best: Option<T>,
    stalled: usize,
}

impl<T: Real> ResidualGuard<T> {
    fn new() -> Self {
        Self { best: None, stalled: 0 }
    }

    fn should_reset(&mut self, res: T) -> bool {
        match self.best {
            Some(b) if res >= b => {
                self.stalled += 1;
                if self.stalled >= 5 || res > b * T::lit(100.0) {
                    self.stalled = 0;
                    return true;
                }
                false
            }
            _ => {
                self.best = Some(res);
                self.stalled = 0;
                false
            }
        }
    }
}

/// States `x₀ … x_N` and the tapes of the `N` steps between them.
#[derive(Clone, Debug)]
pub struct Rollout<T> {
    pub states: Vec<SimState<T>>,
    pub tapes: Vec<StepTape<T>>,
}

/// Active contacts of one step as `(node, kind, case)`.
pub type CaseSignature = Vec<(usize, ContactKind, ContactCase)>;

impl<T: Real> Rollout<T> {
    /// Contact cases of every step; two rollouts with equal signatures took
    /// the same branch of the contact law everywhere.
    pub fn case_signature(&self) -> Vec<CaseSignature> {
        self.tapes
            .iter()
            .map(|t| t.contact_set.contacts.iter().zip(&t.contact_solution).map(|(c, s)| (c.node, c.kind, s.case)).collect())
            .collect()
    }

    /// Whether any step had at least one contact.
    pub fn has_contacts(&self) -> bool {
        self.tapes.iter().any(|t| !t.contact_set.is_empty())
    }
}
