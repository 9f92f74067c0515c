//! Central finite differences of rollout losses, the oracle for adjoint gradients.

use diffcloth::backward::{backpropagate, AdjointOptions, ParamGradient, TrajectoryGradient};
use diffcloth::forward::{CaseSignature, Rollout, Scene, SceneSpec, SimState};

use super::{random_vec, rng};

/// Forward solves are accurate to about `1e-13` in velocity, which bounds the
/// loss error of a finite difference with step `e` by roughly `FD_NOISE / e`.
pub const FD_NOISE: f64 = 1e-11;

/// Solver settings tight enough for finite differences.
pub fn tight(mut spec: SceneSpec<f64>) -> SceneSpec<f64> {
    spec.solver.forward_tolerance = 1e-14;
    spec.solver.contact_tolerance = 1e-13;
    spec.solver.forward_max_iterations = 400;
    spec.solver.newton_refinements = 2;
    spec
}

/// A state with nonzero velocity and deformation, reached by simulation.
pub fn warm_state(spec: &SceneSpec<f64>, steps: usize) -> SimState<f64> {
    let scene = Scene::new(spec.clone()).unwrap();
    scene.simulate(&scene.initial_state(), steps).unwrap().states.pop().unwrap()
}

/// `cx·x_N + cv·v_N` on the final state.
pub struct LinearLoss {
    pub cx: Vec<f64>,
    pub cv: Vec<f64>,
}

impl LinearLoss {
    pub fn random(seed: u64, n: usize) -> Self {
        let mut r = rng(seed);
        Self { cx: random_vec(&mut r, n), cv: random_vec(&mut r, n) }
    }

    pub fn eval(&self, s: &SimState<f64>) -> f64 {
        self.cx.iter().zip(&s.x).map(|(a, b)| a * b).sum::<f64>() + self.cv.iter().zip(&s.v).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Loss seeds for every state of an `steps`-step rollout.
    pub fn seeds(&self, steps: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.cx.len();
        let mut gx = vec![vec![0.0; n]; steps + 1];
        let mut gv = vec![vec![0.0; n]; steps + 1];
        gx[steps] = self.cx.clone();
        gv[steps] = self.cv.clone();
        (gx, gv)
    }
}

pub fn rollout(spec: &SceneSpec<f64>, s0: &SimState<f64>, steps: usize) -> Rollout<f64> {
    let scene = Scene::new(spec.clone()).unwrap();
    let roll = scene.simulate(s0, steps).unwrap();
    assert!(roll.tapes.iter().all(|t| t.converged), "forward solve did not converge");
    roll
}

pub fn adjoint_gradient(spec: &SceneSpec<f64>, s0: &SimState<f64>, steps: usize, loss: &LinearLoss, opts: &AdjointOptions<f64>) -> TrajectoryGradient<f64> {
    let scene = Scene::new(spec.clone()).unwrap();
    let roll = scene.simulate(s0, steps).unwrap();
    let (gx, gv) = loss.seeds(steps);
    backpropagate(&scene, &roll, &gx, &gv, opts).unwrap()
}

/// Scene, initial state and loss of one finite-difference check, with the
/// nominal contact cases every perturbed run must reproduce.
pub struct FdCase<'a> {
    pub spec: &'a SceneSpec<f64>,
    pub s0: &'a SimState<f64>,
    pub steps: usize,
    pub loss: &'a LinearLoss,
    pub nominal: Vec<CaseSignature>,
}

impl<'a> FdCase<'a> {
    pub fn new(spec: &'a SceneSpec<f64>, s0: &'a SimState<f64>, steps: usize, loss: &'a LinearLoss) -> Self {
        let nominal = rollout(spec, s0, steps).case_signature();
        Self { spec, s0, steps, loss, nominal }
    }

    /// Central difference of the loss along a perturbation of the scene and
    /// initial state, or a description of the first contact-case change or
    /// unconverged step.
    pub fn try_derivative(&self, eps: f64, perturb: impl Fn(&mut SceneSpec<f64>, &mut SimState<f64>, f64)) -> Result<f64, String> {
        let eval = |e: f64| {
            let mut spec = self.spec.clone();
            let mut s0 = self.s0.clone();
            perturb(&mut spec, &mut s0, e);
            let roll = Scene::new(spec).unwrap().simulate(&s0, self.steps).unwrap();
            if let Some(n) = roll.tapes.iter().position(|t| !t.converged) {
                return Err(format!("forward solve does not converge at step {n} under a {e:+e} perturbation"));
            }
            let set = roll.case_signature();
            if set != self.nominal {
                let diff = set
                    .iter()
                    .zip(&self.nominal)
                    .enumerate()
                    .find_map(|(n, (a, b))| (a != b).then(|| format!("step {n}: {b:?} -> {a:?}")))
                    .unwrap_or_default();
                return Err(format!("contact cases change under a {e:+e} perturbation at {diff}"));
            }
            Ok(self.loss.eval(roll.states.last().unwrap()))
        };
        Ok((eval(eps)? - eval(-eps)?) / (2.0 * eps))
    }

    /// As [`Self::try_derivative`], panicking on a case change.
    pub fn derivative(&self, name: &str, eps: f64, perturb: impl Fn(&mut SceneSpec<f64>, &mut SimState<f64>, f64)) -> f64 {
        self.try_derivative(eps, perturb).unwrap_or_else(|e| panic!("{name}: {e}"))
    }
}

pub fn close(name: &str, analytic: f64, fd: f64, rel: f64, abs: f64) -> Result<(), String> {
    if (analytic - fd).abs() <= rel * fd.abs().max(analytic.abs()) + abs {
        Ok(())
    } else {
        Err(format!("{name}: adjoint {analytic:e} vs fd {fd:e}"))
    }
}

pub type Getter = fn(&mut SceneSpec<f64>) -> &mut f64;

/// Every differentiable scalar parameter with its adjoint gradient.
pub fn scene_params(g: &ParamGradient<f64>) -> Vec<(&'static str, Getter, f64)> {
    vec![
        ("stretch", |s| &mut s.weights.stretch, g.stretch),
        ("bend", |s| &mut s.weights.bend, g.bend),
        ("attach", |s| &mut s.weights.attach, g.attach),
        ("density", |s| &mut s.density, g.density),
        ("friction", |s| &mut s.obstacles[0].friction, g.friction.first().copied().unwrap_or(0.0)),
        ("self_friction", |s| &mut s.self_collision.friction, g.self_friction),
        ("wind_x", |s| &mut s.force.wind.amplitude.0[0], g.wind_amplitude[0]),
        ("wind_y", |s| &mut s.force.wind.amplitude.0[1], g.wind_amplitude[1]),
        ("wind_z", |s| &mut s.force.wind.amplitude.0[2], g.wind_amplitude[2]),
        ("wind_frequency", |s| &mut s.force.wind.frequency, g.wind_frequency),
        ("wind_phase", |s| &mut s.force.wind.phase, g.wind_phase),
    ]
}

/// Whether a parameter exists in `spec`.
pub fn applicable(name: &str, spec: &SceneSpec<f64>) -> bool {
    match name {
        "friction" => !spec.obstacles.is_empty(),
        "self_friction" => spec.self_collision.enabled,
        "attach" => !spec.attachments.is_empty(),
        _ => true,
    }
}
