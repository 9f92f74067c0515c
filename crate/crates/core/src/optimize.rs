//! Parameter estimation on top of the simulator: box-constrained L-BFGS-B,
//! a (1+1)-ES baseline, central finite differences, trajectory losses and the
//! binding between named scene parameters and their adjoint gradients.

use std::collections::VecDeque;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::backward::{backpropagate, AdjointOptions, BackwardError, ParamGradient};
use crate::forward::{ForwardError, Scene, SceneSpec, SimState};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("parameter `{name}`: bounds [{lower}, {upper}] with initial value {initial} are invalid")]
    InvalidBounds { name: String, lower: f64, upper: f64, initial: f64 },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}` refers to a missing {what}")]
    MissingTarget { name: String, what: &'static str },
    #[error("loss targets have {found} entries, expected {expected}")]
    TargetMismatch { expected: usize, found: usize },
    #[error("non-finite objective after {evaluations} evaluations; best loss {best_loss}")]
    NonFiniteObjective { best: Vec<f64>, best_loss: f64, evaluations: usize },
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Backward(#[from] BackwardError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One bounded parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub initial: f64,
}

/// Named parameters with finite bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpace {
    params: Vec<Param>,
}

impl ParamSpace {
    pub fn new(params: Vec<Param>) -> Result<Self, OptimizeError> {
        for p in &params {
            let ok = p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper && p.lower <= p.initial && p.initial <= p.upper;
            if !ok {
                return Err(OptimizeError::InvalidBounds {
                    name: p.name.clone(),
                    lower: p.lower,
                    upper: p.upper,
                    initial: p.initial,
                });
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn initial(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.initial).collect()
    }

    pub fn project(&self, theta: &mut [f64]) {
        for (t, p) in theta.iter_mut().zip(&self.params) {
            *t = t.clamp(p.lower, p.upper);
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.iter().zip(&self.params).all(|(t, p)| p.lower <= *t && *t <= p.upper)
    }

    fn widths(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.upper - p.lower).collect()
    }
}

/// One row of an optimization history.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub evaluations: usize,
    pub loss: f64,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub entries: Vec<HistoryEntry>,
}

impl History {
    fn push(&mut self, iteration: usize, evaluations: usize, loss: f64, theta: &[f64]) {
        self.entries.push(HistoryEntry { iteration, evaluations, loss, theta: theta.to_vec() });
    }

    /// CSV with columns `iteration,evaluations,loss,<names...>`.
    pub fn write_csv<W: Write>(&self, names: &[&str], mut out: W) -> std::io::Result<()> {
        write!(out, "iteration,evaluations,loss")?;
        for n in names {
            write!(out, ",{n}")?;
        }
        writeln!(out)?;
        for e in &self.entries {
            write!(out, "{},{},{:e}", e.iteration, e.evaluations, e.loss)?;
            for t in &e.theta {
                write!(out, ",{t:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Evaluations needed to first reach a loss of at most `target`.
    pub fn evaluations_to_reach(&self, target: f64) -> Option<usize> {
        self.entries.iter().find(|e| e.loss <= target).map(|e| e.evaluations)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Projected gradient ∞-norm below tolerance.
    Gradient,
    /// Relative loss decrease below tolerance.
    LossDecrease,
    /// No step along the search direction decreased the loss.
    LineSearch,
    /// Step size fell below its floor.
    StepSize,
    MaxIterations,
    MaxEvaluations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub history: History,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsbOptions {
    /// Correction pairs kept.
    pub memory: usize,
    /// Bound on the projected gradient ∞-norm.
    pub gradient_tolerance: f64,
    /// Bound on `(f_k − f_{k+1}) / max(|f_k|, |f_{k+1}|)`.
    pub relative_decrease: f64,
    pub max_iterations: usize,
    pub max_evaluations: usize,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            gradient_tolerance: 1e-6,
            relative_decrease: 1e-9,
            max_iterations: 200,
            max_evaluations: 1000,
            armijo: 1e-4,
            max_backtracks: 30,
        }
    }
}

/// Projected L-BFGS with box constraints. The search runs in coordinates
/// normalized to the unit box; variables at a bound whose gradient points
/// outward are frozen for the quasi-Newton direction, and a backtracking line
/// search along the projected path guarantees descent of every accepted
/// iterate. Returns the best point seen.
pub fn minimize_lbfgsb<F>(mut objective: F, space: &ParamSpace, opts: &LbfgsbOptions) -> Result<OptimizeResult, OptimizeError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), OptimizeError>,
{
    let n = space.len();
    let width = space.widths();
    let lower: Vec<f64> = space.params().iter().map(|p| p.lower).collect();
    let to_theta = |u: &[f64]| -> Vec<f64> { u.iter().zip(&width).zip(&lower).map(|((u, w), l)| l + u * w).collect() };
    let mut evaluations = 0;
    let mut history = History::default();
    let mut eval = |u: &[f64], evaluations: &mut usize| -> Result<(f64, Vec<f64>), OptimizeError> {
        *evaluations += 1;
        let (f, g) = objective(&to_theta(u))?;
        let g: Vec<f64> = g.iter().zip(&width).map(|(g, w)| g * w).collect();
        Ok((f, g))
    };

    let mut u: Vec<f64> = space.initial().iter().zip(&lower).zip(&width).map(|((t, l), w)| (t - l) / w).collect();
    let (mut f, mut g) = eval(&u, &mut evaluations)?;
    if !f.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(OptimizeError::NonFiniteObjective { best: to_theta(&u), best_loss: f, evaluations });
    }
    history.push(0, evaluations, f, &to_theta(&u));
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let termination = loop {
        let free: Vec<bool> = (0..n).map(|i| !(u[i] <= 0.0 && g[i] > 0.0 || u[i] >= 1.0 && g[i] < 0.0)).collect();
        let pg = (0..n)
            .map(|i| {
                let step = (u[i] - g[i]).clamp(0.0, 1.0) - u[i];
                (step / width[i]).abs()
            })
            .fold(0.0, f64::max);
        if pg <= opts.gradient_tolerance {
            break Termination::Gradient;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        if evaluations >= opts.max_evaluations {
            break Termination::MaxEvaluations;
        }

        let masked: Vec<f64> = (0..n).map(|i| if free[i] { g[i] } else { 0.0 }).collect();
        let mut d = two_loop(&masked, &memory);
        for i in 0..n {
            if !free[i] {
                d[i] = 0.0;
            }
        }
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            d = masked.iter().map(|x| -x).collect();
            slope = dot(&d, &g);
            memory.clear();
        }
        let d_norm = d.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
        let mut alpha = if memory.is_empty() { (0.1 / d_norm).min(1.0) } else { 1.0 };

        let mut accepted = None;
        let mut last_non_finite = false;
        for _ in 0..opts.max_backtracks {
            if evaluations >= opts.max_evaluations {
                break;
            }
            let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| (a + alpha * b).clamp(0.0, 1.0)).collect();
            let step: Vec<f64> = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
            if step.iter().all(|s| *s == 0.0) {
                break;
            }
            let (ft, gt) = eval(&trial, &mut evaluations)?;
            last_non_finite = !ft.is_finite() || gt.iter().any(|x| !x.is_finite());
            if !last_non_finite && ft < f && ft <= f + opts.armijo * dot(&g, &step).min(0.0) {
                accepted = Some((trial, ft, gt, step));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, ft, gt, s)) = accepted else {
            if last_non_finite {
                return Err(OptimizeError::NonFiniteObjective { best: to_theta(&u), best_loss: f, evaluations });
            }
            break if evaluations >= opts.max_evaluations { Termination::MaxEvaluations } else { Termination::LineSearch };
        };
        iterations += 1;
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let decrease = (f - ft) / f.abs().max(ft.abs()).max(f64::MIN_POSITIVE);
        u = trial;
        f = ft;
        g = gt;
        history.push(iterations, evaluations, f, &to_theta(&u));
        if decrease <= opts.relative_decrease {
            break Termination::LossDecrease;
        }
    };
    Ok(OptimizeResult { theta: to_theta(&u), loss: f, iterations, evaluations, termination, history })
}

/// `−H g` from the stored correction pairs, scaled by the latest `sᵀy/yᵀy`.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|x| *x *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|x| *x = -*x);
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EsOptions {
    pub max_evaluations: usize,
    /// Initial step size as a fraction of each parameter's range.
    pub initial_sigma: f64,
    /// Stop once the normalized step size drops below this.
    pub min_sigma: f64,
    pub seed: u64,
}

impl Default for EsOptions {
    fn default() -> Self {
        Self { max_evaluations: 500, initial_sigma: 0.2, min_sigma: 1e-10, seed: 0 }
    }
}

/// Elitist (1+1)-ES with the 1/5th success rule, sampling in the unit box and
/// clipping every candidate to it. Non-finite candidate losses count as failures.
pub fn minimize_es<F>(mut objective: F, space: &ParamSpace, opts: &EsOptions) -> Result<OptimizeResult, OptimizeError>
where
    F: FnMut(&[f64]) -> Result<f64, OptimizeError>,
{
    let width = space.widths();
    let lower: Vec<f64> = space.params().iter().map(|p| p.lower).collect();
    let to_theta = |u: &[f64]| -> Vec<f64> { u.iter().zip(&width).zip(&lower).map(|((u, w), l)| l + u * w).collect() };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut history = History::default();
    let mut u: Vec<f64> = space.initial().iter().zip(&lower).zip(&width).map(|((t, l), w)| (t - l) / w).collect();
    let mut f = objective(&to_theta(&u))?;
    let mut evaluations = 1;
    if !f.is_finite() {
        return Err(OptimizeError::NonFiniteObjective { best: to_theta(&u), best_loss: f, evaluations });
    }
    history.push(0, evaluations, f, &to_theta(&u));
    let mut sigma = opts.initial_sigma;
    let (grow, shrink) = ((1.0f64 / 3.0).exp(), (-1.0f64 / 12.0).exp());
    let termination = loop {
        if evaluations >= opts.max_evaluations {
            break Termination::MaxEvaluations;
        }
        if sigma < opts.min_sigma {
            break Termination::StepSize;
        }
        let candidate: Vec<f64> = u
            .iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (x + sigma * z).clamp(0.0, 1.0)
            })
            .collect();
        let fc = objective(&to_theta(&candidate))?;
        evaluations += 1;
        if fc.is_finite() && fc <= f {
            u = candidate;
            f = fc;
            sigma *= grow;
        } else {
            sigma *= shrink;
        }
        history.push(evaluations - 1, evaluations, f, &to_theta(&u));
    };
    Ok(OptimizeResult { theta: to_theta(&u), loss: f, iterations: evaluations - 1, evaluations, termination, history })
}

/// Central differences `(f(θ + sᵢeᵢ) − f(θ − sᵢeᵢ)) / 2sᵢ`.
pub fn fd_gradient<F, E>(mut objective: F, theta: &[f64], step: &[f64]) -> Result<Vec<f64>, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
{
    let mut g = Vec::with_capacity(theta.len());
    let mut t = theta.to_vec();
    for (i, s) in step.iter().enumerate() {
        t[i] = theta[i] + s;
        let fp = objective(&t)?;
        t[i] = theta[i] - s;
        let fm = objective(&t)?;
        t[i] = theta[i];
        g.push((fp - fm) / (2.0 * s));
    }
    Ok(g)
}

/// Default finite-difference steps: `1e-5` times each parameter's scale.
pub fn default_fd_steps(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|t| 1e-5 * t.abs().max(1e-2)).collect()
}

/// Squared-distance losses on simulated positions.
#[derive(Clone, Debug, PartialEq)]
pub enum LossSpec {
    /// `Σₙ wₙ ‖xₙ − x̂ₙ‖²` over frames `0..=steps`.
    TrajectoryL2 { targets: Vec<Vec<f64>>, weights: Vec<f64> },
    /// `‖x_N − x̂‖²` on the last frame.
    FinalStateL2 { target: Vec<f64> },
}

/// Loss value with its seeds `∂L/∂xₙ`, `∂L/∂vₙ` for every frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub dl_dx: Vec<Vec<f64>>,
    pub dl_dv: Vec<Vec<f64>>,
}

impl LossSpec {
    /// Trajectory loss with unit weights on every frame.
    pub fn trajectory(targets: Vec<Vec<f64>>) -> Self {
        let weights = vec![1.0; targets.len()];
        Self::TrajectoryL2 { targets, weights }
    }

    pub fn evaluate(&self, states: &[SimState<f64>]) -> Result<LossValue, OptimizeError> {
        let n = states.first().map_or(0, |s| s.x.len());
        let mut dl_dx = vec![vec![0.0; n]; states.len()];
        let dl_dv = vec![vec![0.0; n]; states.len()];
        let mut loss = 0.0;
        let mut add = |frame: usize, target: &[f64], w: f64| -> Result<(), OptimizeError> {
            if target.len() != n {
                return Err(OptimizeError::TargetMismatch { expected: n, found: target.len() });
            }
            for ((g, x), t) in dl_dx[frame].iter_mut().zip(&states[frame].x).zip(target) {
                let r = x - t;
                loss += w * r * r;
                *g += 2.0 * w * r;
            }
            Ok(())
        };
        match self {
            Self::TrajectoryL2 { targets, weights } => {
                if targets.len() != states.len() || weights.len() != states.len() {
                    return Err(OptimizeError::TargetMismatch { expected: states.len(), found: targets.len().min(weights.len()) });
                }
                for (k, (t, w)) in targets.iter().zip(weights).enumerate() {
                    add(k, t, *w)?;
                }
            }
            Self::FinalStateL2 { target } => {
                if let Some(last) = states.len().checked_sub(1) {
                    add(last, target, 1.0)?;
                }
            }
        }
        Ok(LossValue { loss, dl_dx, dl_dv })
    }
}

/// A physical scene parameter addressable by name, e.g. `stretch`,
/// `friction[0]`, `wind.amplitude.x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneParam {
    Stretch,
    Bend,
    Attach,
    Density,
    Friction(usize),
    SelfFriction,
    WindAmplitude(usize),
    WindFrequency,
    WindPhase,
}

impl SceneParam {
    pub fn parse(name: &str) -> Result<Self, OptimizeError> {
        let p = match name {
            "stretch" => Self::Stretch,
            "bend" => Self::Bend,
            "attach" => Self::Attach,
            "density" => Self::Density,
            "friction" => Self::Friction(0),
            "self_friction" => Self::SelfFriction,
            "wind.amplitude.x" => Self::WindAmplitude(0),
            "wind.amplitude.y" => Self::WindAmplitude(1),
            "wind.amplitude.z" => Self::WindAmplitude(2),
            "wind.frequency" => Self::WindFrequency,
            "wind.phase" => Self::WindPhase,
            _ => {
                let index = name
                    .strip_prefix("friction[")
                    .and_then(|s| s.strip_suffix(']'))
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| OptimizeError::UnknownParameter(name.to_string()))?;
                Self::Friction(index)
            }
        };
        Ok(p)
    }

    pub fn name(&self) -> String {
        match self {
            Self::Stretch => "stretch".into(),
            Self::Bend => "bend".into(),
            Self::Attach => "attach".into(),
            Self::Density => "density".into(),
            Self::Friction(k) => format!("friction[{k}]"),
            Self::SelfFriction => "self_friction".into(),
            Self::WindAmplitude(k) => format!("wind.amplitude.{}", ["x", "y", "z"][*k]),
            Self::WindFrequency => "wind.frequency".into(),
            Self::WindPhase => "wind.phase".into(),
        }
    }

    /// Checks that the parameter exists in `spec`.
    pub fn validate(&self, spec: &SceneSpec<f64>) -> Result<(), OptimizeError> {
        match self {
            Self::Friction(k) if *k >= spec.obstacles.len() => {
                Err(OptimizeError::MissingTarget { name: self.name(), what: "obstacle" })
            }
            _ => Ok(()),
        }
    }

    pub fn get(&self, spec: &SceneSpec<f64>) -> f64 {
        match self {
            Self::Stretch => spec.weights.stretch,
            Self::Bend => spec.weights.bend,
            Self::Attach => spec.weights.attach,
            Self::Density => spec.density,
            Self::Friction(k) => spec.obstacles[*k].friction,
            Self::SelfFriction => spec.self_collision.friction,
            Self::WindAmplitude(k) => spec.force.wind.amplitude[*k],
            Self::WindFrequency => spec.force.wind.frequency,
            Self::WindPhase => spec.force.wind.phase,
        }
    }

    pub fn set(&self, spec: &mut SceneSpec<f64>, value: f64) {
        match self {
            Self::Stretch => spec.weights.stretch = value,
            Self::Bend => spec.weights.bend = value,
            Self::Attach => spec.weights.attach = value,
            Self::Density => spec.density = value,
            Self::Friction(k) => spec.obstacles[*k].friction = value,
            Self::SelfFriction => spec.self_collision.friction = value,
            Self::WindAmplitude(k) => spec.force.wind.amplitude.0[*k] = value,
            Self::WindFrequency => spec.force.wind.frequency = value,
            Self::WindPhase => spec.force.wind.phase = value,
        }
    }

    pub fn gradient(&self, g: &ParamGradient<f64>) -> f64 {
        match self {
            Self::Stretch => g.stretch,
            Self::Bend => g.bend,
            Self::Attach => g.attach,
            Self::Density => g.density,
            Self::Friction(k) => g.friction[*k],
            Self::SelfFriction => g.self_friction,
            Self::WindAmplitude(k) => g.wind_amplitude[*k],
            Self::WindFrequency => g.wind_frequency,
            Self::WindPhase => g.wind_phase,
        }
    }
}

/// Simulates a scene from a fixed initial state and scores the trajectory;
/// counts forward and backward steps for budget comparisons.
#[derive(Clone, Debug)]
pub struct SceneObjective {
    pub spec: SceneSpec<f64>,
    pub initial: SimState<f64>,
    pub steps: usize,
    pub loss: LossSpec,
    pub params: Vec<SceneParam>,
    pub adjoint: AdjointOptions<f64>,
    pub forward_steps: usize,
    pub backward_steps: usize,
}

impl SceneObjective {
    pub fn new(
        spec: SceneSpec<f64>,
        initial: SimState<f64>,
        steps: usize,
        loss: LossSpec,
        params: Vec<SceneParam>,
    ) -> Result<Self, OptimizeError> {
        for p in &params {
            p.validate(&spec)?;
        }
        Ok(Self { spec, initial, steps, loss, params, adjoint: AdjointOptions::default(), forward_steps: 0, backward_steps: 0 })
    }

    fn scene(&self, theta: &[f64]) -> Result<Scene<f64>, OptimizeError> {
        let mut spec = self.spec.clone();
        for (p, t) in self.params.iter().zip(theta) {
            p.set(&mut spec, *t);
        }
        Ok(Scene::new(spec)?)
    }

    /// Loss at `theta`; simulation failures map to an infinite loss.
    pub fn value(&mut self, theta: &[f64]) -> Result<f64, OptimizeError> {
        let scene = self.scene(theta)?;
        self.forward_steps += self.steps;
        match scene.simulate(&self.initial, self.steps) {
            Ok(roll) => Ok(self.loss.evaluate(&roll.states)?.loss),
            Err(ForwardError::NonFinite { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e.into()),
        }
    }

    /// Loss and adjoint gradient at `theta`.
    pub fn value_and_gradient(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>), OptimizeError> {
        let scene = self.scene(theta)?;
        self.forward_steps += self.steps;
        let roll = match scene.simulate(&self.initial, self.steps) {
            Ok(r) => r,
            Err(ForwardError::NonFinite { .. }) => return Ok((f64::INFINITY, vec![f64::NAN; theta.len()])),
            Err(e) => return Err(e.into()),
        };
        let lv = self.loss.evaluate(&roll.states)?;
        self.backward_steps += self.steps;
        let grad = backpropagate(&scene, &roll, &lv.dl_dx, &lv.dl_dv, &self.adjoint)?;
        Ok((lv.loss, self.params.iter().map(|p| p.gradient(&grad.params)).collect()))
    }
}
