//! System identification on synthetic ground truth: the configured scene is
//! simulated with the hidden true parameters to produce target trajectories,
//! then the parameters are recovered from their initial guesses by
//! L-BFGS-B on adjoint gradients or by the (1+1)-ES baseline.

use std::io::Write;
use std::path::Path;

use super::config::{LossKind, SceneConfig, TaskConfig};
use super::output::{write_trajectory, Manifest, OutputDir};
use super::AppError;
use crate::forward::Scene;
use crate::optimize::{
    minimize_es, minimize_lbfgsb, EsOptions, LbfgsbOptions, LossSpec, OptimizeResult, Param, ParamSpace, SceneObjective, SceneParam,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Lbfgsb,
    Es,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lbfgsb => "lbfgsb",
            Self::Es => "es",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lbfgsb" | "l-bfgs-b" => Ok(Self::Lbfgsb),
            "es" => Ok(Self::Es),
            _ => Err(format!("unknown method `{s}`; expected `lbfgsb` or `es`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeReport {
    pub task: String,
    pub method: Method,
    pub seed: u64,
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub initial: Vec<f64>,
    pub initial_loss: f64,
    /// Optimizer result; its losses are divided by `initial_loss`.
    pub result: OptimizeResult,
    pub forward_steps: usize,
    pub backward_steps: usize,
}

impl OptimizeReport {
    /// Final loss in the loss's own units.
    pub fn final_loss(&self) -> f64 {
        self.result.loss * self.initial_loss
    }

    /// Largest `|recovered − truth| / |truth|` over parameters with a nonzero truth.
    pub fn max_relative_parameter_error(&self) -> f64 {
        self.result.theta.iter().zip(&self.truth).filter(|(_, t)| **t != 0.0).map(|(r, t)| (r - t).abs() / t.abs()).fold(0.0, f64::max)
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "param,truth,initial,recovered")?;
        for (k, n) in self.names.iter().enumerate() {
            writeln!(w, "{n},{},{},{}", self.truth[k], self.initial[k], self.result.theta[k])?;
        }
        Ok(())
    }
}

fn task<'a>(cfg: &'a SceneConfig, name: &str) -> Result<&'a TaskConfig, AppError> {
    cfg.optimize.get(name).ok_or_else(|| AppError::UnknownTask {
        task: name.into(),
        available: cfg.optimize.keys().cloned().collect::<Vec<_>>().join(", "),
    })
}

/// Objective of a task: the scene at its initial guesses scored against the
/// trajectory produced by the true parameters.
pub fn task_objective(cfg: &SceneConfig, task_name: &str) -> Result<(SceneObjective, ParamSpace, Vec<f64>), AppError> {
    let t = task(cfg, task_name)?;
    let spec = cfg.to_spec()?;
    let initial = cfg.initial_state(&spec);
    let params = t.params.iter().map(|p| SceneParam::parse(&p.name)).collect::<Result<Vec<_>, _>>()?;
    let mut truth_spec = spec.clone();
    for (p, c) in params.iter().zip(&t.params) {
        p.validate(&truth_spec)?;
        p.set(&mut truth_spec, c.truth);
    }
    let truth_roll = Scene::new(truth_spec)?.simulate(&initial, cfg.steps)?;
    let loss = match t.loss {
        LossKind::Trajectory => LossSpec::trajectory(truth_roll.states.iter().map(|s| s.x.clone()).collect()),
        LossKind::FinalState => LossSpec::FinalStateL2 { target: truth_roll.states.last().unwrap().x.clone() },
    };
    let mut start = spec;
    for (p, c) in params.iter().zip(&t.params) {
        p.set(&mut start, c.initial);
    }
    let mut objective = SceneObjective::new(start, initial, cfg.steps, loss, params)?;
    objective.adjoint.epsilon = cfg.solver.adjoint_epsilon;
    objective.adjoint.max_iterations = cfg.solver.adjoint_max_iterations;
    let space = ParamSpace::new(
        t.params.iter().map(|p| Param { name: p.name.clone(), lower: p.lower, upper: p.upper, initial: p.initial }).collect(),
    )?;
    let truth = t.params.iter().map(|p| p.truth).collect();
    Ok((objective, space, truth))
}

/// Runs one optimization task; writes `history.csv`, `params.csv`, the target
/// `trajectory.bin` and the manifest under `out` when given.
pub fn run_optimize(cfg: &SceneConfig, task_name: &str, method: Method, seed: u64, out: Option<&Path>) -> Result<OptimizeReport, AppError> {
    let t = task(cfg, task_name)?.clone();
    let (mut objective, space, truth) = task_objective(cfg, task_name)?;
    let initial = space.initial();
    let initial_loss = objective.value(&initial)?;
    objective.forward_steps = 0;
    let scale = if initial_loss > 0.0 && initial_loss.is_finite() { initial_loss } else { 1.0 };
    let result = match method {
        Method::Lbfgsb => {
            let opts = LbfgsbOptions { max_iterations: t.max_iterations, gradient_tolerance: 0.0, relative_decrease: 1e-12, ..LbfgsbOptions::default() };
            minimize_lbfgsb(
                |theta| {
                    let (f, g) = objective.value_and_gradient(theta)?;
                    Ok((f / scale, g.into_iter().map(|x| x / scale).collect()))
                },
                &space,
                &opts,
            )?
        }
        Method::Es => {
            let opts = EsOptions { max_evaluations: t.es_max_evaluations, initial_sigma: t.es_initial_sigma, seed, ..EsOptions::default() };
            minimize_es(|theta| Ok(objective.value(theta)? / scale), &space, &opts)?
        }
    };
    let report = OptimizeReport {
        task: task_name.into(),
        method,
        seed,
        names: space.names().iter().map(|s| s.to_string()).collect(),
        truth,
        initial,
        initial_loss: scale,
        result,
        forward_steps: objective.forward_steps,
        backward_steps: objective.backward_steps,
    };
    if let Some(dir) = out {
        let mut out = OutputDir::create(dir, Manifest::new(&format!("optimize {task_name} {}", method.name()), &cfg.to_toml(), vec![seed]))?;
        let names: Vec<&str> = report.names.iter().map(String::as_str).collect();
        out.write_with("history.csv", |w| report.result.history.write_csv(&names, w))?;
        out.write_with("params.csv", |w| report.write_summary(w))?;
        if let LossSpec::TrajectoryL2 { targets, .. } = &objective.loss {
            out.write_with("trajectory.bin", |w| write_trajectory(w, targets))?;
        }
        out.finish()?;
    }
    Ok(report)
}
