//! Adjoint gradients against central finite differences on a configured
//! scene, at every configured adjoint epsilon, with case-stability flags for
//! contact scenes and a descent check of the loosest-epsilon gradient.

use std::io::Write;
use std::path::Path;

use super::config::SceneConfig;
use super::output::{Manifest, OutputDir};
use super::AppError;
use crate::backward::{backpropagate, AdjointMethod, AdjointOptions};
use crate::forward::{CaseSignature, Scene, SceneSpec, SimState};
use crate::optimize::{LossSpec, SceneParam};

/// Loss rounding level relative to `max(1, |L|)`; divided by the FD step it
/// bounds the absolute error a central difference can resolve.
pub const FD_NOISE: f64 = 1e-11;

/// Number of times the FD step is divided by ten when a perturbed run
/// switches contact cases.
const STEP_REDUCTIONS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub value: f64,
    /// Adjoint gradient at each configured epsilon, in configuration order.
    pub adjoint: Vec<f64>,
    pub finite_difference: f64,
    pub fd_step: f64,
    /// `|adjoint − fd| / max(|adjoint|, |fd|)` at the tightest epsilon.
    pub relative_error: f64,
    /// Whether both perturbed runs took the same contact cases as the base run.
    pub case_stable: bool,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub loss: f64,
    pub epsilons: Vec<f64>,
    /// Steps that fell back to the direct solver, per epsilon.
    pub fallback_steps: Vec<usize>,
    pub contact: bool,
    pub params: Vec<ParamCheck>,
    /// FD directional derivative along the negated loosest-epsilon gradient.
    pub descent_derivative: f64,
    pub descent_ok: bool,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "param,value")?;
        for e in &self.epsilons {
            write!(w, ",adjoint_eps_{e:e}")?;
        }
        writeln!(w, ",finite_difference,fd_step,relative_error,case_stable,tolerance,passed")?;
        for p in &self.params {
            write!(w, "{},{}", p.name, p.value)?;
            for a in &p.adjoint {
                write!(w, ",{a:e}")?;
            }
            writeln!(
                w,
                ",{:e},{:e},{:e},{},{:e},{}",
                p.finite_difference, p.fd_step, p.relative_error, p.case_stable, p.tolerance, p.passed
            )?;
        }
        Ok(())
    }
}

struct Problem {
    spec: SceneSpec<f64>,
    initial: SimState<f64>,
    steps: usize,
    loss: LossSpec,
    params: Vec<SceneParam>,
}

impl Problem {
    fn spec_at(&self, theta: &[f64]) -> SceneSpec<f64> {
        let mut spec = self.spec.clone();
        for (p, t) in self.params.iter().zip(theta) {
            p.set(&mut spec, *t);
        }
        spec
    }

    fn loss_at(&self, theta: &[f64]) -> Result<(f64, Vec<CaseSignature>), AppError> {
        let scene = Scene::new(self.spec_at(theta))?;
        let roll = scene.simulate(&self.initial, self.steps)?;
        Ok((self.loss.evaluate(&roll.states)?.loss, roll.case_signature()))
    }
}

/// Runs the check described by `cfg.gradcheck` (defaults when absent);
/// `fd_step` overrides the configured relative FD step.
pub fn run_gradcheck(cfg: &SceneConfig, fd_step: Option<f64>, out: Option<&Path>) -> Result<GradcheckReport, AppError> {
    let gc = cfg.gradcheck.clone().unwrap_or_default();
    let spec = cfg.to_spec()?;
    let initial = cfg.initial_state(&spec);
    let params = gc
        .params
        .iter()
        .map(|n| {
            let p = SceneParam::parse(n)?;
            p.validate(&spec)?;
            Ok(p)
        })
        .collect::<Result<Vec<_>, crate::optimize::OptimizeError>>()?;
    let offset = crate::geom::Vec3(gc.target_offset_m);
    let target: Vec<f64> = spec.mesh.vertices.iter().flat_map(|v| (*v + offset).0).collect();
    let problem = Problem { spec, initial, steps: gc.steps, loss: LossSpec::FinalStateL2 { target }, params };
    let theta: Vec<f64> = problem.params.iter().map(|p| p.get(&problem.spec)).collect();

    let scene = Scene::new(problem.spec.clone())?;
    let roll = scene.simulate(&problem.initial, problem.steps)?;
    let base_signature = roll.case_signature();
    let contact = roll.has_contacts();
    let lv = problem.loss.evaluate(&roll.states)?;
    let mut adjoint = vec![Vec::new(); problem.params.len()];
    let mut fallback_steps = Vec::new();
    for &eps in &gc.epsilons {
        let opts = AdjointOptions { method: AdjointMethod::Jacobi, epsilon: eps, max_iterations: cfg.solver.adjoint_max_iterations, ..Default::default() };
        let g = backpropagate(&scene, &roll, &lv.dl_dx, &lv.dl_dv, &opts)?;
        fallback_steps.push(g.reports.iter().filter(|r| r.used_fallback).count());
        for (a, p) in adjoint.iter_mut().zip(&problem.params) {
            a.push(p.gradient(&g.params));
        }
    }
    let tightest = gc
        .epsilons
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("at least one epsilon");
    let loosest = gc.epsilons.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k).unwrap();

    let rel_step = fd_step.unwrap_or(gc.fd_step);
    let tolerance = if contact { gc.tolerance_contact } else { gc.tolerance_contact_free };
    let noise = FD_NOISE * lv.loss.abs().max(1.0);
    let mut checks = Vec::with_capacity(problem.params.len());
    for (k, p) in problem.params.iter().enumerate() {
        let mut step = rel_step * theta[k].abs().max(1e-2);
        let mut result = None;
        for _ in 0..=STEP_REDUCTIONS {
            let mut plus = theta.clone();
            plus[k] += step;
            let mut minus = theta.clone();
            minus[k] -= step;
            let (lp, sp) = problem.loss_at(&plus)?;
            let (lm, sm) = problem.loss_at(&minus)?;
            let stable = sp == base_signature && sm == base_signature;
            result = Some(((lp - lm) / (2.0 * step), step, stable));
            if stable {
                break;
            }
            step *= 0.1;
        }
        let (fd, step, case_stable) = result.unwrap();
        let a = adjoint[k][tightest];
        let scale = a.abs().max(fd.abs());
        let err = (a - fd).abs();
        let relative_error = if scale > 0.0 { err / scale } else { 0.0 };
        let passed = case_stable && err <= tolerance * scale + noise / step;
        checks.push(ParamCheck {
            name: p.name(),
            value: theta[k],
            adjoint: adjoint[k].clone(),
            finite_difference: fd,
            fd_step: step,
            relative_error,
            case_stable,
            tolerance,
            passed,
        });
    }

    let scales: Vec<f64> = theta.iter().map(|t| t.abs().max(1e-2)).collect();
    let dir: Vec<f64> = adjoint.iter().zip(&scales).map(|(a, s)| -a[loosest] * s * s).collect();
    let dir_norm = dir.iter().zip(&scales).map(|(d, s)| (d / s).powi(2)).sum::<f64>().sqrt();
    let (descent_derivative, descent_ok) = if dir_norm == 0.0 {
        (0.0, lv.loss == 0.0)
    } else {
        let t = rel_step / dir_norm;
        let along = |sign: f64| -> Vec<f64> { theta.iter().zip(&dir).map(|(x, d)| x + sign * t * d).collect() };
        let (lp, _) = problem.loss_at(&along(1.0))?;
        let (lm, _) = problem.loss_at(&along(-1.0))?;
        let dd = (lp - lm) / (2.0 * t);
        (dd, dd < 0.0)
    };

    let passed = descent_ok && checks.iter().all(|c| c.passed);
    let report = GradcheckReport {
        loss: lv.loss,
        epsilons: gc.epsilons.clone(),
        fallback_steps,
        contact,
        params: checks,
        descent_derivative,
        descent_ok,
        passed,
    };
    if let Some(dir) = out {
        let mut out = OutputDir::create(dir, Manifest::new("gradcheck", &cfg.to_toml(), Vec::new()))?;
        out.write_with("gradcheck.csv", |w| report.write_csv(w))?;
        out.finish()?;
    }
    Ok(report)
}
