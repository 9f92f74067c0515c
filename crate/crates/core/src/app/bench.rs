//! Backpropagation cost of the Jacobi adjoint solver against the direct
//! sparse LU solver over a sweep of grid resolutions and adjoint epsilons.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{BenchmarkConfig, SceneConfig};
use super::output::{Manifest, OutputDir};
use super::AppError;
use crate::backward::{backpropagate, AdjointMethod, AdjointOptions, BackwardTimings, TrajectoryGradient};
use crate::forward::{Rollout, Scene};
use crate::real::{diff_norm_inf, norm_inf};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    pub resolutions: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub side_m: f64,
    pub steps: usize,
    pub seed: u64,
    /// Each backpropagation is timed this many times and the fastest run kept.
    pub repeats: usize,
}

impl From<&BenchmarkConfig> for BenchOptions {
    fn from(b: &BenchmarkConfig) -> Self {
        Self { resolutions: b.resolutions.clone(), epsilons: b.epsilons.clone(), side_m: b.side_m, steps: b.steps, seed: b.seed, repeats: b.repeats }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    Direct,
    Jacobi,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::Jacobi => "jacobi",
        }
    }
}

/// One backpropagation run. Shares are percentages of `total_s`; the
/// remainder not attributed to a phase is reported as `other`.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub resolution: usize,
    pub solver: SolverKind,
    /// `None` for the direct solver.
    pub epsilon: Option<f64>,
    pub total_s: f64,
    pub share_delta_p: f64,
    pub share_jacobi: f64,
    pub share_direct: f64,
    pub share_contact: f64,
    pub share_other: f64,
    /// Fraction of steps whose Jacobi solve fell back to the direct solver.
    pub failure_ratio: f64,
    /// Mean Jacobi iterations per step; zero for the direct solver.
    pub mean_iterations: f64,
    /// Direct time over this run's time.
    pub speedup: f64,
    /// Largest Jacobi-vs-direct step adjoint difference, relative to `max(1, ‖z‖∞)`.
    pub max_step_difference: f64,
    /// Difference of the initial-state gradients, relative to `max(1, ‖g‖∞)`.
    pub gradient_difference: f64,
    pub contacts: usize,
}

impl BenchRow {
    pub fn share_sum(&self) -> f64 {
        self.share_delta_p + self.share_jacobi + self.share_direct + self.share_contact + self.share_other
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "resolution,solver,epsilon,total_s,share_delta_p,share_jacobi,share_direct,share_contact,share_other,failure_ratio,mean_iterations,speedup,max_step_difference,gradient_difference,contacts";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:.6},{:.2},{:.2},{:.2},{:.2},{:.2},{:.4},{:.2},{:.3},{:e},{:e},{}",
                r.resolution,
                r.solver.name(),
                r.epsilon.map_or(String::new(), |e| format!("{e:e}")),
                r.total_s,
                r.share_delta_p,
                r.share_jacobi,
                r.share_direct,
                r.share_contact,
                r.share_other,
                r.failure_ratio,
                r.mean_iterations,
                r.speedup,
                r.max_step_difference,
                r.gradient_difference,
                r.contacts
            )?;
        }
        Ok(())
    }

    /// Jacobi speedups at `epsilon`, in resolution order.
    pub fn speedups(&self, epsilon: f64) -> Vec<(usize, f64)> {
        self.rows.iter().filter(|r| r.solver == SolverKind::Jacobi && r.epsilon == Some(epsilon)).map(|r| (r.resolution, r.speedup)).collect()
    }

    /// Speedup at least 1 at the first resolution, strictly increasing, and at
    /// least `final_floor` at the last one.
    pub fn trend_holds(&self, epsilon: f64, final_floor: f64) -> bool {
        let s = self.speedups(epsilon);
        !s.is_empty()
            && s[0].1 >= 1.0
            && s.windows(2).all(|w| w[1].1 > w[0].1)
            && s.last().is_some_and(|l| l.1 >= final_floor)
    }
}

/// Random linear loss seeds `∂L/∂xₙ` for every frame.
fn loss_seeds(frames: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

/// Fastest of `repeats` timed backpropagations.
fn timed(
    scene: &Scene<f64>,
    roll: &Rollout<f64>,
    dl_dx: &[Vec<f64>],
    dl_dv: &[Vec<f64>],
    opts: &AdjointOptions<f64>,
    repeats: usize,
) -> Result<(TrajectoryGradient<f64>, f64), AppError> {
    let mut best: Option<(TrajectoryGradient<f64>, f64)> = None;
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        let g = backpropagate(scene, roll, dl_dx, dl_dv, opts)?;
        let wall = t0.elapsed().as_secs_f64();
        if best.as_ref().is_none_or(|b| wall < b.1) {
            best = Some((g, wall));
        }
    }
    Ok(best.expect("at least one run"))
}

fn shares(t: &BackwardTimings, wall: f64) -> (f64, [f64; 5]) {
    let parts = [t.delta_p, t.jacobi, t.direct, t.contact].map(|d| d.as_secs_f64());
    let attributed: f64 = parts.iter().sum();
    let total = wall.max(attributed);
    let pct = |x: f64| if total > 0.0 { 100.0 * x / total } else { 0.0 };
    (total, [pct(parts[0]), pct(parts[1]), pct(parts[2]), pct(parts[3]), pct(total - attributed)])
}

/// Relative difference of two vectors scaled by `max(1, ‖b‖∞)`.
fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    diff_norm_inf(a, b) / norm_inf(b).max(1.0)
}

/// Per-step agreement: both solvers are applied to the same upstream
/// gradients, taken from the direct chain, so differences do not compound.
pub fn max_step_difference(scene: &Scene<f64>, roll: &Rollout<f64>, dl_dx: &[Vec<f64>], dl_dv: &[Vec<f64>], jacobi: &AdjointOptions<f64>) -> Result<f64, AppError> {
    let direct = AdjointOptions { method: AdjointMethod::Direct, ..*jacobi };
    let steps = roll.tapes.len();
    let mut gx = dl_dx[steps].clone();
    let mut gv = dl_dv[steps].clone();
    let mut worst = 0.0f64;
    for n in (0..steps).rev() {
        let d = crate::backward::backward_step(scene, &roll.tapes[n], &gx, &gv, &direct)?;
        let j = crate::backward::backward_step(scene, &roll.tapes[n], &gx, &gv, jacobi)?;
        worst = worst.max(rel_diff(&j.z, &d.z));
        gx = d.dl_dx_prev;
        gv = d.dl_dv_prev;
        for (a, b) in gx.iter_mut().zip(&dl_dx[n]) {
            *a += *b;
        }
        for (a, b) in gv.iter_mut().zip(&dl_dv[n]) {
            *a += *b;
        }
    }
    Ok(worst)
}

/// Runs the sweep. Resolutions run sequentially; each rollout is simulated
/// once and backpropagated by every solver configuration.
pub fn run_benchmark(cfg: &SceneConfig, opts: &BenchOptions, out: Option<&Path>) -> Result<BenchReport, AppError> {
    let mut rows = Vec::new();
    for &n in &opts.resolutions {
        let mut c = cfg.with_resolution(n, opts.side_m)?;
        c.steps = opts.steps;
        let spec = c.to_spec()?;
        let initial = c.initial_state(&spec);
        let scene = Scene::new(spec)?;
        let roll = scene.simulate(&initial, opts.steps)?;
        let contacts = roll.tapes.iter().map(|t| t.contact_set.len()).sum();
        let dl_dx = loss_seeds(opts.steps + 1, scene.n_dofs(), opts.seed);
        let dl_dv = vec![vec![0.0; scene.n_dofs()]; opts.steps + 1];
        let base = AdjointOptions { max_iterations: c.solver.adjoint_max_iterations, ..AdjointOptions::default() };

        let direct_opts = AdjointOptions { method: AdjointMethod::Direct, ..base };
        let (gd, wall_d) = timed(&scene, &roll, &dl_dx, &dl_dv, &direct_opts, opts.repeats)?;
        let (total_d, sd) = shares(&gd.timings, wall_d);
        rows.push(BenchRow {
            resolution: n,
            solver: SolverKind::Direct,
            epsilon: None,
            total_s: total_d,
            share_delta_p: sd[0],
            share_jacobi: sd[1],
            share_direct: sd[2],
            share_contact: sd[3],
            share_other: sd[4],
            failure_ratio: 0.0,
            mean_iterations: 0.0,
            speedup: 1.0,
            max_step_difference: 0.0,
            gradient_difference: 0.0,
            contacts,
        });
        for &eps in &opts.epsilons {
            let jac = AdjointOptions { method: AdjointMethod::Jacobi, epsilon: eps, ..base };
            let (gj, wall_j) = timed(&scene, &roll, &dl_dx, &dl_dv, &jac, opts.repeats)?;
            let (total_j, sj) = shares(&gj.timings, wall_j);
            let failures = gj.reports.iter().filter(|r| r.used_fallback).count();
            let gradient_difference = rel_diff(&gj.dl_dx0, &gd.dl_dx0).max(rel_diff(&gj.dl_dv0, &gd.dl_dv0));
            rows.push(BenchRow {
                resolution: n,
                solver: SolverKind::Jacobi,
                epsilon: Some(eps),
                total_s: total_j,
                share_delta_p: sj[0],
                share_jacobi: sj[1],
                share_direct: sj[2],
                share_contact: sj[3],
                share_other: sj[4],
                failure_ratio: failures as f64 / opts.steps as f64,
                mean_iterations: gj.reports.iter().map(|r| r.iterations as f64).sum::<f64>() / opts.steps as f64,
                speedup: total_d / total_j,
                max_step_difference: max_step_difference(&scene, &roll, &dl_dx, &dl_dv, &jac)?,
                gradient_difference,
                contacts,
            });
        }
    }
    let report = BenchReport { rows };
    if let Some(dir) = out {
        let mut out = OutputDir::create(dir, Manifest::new("benchmark", &cfg.to_toml(), vec![opts.seed]))?;
        out.write_with("bench.csv", |w| report.write_csv(w))?;
        out.finish()?;
    }
    Ok(report)
}
