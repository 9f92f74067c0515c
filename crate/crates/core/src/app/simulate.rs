//! Forward simulation of a configured scene with per-step diagnostics: area
//! ratio, contact counts by case, solver iterations and the largest
//! contact-law violation.

use std::io::Write;
use std::path::Path;

use super::config::SceneConfig;
use super::output::{write_trajectory, Manifest, OutputDir};
use super::AppError;
use crate::contact::{law_violation, ContactCase};
use crate::forward::{Scene, SimState, StepTape};

/// Contact-law residual above which a contact counts as violating its case.
pub const LAW_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticRow {
    pub frame: usize,
    pub time_s: f64,
    /// Current over rest surface area.
    pub area_ratio: f64,
    pub take_off: usize,
    pub stick: usize,
    pub slip: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Largest contact-law violation of the step; zero without contacts.
    pub law_violation: f64,
    pub kinetic_energy_j: f64,
}

impl DiagnosticRow {
    pub const CSV_HEADER: &'static str =
        "frame,time_s,area_ratio,contacts,take_off,stick,slip,outer_iterations,converged,law_violation,kinetic_energy_j";

    pub fn contacts(&self) -> usize {
        self.take_off + self.stick + self.slip
    }

    fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{:e},{:e}",
            self.frame,
            self.time_s,
            self.area_ratio,
            self.contacts(),
            self.take_off,
            self.stick,
            self.slip,
            self.outer_iterations,
            self.converged,
            self.law_violation,
            self.kinetic_energy_j
        )
    }
}

#[derive(Clone, Debug)]
pub struct SimulateReport {
    /// One row per state, starting with the initial state as frame 0.
    pub rows: Vec<DiagnosticRow>,
    pub states: Vec<SimState<f64>>,
    /// Contacts whose law violation exceeds [`LAW_TOLERANCE`].
    pub law_violations: usize,
    pub max_law_violation: f64,
    pub unconverged_steps: usize,
    /// Area-ratio range over frames after the settling time.
    pub settled_area_range: Option<(f64, f64)>,
    /// Whether the settled area ratio stays inside the configured band.
    pub area_band_ok: bool,
}

impl SimulateReport {
    pub fn write_diagnostics<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", DiagnosticRow::CSV_HEADER)?;
        for r in &self.rows {
            r.write_csv(&mut w)?;
        }
        Ok(())
    }

    /// Largest node displacement from the initial state over the run.
    pub fn max_displacement(&self) -> f64 {
        let x0 = &self.states[0].x;
        self.states
            .iter()
            .flat_map(|s| s.x.chunks_exact(3).zip(x0.chunks_exact(3)).map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()))
            .fold(0.0, f64::max)
    }
}

/// Largest contact-law violation among the contacts of a step, and how many
/// exceed [`LAW_TOLERANCE`].
pub fn step_law_violation(tape: &StepTape<f64>) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (c, s) in tape.contact_set.contacts.iter().zip(&tape.contact_solution) {
        let v = law_violation(s.case, s.r_hat, s.u, c.friction);
        if !(v <= LAW_TOLERANCE) {
            count += 1;
        }
        worst = if v.is_nan() { f64::INFINITY } else { worst.max(v) };
    }
    (worst, count)
}

fn kinetic_energy(scene: &Scene<f64>, v: &[f64]) -> f64 {
    v.chunks_exact(3).enumerate().map(|(i, c)| 0.5 * scene.mass.node(i) * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2])).sum()
}

/// Simulates `cfg.steps` steps, optionally writing frames, `trajectory.bin`,
/// `diagnostics.csv` and the manifest under `out`.
pub fn run_simulate(cfg: &SceneConfig, out: Option<&Path>) -> Result<SimulateReport, AppError> {
    let spec = cfg.to_spec()?;
    let initial = cfg.initial_state(&spec);
    let scene = Scene::new(spec)?;
    let rest_area = scene.spec.mesh.total_area();
    let area_ratio = |x: &[f64]| scene.spec.mesh.deformed_area(x) / rest_area;

    let mut rows = vec![DiagnosticRow {
        frame: 0,
        time_s: initial.t,
        area_ratio: area_ratio(&initial.x),
        take_off: 0,
        stick: 0,
        slip: 0,
        outer_iterations: 0,
        converged: true,
        law_violation: 0.0,
        kinetic_energy_j: kinetic_energy(&scene, &initial.v),
    }];
    let mut states = vec![initial];
    let (mut law_violations, mut max_law_violation, mut unconverged_steps) = (0, 0.0f64, 0);
    for frame in 1..=cfg.steps {
        let (next, tape) = scene.step(states.last().unwrap())?;
        let (worst, count) = step_law_violation(&tape);
        law_violations += count;
        max_law_violation = max_law_violation.max(worst);
        unconverged_steps += usize::from(!tape.converged);
        let count_case = |case| tape.contact_solution.iter().filter(|s| s.case == case).count();
        rows.push(DiagnosticRow {
            frame,
            time_s: next.t,
            area_ratio: area_ratio(&next.x),
            take_off: count_case(ContactCase::TakeOff),
            stick: count_case(ContactCase::Stick),
            slip: count_case(ContactCase::Slip),
            outer_iterations: tape.outer_iterations,
            converged: tape.converged,
            law_violation: worst,
            kinetic_energy_j: kinetic_energy(&scene, &next.v),
        });
        states.push(next);
    }

    let settle = cfg.output.settle_time_s;
    let settled_area_range = rows
        .iter()
        .filter(|r| r.time_s >= settle - 1e-12)
        .map(|r| r.area_ratio)
        .fold(None, |acc: Option<(f64, f64)>, a| Some(acc.map_or((a, a), |(lo, hi)| (lo.min(a), hi.max(a)))));
    let band = cfg.output.area_ratio_band;
    let area_band_ok = settled_area_range.is_some_and(|(lo, hi)| lo >= band[0] && hi <= band[1]);
    let report = SimulateReport { rows, states, law_violations, max_law_violation, unconverged_steps, settled_area_range, area_band_ok };

    if let Some(dir) = out {
        let mut out = OutputDir::create(dir, Manifest::new("simulate", &cfg.to_toml(), Vec::new()))?;
        if cfg.output.frame_every > 0 {
            for (k, s) in report.states.iter().enumerate().step_by(cfg.output.frame_every) {
                out.write_frame(k, &scene.spec.mesh, &s.x)?;
            }
        }
        let frames: Vec<Vec<f64>> = report.states.iter().map(|s| s.x.clone()).collect();
        out.write_with("trajectory.bin", |w| write_trajectory(w, &frames))?;
        out.write_with("diagnostics.csv", |w| report.write_diagnostics(w))?;
        out.finish()?;
    }
    Ok(report)
}
