//! Scene configuration files: a TOML schema with SI units in the field names,
//! validation that reports the offending field path, and conversion to a
//! [`SceneSpec`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AppError;
use crate::contact::{Obstacle, SelfCollision, Side};
use crate::energy::{Attachment, MaterialWeights, Trajectory};
use crate::forward::{ForceModel, SceneSpec, SimState, SolverSettings, Wind};
use crate::geom::Vec3;
use crate::mesh::{load_obj, make_grid, TriMesh};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub name: String,
    pub time_step_s: f64,
    pub steps: usize,
    pub density_kg_per_m2: f64,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub attachments: Vec<AttachmentConfig>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    #[serde(default)]
    pub self_collision: SelfCollisionConfig,
    #[serde(default = "default_margin")]
    pub contact_margin_m: f64,
    #[serde(default)]
    pub force: ForceConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Uniform initial velocity.
    #[serde(default)]
    pub initial_velocity_m_per_s: [f64; 3],
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<GradcheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkConfig>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub optimize: BTreeMap<String, TaskConfig>,
}

fn default_margin() -> f64 {
    1e-3
}

/// Rest shape: a generated grid or an OBJ file, then rotated about x, y, z
/// (degrees, in that order) and translated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshConfig {
    Grid {
        nx: usize,
        ny: usize,
        spacing_m: f64,
        /// Shift the grid so its center is at the origin before placement.
        #[serde(default)]
        centered: bool,
        #[serde(default)]
        rotate_deg: [f64; 3],
        #[serde(default)]
        translate_m: [f64; 3],
    },
    Obj {
        path: PathBuf,
        #[serde(default)]
        rotate_deg: [f64; 3],
        #[serde(default)]
        translate_m: [f64; 3],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub stretch_n_per_m: f64,
    pub bend_n_m: f64,
    pub attach_n_per_m: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self { stretch_n_per_m: 50.0, bend_n_m: 1e-3, attach_n_per_m: 5e3 }
    }
}

/// A pinned vertex, chosen by index or, on grids, by fractional grid
/// coordinates `grid_uv ∈ [0,1]²` so the choice survives a resolution change.
/// The target defaults to the vertex rest position plus `offset_m`;
/// `waypoints_m_s` rows are `[t, x, y, z]` offsets interpolated in time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachmentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_uv: Option<[f64; 2]>,
    #[serde(default)]
    pub offset_m: [f64; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints_m_s: Vec<[f64; 4]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideConfig {
    Exterior,
    Interior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleConfig {
    Plane { point_m: [f64; 3], normal: [f64; 3], friction: f64 },
    Sphere { center_m: [f64; 3], radius_m: f64, side: SideConfig, friction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfCollisionConfig {
    pub enabled: bool,
    pub radius_m: f64,
    pub friction: f64,
}

impl Default for SelfCollisionConfig {
    fn default() -> Self {
        Self { enabled: false, radius_m: 0.01, friction: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceConfig {
    pub gravity_m_per_s2: [f64; 3],
    pub wind: WindConfig,
}

impl Default for ForceConfig {
    fn default() -> Self {
        Self { gravity_m_per_s2: [0.0, 0.0, -9.81], wind: WindConfig::default() }
    }
}

/// Per-node force `a·sin(2πf·t + φ)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindConfig {
    pub amplitude_n: [f64; 3],
    pub frequency_hz: f64,
    pub phase_rad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub forward_tolerance_m: f64,
    pub forward_max_iterations: usize,
    pub contact_tolerance_m_per_s: f64,
    pub contact_max_iterations: usize,
    pub anderson_depth: usize,
    pub newton_after: usize,
    pub newton_refinements: usize,
    pub adjoint_epsilon: f64,
    pub adjoint_max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverSettings::<f64>::default();
        Self {
            forward_tolerance_m: s.forward_tolerance,
            forward_max_iterations: s.forward_max_iterations,
            contact_tolerance_m_per_s: s.contact_tolerance,
            contact_max_iterations: s.contact_max_iterations,
            anderson_depth: s.anderson_depth,
            newton_after: s.newton_after,
            newton_refinements: s.newton_refinements,
            adjoint_epsilon: s.adjoint_tolerance,
            adjoint_max_iterations: s.adjoint_max_iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write an OBJ every this many frames; 0 disables frame output.
    pub frame_every: usize,
    /// Time after which the area-ratio band is checked.
    pub settle_time_s: f64,
    /// Accepted area-ratio band after settling.
    pub area_ratio_band: [f64; 2],
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { frame_every: 0, settle_time_s: 0.0, area_ratio_band: [0.95, 1.05] }
    }
}

/// Finite-difference check of the adjoint gradient. The loss is the squared
/// distance of the final positions to the rest shape moved by `target_offset_m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub params: Vec<String>,
    pub steps: usize,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub target_offset_m: [f64; 3],
    /// Adjoint epsilons to compare; the smallest is checked against FD.
    pub epsilons: Vec<f64>,
    pub tolerance_contact_free: f64,
    pub tolerance_contact: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            params: vec!["stretch".into(), "density".into()],
            steps: 20,
            fd_step: 1e-5,
            target_offset_m: [0.0, 0.0, 0.0],
            epsilons: vec![1e-4, 1e-6],
            tolerance_contact_free: 1e-3,
            tolerance_contact: 1e-2,
        }
    }
}

/// Square-grid resolutions for the solver comparison; the cloth keeps its
/// physical side length `side_m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub resolutions: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub side_m: f64,
    pub steps: usize,
    pub seed: u64,
    /// Timing repetitions per solver; the fastest is reported.
    pub repeats: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { resolutions: vec![12, 24, 48], epsilons: vec![1e-4, 1e-6], side_m: 1.0, steps: 20, seed: 0, repeats: 3 }
    }
}

/// A bounded parameter of a system-identification task with its hidden true value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskParamConfig {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub initial: f64,
    pub truth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Trajectory,
    FinalState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub params: Vec<TaskParamConfig>,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Forward-step budget of the gradient-free baseline, in objective evaluations.
    #[serde(default = "default_es_evaluations")]
    pub es_max_evaluations: usize,
    /// Initial ES step as a fraction of each parameter range.
    #[serde(default = "default_es_sigma")]
    pub es_initial_sigma: f64,
}

fn default_loss() -> LossKind {
    LossKind::Trajectory
}

fn default_max_iterations() -> usize {
    50
}

fn default_es_evaluations() -> usize {
    200
}

fn default_es_sigma() -> f64 {
    0.2
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> AppError {
    AppError::Config { path: path.into(), message: message.into() }
}

fn check(ok: bool, path: &str, message: &str) -> Result<(), AppError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(path, message))
    }
}

fn finite3(v: [f64; 3]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl SceneConfig {
    pub fn parse(text: &str) -> Result<Self, AppError> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(e.span().map_or(String::new(), |s| format!("byte {}..{}", s.start, s.end)), e.message()))?;
        cfg.validate_fields()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AppError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Io { path: path.to_path_buf(), source: e })?;
        let mut cfg = Self::parse(&text)?;
        if let MeshConfig::Obj { path: p, .. } = &mut cfg.mesh {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    /// Checks every field that can be checked without building the mesh.
    pub fn validate_fields(&self) -> Result<(), AppError> {
        check(self.time_step_s > 0.0 && self.time_step_s.is_finite(), "time_step_s", "must be positive")?;
        check(self.steps >= 1, "steps", "must be at least 1")?;
        check(self.density_kg_per_m2 > 0.0 && self.density_kg_per_m2.is_finite(), "density_kg_per_m2", "must be positive")?;
        check(self.contact_margin_m >= 0.0 && self.contact_margin_m.is_finite(), "contact_margin_m", "must be non-negative")?;
        match &self.mesh {
            MeshConfig::Grid { nx, ny, spacing_m, rotate_deg, translate_m, .. } => {
                check(*nx >= 2, "mesh.nx", "must be at least 2")?;
                check(*ny >= 2, "mesh.ny", "must be at least 2")?;
                check(*spacing_m > 0.0 && spacing_m.is_finite(), "mesh.spacing_m", "must be positive")?;
                check(finite3(*rotate_deg), "mesh.rotate_deg", "must be finite")?;
                check(finite3(*translate_m), "mesh.translate_m", "must be finite")?;
            }
            MeshConfig::Obj { rotate_deg, translate_m, .. } => {
                check(finite3(*rotate_deg), "mesh.rotate_deg", "must be finite")?;
                check(finite3(*translate_m), "mesh.translate_m", "must be finite")?;
            }
        }
        let w = &self.weights;
        check(w.stretch_n_per_m > 0.0, "weights.stretch_n_per_m", "must be positive")?;
        check(w.bend_n_m > 0.0, "weights.bend_n_m", "must be positive")?;
        check(w.attach_n_per_m > 0.0, "weights.attach_n_per_m", "must be positive")?;
        for (k, a) in self.attachments.iter().enumerate() {
            let path = format!("attachments[{k}]");
            check(a.vertex.is_some() != a.grid_uv.is_some(), &path, "set exactly one of `vertex` and `grid_uv`")?;
            if let Some(uv) = a.grid_uv {
                check(uv.iter().all(|x| (0.0..=1.0).contains(x)), &format!("{path}.grid_uv"), "must lie in [0, 1]")?;
                check(matches!(self.mesh, MeshConfig::Grid { .. }), &format!("{path}.grid_uv"), "requires a grid mesh")?;
            }
            check(finite3(a.offset_m), &format!("{path}.offset_m"), "must be finite")?;
            for (j, w) in a.waypoints_m_s.iter().enumerate() {
                check(w.iter().all(|x| x.is_finite()), &format!("{path}.waypoints_m_s[{j}]"), "must be finite")?;
                if j > 0 {
                    check(w[0] > a.waypoints_m_s[j - 1][0], &format!("{path}.waypoints_m_s[{j}]"), "times must increase")?;
                }
            }
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            let path = format!("obstacles[{k}]");
            match o {
                ObstacleConfig::Plane { point_m, normal, friction } => {
                    check(finite3(*point_m), &format!("{path}.point_m"), "must be finite")?;
                    check(finite3(*normal) && Vec3(*normal).norm() > 0.0, &format!("{path}.normal"), "must be a nonzero vector")?;
                    check(*friction >= 0.0 && friction.is_finite(), &format!("{path}.friction"), "must be non-negative")?;
                }
                ObstacleConfig::Sphere { center_m, radius_m, friction, .. } => {
                    check(finite3(*center_m), &format!("{path}.center_m"), "must be finite")?;
                    check(*radius_m > 0.0 && radius_m.is_finite(), &format!("{path}.radius_m"), "must be positive")?;
                    check(*friction >= 0.0 && friction.is_finite(), &format!("{path}.friction"), "must be non-negative")?;
                }
            }
        }
        let sc = &self.self_collision;
        if sc.enabled {
            check(sc.radius_m > 0.0, "self_collision.radius_m", "must be positive")?;
            check(sc.friction >= 0.0, "self_collision.friction", "must be non-negative")?;
        }
        check(finite3(self.force.gravity_m_per_s2), "force.gravity_m_per_s2", "must be finite")?;
        check(finite3(self.force.wind.amplitude_n), "force.wind.amplitude_n", "must be finite")?;
        check(self.force.wind.frequency_hz.is_finite(), "force.wind.frequency_hz", "must be finite")?;
        check(self.force.wind.phase_rad.is_finite(), "force.wind.phase_rad", "must be finite")?;
        let s = &self.solver;
        check(s.forward_tolerance_m > 0.0, "solver.forward_tolerance_m", "must be positive")?;
        check(s.contact_tolerance_m_per_s > 0.0, "solver.contact_tolerance_m_per_s", "must be positive")?;
        check(s.adjoint_epsilon > 0.0, "solver.adjoint_epsilon", "must be positive")?;
        check(s.forward_max_iterations >= 1, "solver.forward_max_iterations", "must be at least 1")?;
        check(finite3(self.initial_velocity_m_per_s), "initial_velocity_m_per_s", "must be finite")?;
        let band = self.output.area_ratio_band;
        check(band[0] < band[1], "output.area_ratio_band", "lower bound must be below upper bound")?;
        if let Some(g) = &self.gradcheck {
            check(g.steps >= 1, "gradcheck.steps", "must be at least 1")?;
            check(g.fd_step > 0.0, "gradcheck.fd_step", "must be positive")?;
            check(!g.epsilons.is_empty(), "gradcheck.epsilons", "must not be empty")?;
            for (k, p) in g.params.iter().enumerate() {
                crate::optimize::SceneParam::parse(p).map_err(|e| invalid(format!("gradcheck.params[{k}]"), e.to_string()))?;
            }
        }
        if let Some(b) = &self.benchmark {
            check(b.resolutions.iter().all(|r| *r >= 2), "benchmark.resolutions", "every resolution must be at least 2")?;
            check(b.epsilons.iter().all(|e| *e > 0.0), "benchmark.epsilons", "must be positive")?;
            check(b.side_m > 0.0, "benchmark.side_m", "must be positive")?;
            check(b.steps >= 1, "benchmark.steps", "must be at least 1")?;
            check(b.repeats >= 1, "benchmark.repeats", "must be at least 1")?;
        }
        for (task, t) in &self.optimize {
            check(!t.params.is_empty(), &format!("optimize.{task}.params"), "must not be empty")?;
            for (k, p) in t.params.iter().enumerate() {
                let path = format!("optimize.{task}.params[{k}]");
                crate::optimize::SceneParam::parse(&p.name).map_err(|e| invalid(format!("{path}.name"), e.to_string()))?;
                let ok = p.lower < p.upper && (p.lower..=p.upper).contains(&p.initial) && (p.lower..=p.upper).contains(&p.truth);
                check(ok, &path, "needs lower < upper with initial and truth inside the bounds")?;
            }
        }
        Ok(())
    }

    /// Builds the rest mesh, applying the placement transform.
    pub fn build_mesh(&self) -> Result<TriMesh<f64>, AppError> {
        let (mesh, rotate, translate) = match &self.mesh {
            MeshConfig::Grid { nx, ny, spacing_m, centered, rotate_deg, translate_m } => {
                let mut mesh = make_grid(*nx, *ny, *spacing_m).map_err(|e| invalid("mesh", e.to_string()))?;
                if *centered {
                    let c = Vec3::new((*nx - 1) as f64 * spacing_m * 0.5, (*ny - 1) as f64 * spacing_m * 0.5, 0.0);
                    mesh = mesh.map_vertices(|v| v - c);
                }
                (mesh, *rotate_deg, *translate_m)
            }
            MeshConfig::Obj { path, rotate_deg, translate_m } => {
                (load_obj(path).map_err(|e| invalid("mesh.path", e.to_string()))?, *rotate_deg, *translate_m)
            }
        };
        let r = rotation(rotate);
        let t = Vec3(translate);
        Ok(mesh.map_vertices(|v| r.mul_vec(v) + t))
    }

    fn attachment_vertex(&self, k: usize, a: &AttachmentConfig, n_vertices: usize) -> Result<usize, AppError> {
        let v = match (a.vertex, a.grid_uv, &self.mesh) {
            (Some(v), _, _) => v,
            (None, Some(uv), MeshConfig::Grid { nx, ny, .. }) => {
                let i = (uv[0] * (*nx - 1) as f64).round() as usize;
                let j = (uv[1] * (*ny - 1) as f64).round() as usize;
                j * nx + i
            }
            _ => return Err(invalid(format!("attachments[{k}]"), "no vertex selected")),
        };
        check(v < n_vertices, &format!("attachments[{k}].vertex"), &format!("index {v} out of range for {n_vertices} vertices"))?;
        Ok(v)
    }

    /// Full scene description, with every index checked against the mesh.
    pub fn to_spec(&self) -> Result<SceneSpec<f64>, AppError> {
        self.validate_fields()?;
        let mesh = self.build_mesh()?;
        let mut attachments = Vec::with_capacity(self.attachments.len());
        for (k, a) in self.attachments.iter().enumerate() {
            let vertex = self.attachment_vertex(k, a, mesh.num_vertices())?;
            let rest = mesh.vertices[vertex] + Vec3(a.offset_m);
            let trajectory = if a.waypoints_m_s.is_empty() {
                Trajectory::Fixed(rest)
            } else {
                Trajectory::Waypoints(a.waypoints_m_s.iter().map(|w| (w[0], rest + Vec3::new(w[1], w[2], w[3]))).collect())
            };
            attachments.push(Attachment { vertex, trajectory });
        }
        let mut obstacles = Vec::with_capacity(self.obstacles.len());
        for (k, o) in self.obstacles.iter().enumerate() {
            let built = match o {
                ObstacleConfig::Plane { point_m, normal, friction } => Obstacle::half_space(Vec3(*point_m), Vec3(*normal), *friction),
                ObstacleConfig::Sphere { center_m, radius_m, side, friction } => {
                    let side = match side {
                        SideConfig::Exterior => Side::Exterior,
                        SideConfig::Interior => Side::Interior,
                    };
                    Obstacle::sphere(Vec3(*center_m), *radius_m, side, *friction)
                }
            };
            obstacles.push(built.map_err(|e| invalid(format!("obstacles[{k}]"), e.to_string()))?);
        }
        let s = &self.solver;
        let solver = SolverSettings {
            forward_tolerance: s.forward_tolerance_m,
            forward_max_iterations: s.forward_max_iterations,
            contact_tolerance: s.contact_tolerance_m_per_s,
            contact_max_iterations: s.contact_max_iterations,
            adjoint_tolerance: s.adjoint_epsilon,
            adjoint_max_iterations: s.adjoint_max_iterations,
            anderson_depth: s.anderson_depth,
            newton_after: s.newton_after,
            newton_refinements: s.newton_refinements,
            record_surrogate: false,
        };
        Ok(SceneSpec {
            mesh,
            attachments,
            obstacles,
            self_collision: SelfCollision {
                enabled: self.self_collision.enabled,
                radius: self.self_collision.radius_m,
                friction: self.self_collision.friction,
            },
            margin: self.contact_margin_m,
            density: self.density_kg_per_m2,
            weights: MaterialWeights {
                stretch: self.weights.stretch_n_per_m,
                bend: self.weights.bend_n_m,
                attach: self.weights.attach_n_per_m,
            },
            force: ForceModel {
                gravity: Vec3(self.force.gravity_m_per_s2),
                wind: Wind {
                    amplitude: Vec3(self.force.wind.amplitude_n),
                    frequency: self.force.wind.frequency_hz,
                    phase: self.force.wind.phase_rad,
                },
            },
            h: self.time_step_s,
            steps: self.steps,
            solver,
        })
    }

    /// Rest positions with the configured uniform initial velocity.
    pub fn initial_state(&self, spec: &SceneSpec<f64>) -> SimState<f64> {
        let mut s = SimState::at_rest(spec.mesh.positions());
        for i in 0..spec.mesh.num_vertices() {
            Vec3(self.initial_velocity_m_per_s).write(&mut s.v, i);
        }
        s
    }

    /// The same scene on an `n × n` grid of physical side `side_m`.
    pub fn with_resolution(&self, n: usize, side_m: f64) -> Result<Self, AppError> {
        let mut cfg = self.clone();
        match &mut cfg.mesh {
            MeshConfig::Grid { nx, ny, spacing_m, .. } => {
                *nx = n;
                *ny = n;
                *spacing_m = side_m / (n - 1) as f64;
            }
            MeshConfig::Obj { .. } => return Err(invalid("mesh", "resolution changes require a grid mesh")),
        }
        if cfg.attachments.iter().any(|a| a.vertex.is_some()) {
            return Err(invalid("attachments", "resolution changes require `grid_uv` attachments"));
        }
        Ok(cfg)
    }
}

fn rotation(deg: [f64; 3]) -> crate::geom::Mat3<f64> {
    use crate::geom::Mat3;
    let [ax, ay, az] = deg.map(f64::to_radians);
    let rx = Mat3([[1.0, 0.0, 0.0], [0.0, ax.cos(), -ax.sin()], [0.0, ax.sin(), ax.cos()]]);
    let ry = Mat3([[ay.cos(), 0.0, ay.sin()], [0.0, 1.0, 0.0], [-ay.sin(), 0.0, ay.cos()]]);
    let rz = Mat3([[az.cos(), -az.sin(), 0.0], [az.sin(), az.cos(), 0.0], [0.0, 0.0, 1.0]]);
    rz.mul_mat(&ry).mul_mat(&rx)
}
