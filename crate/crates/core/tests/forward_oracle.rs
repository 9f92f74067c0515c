mod common;

use common::scenes::*;
use common::*;
use diffcloth::contact::{ContactCase, Obstacle};
use diffcloth::energy::{project_all, Attachment, Trajectory};
use diffcloth::forward::*;
use diffcloth::geom::Vec3;
use diffcloth::mesh::make_grid;

fn free_spec(nx: usize) -> SceneSpec<f64> {
    base_spec(make_grid(nx, nx, 0.05).unwrap())
}

#[test]
fn rest_shape_without_forces_is_a_fixed_point() {
    let mut spec = free_spec(5);
    spec.force = ForceModel::gravity_only(0.0);
    let scene = Scene::new(spec).unwrap();
    let s0 = scene.initial_state();
    let (s1, tape) = scene.step(&s0).unwrap();
    assert!(tape.converged);
    assert!(max_abs_diff(&s1.x, &s0.x) < 1e-10);
    assert!(norm_inf(&s1.v) < 1e-10);
}

#[test]
fn free_fall_matches_discrete_ballistics() {
    let scene = Scene::new(free_spec(4)).unwrap();
    let mut s = scene.initial_state();
    let g = -9.81;
    let h = 0.01;
    let (mut xz, mut vz) = (0.0, 0.0);
    for n in 0..20 {
        let (next, tape) = scene.step(&s).unwrap();
        vz += h * g;
        xz += h * vz;
        for i in 0..16 {
            assert!((next.v[3 * i + 2] - vz).abs() < 1e-10, "step {n}");
            assert!((next.x[3 * i + 2] - xz).abs() < 1e-10);
            assert_eq!(next.x[3 * i + 2], tape.x_prev[3 * i + 2] + h * next.v[3 * i + 2]);
        }
        s = next;
    }
}

#[test]
fn contact_free_solve_matches_direct_solve() {
    let scene = Scene::new(free_spec(6)).unwrap();
    let s0 = scene.initial_state();
    let proj = project_all(&scene.constraints, &s0.x, 0.01).unwrap();
    let b = scene.velocity_rhs(&s0, &proj);
    let (v, report) = scene.global_step_velocity(&b, &diffcloth::contact::ContactSet::empty(36), &s0.v).unwrap();
    assert_eq!(report.iterations, 0);
    let dense = scene.system_matrix().to_dense();
    let direct = dense_solve(&dense, &b);
    assert!(max_abs_diff(&v, &direct) < 1e-12);
}

#[test]
fn resting_nodes_carry_their_weight() {
    let mut spec = slope(0.0, 0.5, 2, 2);
    spec.solver.forward_tolerance = 1e-12;
    let scene = Scene::new(spec).unwrap();
    let (_, tape) = scene.step(&scene.initial_state()).unwrap();
    assert_eq!(tape.contact_set.len(), 4);
    for (c, s) in tape.contact_set.contacts.iter().zip(&tape.contact_solution) {
        assert!(s.u[2].abs() < 1e-8);
        let m = scene.mass.node(c.node);
        assert!((s.r_hat[2] - m * 9.81 * 0.01).abs() < 1e-8);
        assert_eq!(s.case, ContactCase::Stick);
    }
}

#[test]
fn single_free_node_contact_converges_in_one_iteration() {
    // attach weight only couples a node to a target, so the contact node has C = 0
    let mut spec = slope(0.0, 0.5, 2, 2);
    spec.weights.stretch = 1e-12;
    spec.weights.bend = 1e-12;
    let scene = Scene::new(spec).unwrap();
    let s0 = scene.initial_state();
    let contacts = scene.detector.detect(&s0.x, &scene.mass);
    let proj = project_all(&scene.constraints, &s0.x, 0.01).unwrap();
    let b = scene.velocity_rhs(&s0, &proj);
    let (v, report) = scene.global_step_velocity(&b, &contacts, &s0.v).unwrap();
    assert!(report.iterations <= 2);
    assert!(norm_inf(&v) < 1e-9);
}

#[test]
fn cloth_on_plane_satisfies_velocity_equation() {
    let mut spec = slope(0.0, 0.3, 12, 12);
    spec.force.wind = Wind { amplitude: Vec3::new(2e-4, 1e-4, 0.0), frequency: 1.0, phase: 0.3 };
    spec.attachments = vec![Attachment { vertex: 0, trajectory: Trajectory::Fixed(Vec3::new(0.0, 0.0, 0.03)) }];
    let scene = Scene::new(spec).unwrap();
    let mut s = scene.initial_state();
    for _ in 0..5 {
        let (next, tape) = scene.step(&s).unwrap();
        let prev = SimState { x: tape.x_prev.clone(), v: tape.v_prev.clone(), t: tape.t_next - tape.h };
        let b = scene.velocity_rhs(&prev, &tape.projections);
        let r = scene.step_residual(&tape);
        assert!(tape.converged && tape.contact_converged, "{} {} {} {}", tape.converged, tape.contact_converged, tape.outer_iterations, tape.contact_iterations);
        assert!(norm_inf(&r) <= 1e-6 * norm_inf(&b), "{} vs {}", norm_inf(&r), norm_inf(&b));
        s = next;
    }
}

#[test]
fn surrogate_is_non_increasing_without_contact() {
    let mut spec = free_spec(8);
    spec.attachments = vec![
        Attachment { vertex: 56, trajectory: Trajectory::Fixed(Vec3::new(0.0, 0.35, 0.0)) },
        Attachment { vertex: 63, trajectory: Trajectory::Fixed(Vec3::new(0.35, 0.35, 0.0)) },
    ];
    spec.force.wind = Wind { amplitude: Vec3::new(0.0, 0.0, 0.05), frequency: 2.0, phase: 0.0 };
    spec.solver.record_surrogate = true;
    let scene = Scene::new(spec).unwrap();
    let mut s = scene.initial_state();
    for _ in 0..20 {
        let (next, tape) = scene.step(&s).unwrap();
        assert!(tape.surrogate_trace.len() >= 2);
        for w in tape.surrogate_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        s = next;
    }
}

#[test]
fn stepping_is_deterministic() {
    let mut spec = slope(0.3, 0.2, 6, 4);
    spec.obstacles.push(Obstacle::sphere(Vec3::new(0.05, 0.03, -0.2), 0.2, diffcloth::contact::Side::Exterior, 0.4).unwrap());
    let scene = Scene::new(spec).unwrap();
    let a = scene.simulate(&scene.initial_state(), 5).unwrap();
    let b = scene.simulate(&scene.initial_state(), 5).unwrap();
    for (ta, tb) in a.tapes.iter().zip(&b.tapes) {
        assert_eq!(ta.x_next, tb.x_next);
        assert_eq!(ta.v_next, tb.v_next);
        assert_eq!(ta.contact_solution, tb.contact_solution);
    }
}

#[test]
fn wind_force_derivatives_match_finite_differences() {
    let w: Wind<f64> = Wind { amplitude: Vec3::new(0.3, -0.2, 0.1), frequency: 1.7, phase: 0.4 };
    let t: f64 = 0.37;
    let (s, df, dphi) = w.force_derivatives(t);
    let eps = 1e-6;
    let mut wp = w;
    let mut wm = w;
    wp.frequency += eps;
    wm.frequency -= eps;
    let fd_f = (wp.force(t) - wm.force(t)) * (0.5 / eps);
    let mut wp = w;
    let mut wm = w;
    wp.phase += eps;
    wm.phase -= eps;
    let fd_phi = (wp.force(t) - wm.force(t)) * (0.5 / eps);
    let mut wp = w;
    wp.amplitude.0[0] += eps;
    let fd_a = (wp.force(t) - w.force(t))[0] / eps;
    assert!((fd_f - df).norm() <= 1e-6 * df.norm());
    assert!((fd_phi - dphi).norm() <= 1e-6 * dphi.norm());
    assert!((fd_a - s).abs() <= 1e-6);
    let calm = Wind::calm();
    assert_eq!(calm.force(0.3), Vec3::zero());
    let zero_sin = Wind { amplitude: Vec3::new(1.0, 1.0, 1.0), frequency: 0.5, phase: 0.0 };
    assert!(zero_sin.force(2.0).norm() < 1e-12);
}

#[test]
fn slope_sticks_below_friction_angle() {
    let spec = slope(20f64.to_radians(), 0.5, 8, 3);
    let scene = Scene::new(spec).unwrap();
    let s0 = scene.initial_state();
    let roll = scene.simulate(&s0, 100).unwrap();
    let last = roll.states.last().unwrap();
    assert!(max_abs_diff(&last.x, &s0.x) <= 1e-4);
}

#[test]
fn slope_slides_with_coulomb_acceleration() {
    let theta = 30f64.to_radians();
    let spec = slope(theta, 0.5, 8, 3);
    let scene = Scene::new(spec).unwrap();
    let roll = scene.simulate(&scene.initial_state(), 100).unwrap();
    let expected = 9.81 * (theta.sin() - 0.5 * theta.cos());
    let dir = Vec3::new(theta.cos(), 0.0, -theta.sin());
    let speed = |s: &SimState<f64>| Vec3::read(&s.v, 0).dot(dir);
    let n = roll.states.len();
    let a: f64 = (speed(&roll.states[n - 1]) - speed(&roll.states[n - 11])) / (10.0 * 0.01);
    assert!((a - expected).abs() <= 0.02 * expected, "{a} vs {expected}");
}
