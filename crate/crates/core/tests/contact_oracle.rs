mod common;

use common::*;
use diffcloth::contact::*;
use diffcloth::geom::{Mat3, Vec3};
use diffcloth::mesh::{lumped_mass, make_grid};
use proptest::prelude::*;
use rand::Rng;

fn no_self() -> SelfCollision<f64> {
    SelfCollision { enabled: false, radius: 0.1, friction: 0.0 }
}

#[test]
fn sphere_detection_matches_brute_force_scan() {
    let mesh = make_grid::<f64>(5, 2, 0.1).unwrap();
    let mass = lumped_mass(&mesh, 1.0);
    let sphere = Obstacle::sphere(Vec3::zero(), 1.0, Side::Exterior, 0.4).unwrap();
    let det = Detector::new(&mesh, vec![sphere.clone()], no_self(), 1e-3).unwrap();
    let mut r = rng(11);
    for _ in 0..50 {
        let m = mesh.num_vertices();
        let mut x = vec![0.0; 3 * m];
        for i in 0..m {
            let dir = Vec3::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5, r.random::<f64>() - 0.5).normalized();
            let rad = 1.0 + 0.02 * (r.random::<f64>() - 0.5);
            (dir * rad).write(&mut x, i);
        }
        let set = det.detect(&x, &mass);
        let expected: Vec<usize> = (0..m).filter(|&i| sphere.signed_distance(Vec3::read(&x, i)) <= 1e-3).collect();
        let got: Vec<usize> = set.contacts.iter().map(|c| c.node).collect();
        assert_eq!(got, expected);
        for c in &set.contacts {
            let p = Vec3::read(&x, c.node);
            assert!((c.normal() - p.normalized()).norm() < 1e-14);
        }
    }
}

#[test]
fn interior_sphere_normal_points_inward() {
    let o = Obstacle::sphere(Vec3::zero(), 1.0, Side::Interior, 0.1).unwrap();
    let p = Vec3::new(0.0, 0.0, -0.9995);
    assert!(o.signed_distance(p) < 1e-3);
    let (n, _) = o.normal_at(p);
    assert!((n - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-14);
}

#[test]
fn normal_jacobians_match_finite_differences() {
    let eps = 1e-6;
    for side in [Side::Exterior, Side::Interior] {
        let o = Obstacle::<f64>::sphere(Vec3::new(0.1, -0.2, 0.3), 0.7, side, 0.1).unwrap();
        let p = Vec3::new(0.5, 0.2, -0.1);
        let (_, dn) = o.normal_at(p);
        for k in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp.0[k] += eps;
            pm.0[k] -= eps;
            let fd = (o.normal_at(pp).0 - o.normal_at(pm).0) * (0.5 / eps);
            for a in 0..3 {
                assert!((fd[a] - dn.0[a][k]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn frame_derivatives_match_finite_differences() {
    let eps = 1e-6;
    for n in [Vec3::new(0.2, 0.3, 0.9).normalized(), Vec3::new(0.95, 0.1, 0.2).normalized()] {
        let d = frame_derivatives(n);
        for k in 0..3 {
            let mut np = n;
            let mut nm = n;
            np.0[k] += eps;
            nm.0[k] -= eps;
            let fd = frame_from_normal(np).sub(&frame_from_normal(nm)).scale(0.5 / eps);
            assert!(fd.sub(&d[k]).max_abs() < 1e-8);
        }
    }
}

#[test]
fn self_collision_pairs_match_brute_force_scan() {
    let a = make_grid::<f64>(6, 6, 0.05).unwrap();
    let b = a.clone().map_vertices(|v| v + Vec3::new(0.012, 0.017, 0.02));
    let mesh = a.disjoint_union(&b).unwrap();
    let sc = SelfCollision { enabled: true, radius: 0.06, friction: 0.2 };
    let det = Detector::new(&mesh, vec![], sc, 1e-3).unwrap();
    let mut r = rng(5);
    let x: Vec<f64> = mesh.positions().iter().map(|v| v + 0.01 * (r.random::<f64>() - 0.5)).collect();
    let m = mesh.num_vertices();
    let mut brute = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            if !det.is_excluded(i, j) && (Vec3::read(&x, i) - Vec3::read(&x, j)).norm() < 0.06 {
                brute.push((i, j));
            }
        }
    }
    assert!(!brute.is_empty());
    assert_eq!(det.close_pairs(&x), brute);

    let mass = lumped_mass(&mesh, 0.2);
    let set = det.detect(&x, &mass);
    let mut seen = std::collections::HashSet::new();
    for c in &set.contacts {
        assert!(seen.insert(c.node));
        let b = c.partner().unwrap();
        assert!(seen.insert(b));
        let n = (Vec3::read(&x, c.node) - Vec3::read(&x, b)).normalized();
        assert!((c.normal() - n).norm() < 1e-14);
        let (ma, mb) = (mass.node(c.node), mass.node(b));
        assert!((c.effective_mass - ma * mb / (ma + mb)).abs() < 1e-15);
    }
}

#[test]
fn graph_neighbours_are_excluded() {
    let mesh = make_grid::<f64>(4, 4, 0.1).unwrap();
    let det = Detector::new(&mesh, vec![], SelfCollision { enabled: true, radius: 0.5, friction: 0.0 }, 1e-3).unwrap();
    // 0 -> 1 -> 2 is distance 2 along the bottom row; 0 -> 3 is distance 3
    assert!(det.is_excluded(0, 1));
    assert!(det.is_excluded(0, 2));
    assert!(!det.is_excluded(0, 3));
}

#[test]
fn contact_jacobian_rows_are_orthonormal() {
    let a = make_grid::<f64>(5, 5, 0.05).unwrap();
    let b = a.clone().map_vertices(|v| v + Vec3::new(0.3, 0.0, 0.02));
    let mesh = a.disjoint_union(&b).unwrap();
    let mass = lumped_mass(&mesh, 0.2);
    let sphere = Obstacle::sphere(Vec3::new(0.1, 0.1, -0.5), 0.5, Side::Exterior, 0.3).unwrap();
    let plane = Obstacle::half_space(Vec3::new(0.0, 0.0, 0.005), Vec3::new(0.1, 0.0, 1.0), 0.3).unwrap();
    let det = Detector::new(&mesh, vec![sphere, plane], SelfCollision { enabled: true, radius: 0.08, friction: 0.1 }, 1e-3).unwrap();
    let mut x = mesh.positions();
    // fold the second sheet back over the first to create node-node proximity
    let m = mesh.num_vertices();
    for i in m / 2..m {
        x[3 * i] -= 0.2;
        x[3 * i + 2] = 0.05;
    }
    let set = det.detect(&x, &mass);
    let kinds: Vec<_> = set.contacts.iter().map(|c| c.partner().is_some()).collect();
    assert!(kinds.contains(&true) && kinds.contains(&false));
    let j = &set.jacobian;
    let jjt = j.matmul(&j.transpose()).to_dense();
    for (ci, c) in set.contacts.iter().enumerate() {
        let scale = if c.partner().is_some() { 2.0 } else { 1.0 };
        for a in 0..3 {
            for b in 0..3 {
                let expected = if a == b { scale } else { 0.0 };
                assert!((jjt[3 * ci + a][3 * ci + b] - expected).abs() < 1e-12);
            }
        }
    }
    for w in set.contacts.windows(2) {
        assert!((w[0].partner().is_some(), w[0].node) <= (w[1].partner().is_some(), w[1].node));
    }
}

#[test]
fn slip_jacobians_match_finite_differences() {
    let mu = 0.4;
    let r = Vec3::new(-0.3, 0.1, 0.8);
    let u = Vec3::new(0.7, -0.2, 0.05);
    let (cr, cu) = local_case_jacobians(ContactCase::Slip, r, u, mu).unwrap();
    let eps = 1e-6;
    let check = |m: &Mat3<f64>, wrt_r: bool| {
        for k in 0..3 {
            let (mut rp, mut rm, mut up, mut um) = (r, r, u, u);
            if wrt_r {
                rp.0[k] += eps;
                rm.0[k] -= eps;
            } else {
                up.0[k] += eps;
                um.0[k] -= eps;
            }
            let fd = (case_residual(ContactCase::Slip, rp, up, mu) - case_residual(ContactCase::Slip, rm, um, mu)) * (0.5 / eps);
            for a in 0..3 {
                let exact = m.0[a][k];
                assert!((fd[a] - exact).abs() <= 1e-6 * exact.abs().max(1e-3));
            }
        }
    };
    check(&cr, true);
    check(&cu, false);
}

#[test]
fn impulse_sensitivity_matches_finite_differences_of_projection() {
    let mu: f64 = 0.5;
    let m_eff = 0.7;
    for d in [Vec3::new(1.0, 0.3, -1.0), Vec3::new(0.1, -0.05, -1.0), Vec3::new(0.2, 0.1, 0.4)] {
        let (r, case) = enforce_signorini_coulomb(d, mu);
        let s = impulse_sensitivity(case, r, d, mu, m_eff).unwrap();
        let eps = 1e-7;
        for k in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp.0[k] += eps;
            dm.0[k] -= eps;
            let fd = (enforce_signorini_coulomb(dp, mu).0 - enforce_signorini_coulomb(dm, mu).0) * (0.5 / eps);
            for a in 0..3 {
                assert!((fd[a] - s.0[a][k]).abs() < 1e-6, "case {case:?}");
            }
        }
    }
}

#[test]
fn branch_impulse_extends_the_selected_case() {
    let mu: f64 = 0.5;
    for d in [Vec3::new(1.0, 0.3, -1.0), Vec3::new(0.1, -0.05, -1.0), Vec3::new(0.2, 0.1, 0.4), Vec3::new(0.3, -0.4, 0.2)] {
        let (r, case) = enforce_signorini_coulomb(d, mu);
        assert_eq!(branch_impulse(case, d, mu).unwrap(), r);
        let natural = impulse_sensitivity(case, r, d, mu, 0.7).unwrap();
        let branch = branch_sensitivity(case, d, mu).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!((natural.0[a][b] - branch.0[a][b]).abs() < 1e-12, "case {case:?}");
            }
        }
        for other in [ContactCase::TakeOff, ContactCase::Stick, ContactCase::Slip] {
            let s = branch_sensitivity(other, d, mu).unwrap();
            let eps = 1e-7;
            for k in 0..3 {
                let mut dp = d;
                let mut dm = d;
                dp.0[k] += eps;
                dm.0[k] -= eps;
                let fd = (branch_impulse(other, dp, mu).unwrap() - branch_impulse(other, dm, mu).unwrap()) * (0.5 / eps);
                for a in 0..3 {
                    assert!((fd[a] - s.0[a][k]).abs() < 1e-6);
                }
            }
        }
    }
    assert!(branch_impulse(ContactCase::Slip, Vec3::new(0.0, 0.0, -1.0), mu).is_none());
}

fn local_d() -> impl Strategy<Value = Vec3<f64>> {
    prop::array::uniform3(-2.0f64..2.0).prop_map(|a| Vec3::new(a[0], a[1], a[2]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_satisfies_complementarity(d in local_d(), mu in 0.0f64..1.5, m in 0.01f64..3.0) {
        let (r, case) = enforce_signorini_coulomb(d, mu);
        let u = (d + r) * (1.0 / m);
        let rt = (r[0] * r[0] + r[1] * r[1]).sqrt();
        let tol = 1e-10;
        match case {
            ContactCase::TakeOff => prop_assert!(r.norm() == 0.0 && u[2] >= 0.0),
            ContactCase::Stick => prop_assert!(u.norm() <= tol && rt <= mu * r[2] + tol && r[2] >= 0.0),
            ContactCase::Slip => {
                prop_assert!(u[2].abs() <= tol);
                prop_assert!((rt - mu * r[2]).abs() <= tol);
                prop_assert!(u[0] * r[0] + u[1] * r[1] <= tol);
            }
        }
    }

    #[test]
    fn projection_is_positively_homogeneous(d in local_d(), mu in 0.0f64..1.5, s in 0.01f64..100.0) {
        let (r, case) = enforce_signorini_coulomb(d, mu);
        let (rs, cs) = enforce_signorini_coulomb(d * s, mu);
        prop_assert_eq!(case, cs);
        prop_assert!((rs - r * s).norm() <= 1e-12 * (1.0 + rs.norm()));
    }

    #[test]
    fn frames_are_orthonormal(n in prop::array::uniform3(-1.0f64..1.0)) {
        let n = Vec3::new(n[0], n[1], n[2]);
        prop_assume!(n.norm() > 1e-3);
        let r = frame_from_normal(n.normalized());
        let rtr = r.transpose().mul_mat(&r);
        prop_assert!(rtr.sub(&Mat3::identity()).max_abs() < 1e-12);
    }
}
