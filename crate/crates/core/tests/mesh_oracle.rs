mod common;

use std::collections::BTreeSet;

use diffcloth::geom::Vec3;
use diffcloth::mesh::{lumped_mass, make_grid, Hinge, TriMesh};
use proptest::prelude::*;

/// Hinges by comparing every pair of triangles.
fn brute_force_hinges(triangles: &[[usize; 3]]) -> BTreeSet<Hinge> {
    let mut out = BTreeSet::new();
    for (i, a) in triangles.iter().enumerate() {
        for b in &triangles[i + 1..] {
            let shared: Vec<usize> = a.iter().copied().filter(|v| b.contains(v)).collect();
            if shared.len() == 2 {
                let oa = a.iter().copied().find(|v| !shared.contains(v)).unwrap();
                let ob = b.iter().copied().find(|v| !shared.contains(v)).unwrap();
                let edge = [shared[0].min(shared[1]), shared[0].max(shared[1])];
                out.insert(Hinge { edge, opposite: [oa.min(ob), oa.max(ob)] });
            }
        }
    }
    out
}

fn brute_force_edges(triangles: &[[usize; 3]]) -> BTreeSet<[usize; 2]> {
    triangles
        .iter()
        .flat_map(|t| (0..3).map(move |k| [t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3])]))
        .collect()
}

#[test]
fn grid_topology_matches_brute_force() {
    for (nx, ny) in [(2, 2), (3, 5), (7, 4)] {
        let mesh = make_grid(nx, ny, 0.1f64).unwrap();
        let hinges: BTreeSet<Hinge> = mesh.hinges().iter().copied().collect();
        assert_eq!(hinges, brute_force_hinges(&mesh.triangles));
        let edges: BTreeSet<[usize; 2]> = mesh.edges().iter().copied().collect();
        assert_eq!(edges, brute_force_edges(&mesh.triangles));
        // interior edges: horizontal, vertical and one diagonal per cell, minus the boundary
        let cells = (nx - 1) * (ny - 1);
        assert_eq!(mesh.edges().len(), (nx - 1) * ny + nx * (ny - 1) + cells);
        assert_eq!(mesh.hinges().len(), mesh.edges().len() - 2 * (nx - 1) - 2 * (ny - 1));
    }
}

#[test]
fn disjoint_union_keeps_components_separate() {
    let a = make_grid(3, 3, 0.1f64).unwrap();
    let b = make_grid(4, 2, 0.1f64).unwrap();
    let u = a.disjoint_union(&b).unwrap();
    assert_eq!(u.num_vertices(), 9 + 8);
    assert_eq!(u.hinges().len(), a.hinges().len() + b.hinges().len());
    assert!((u.total_area() - a.total_area() - b.total_area()).abs() < 1e-12);
    assert!(u.edges().iter().all(|e| (e[0] < 9) == (e[1] < 9)));
}

fn relabel(mesh: &TriMesh<f64>, perm: &[usize], tri_order: &[usize], rotate: &[usize]) -> TriMesh<f64> {
    let mut vertices = vec![Vec3::zero(); perm.len()];
    for (old, &new) in perm.iter().enumerate() {
        vertices[new] = mesh.vertices[old];
    }
    let triangles = tri_order
        .iter()
        .zip(rotate)
        .map(|(&t, &r)| {
            let tri = mesh.triangles[t].map(|v| perm[v]);
            [tri[r % 3], tri[(r + 1) % 3], tri[(r + 2) % 3]]
        })
        .collect();
    TriMesh::new(vertices, triangles).unwrap()
}

proptest! {
    #[test]
    fn topology_is_invariant_under_relabeling(
        nx in 2usize..6,
        ny in 2usize..6,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mesh = make_grid(nx, ny, 0.05f64).unwrap();
        let mut r = common::rng(seed);
        let mut perm: Vec<usize> = (0..mesh.num_vertices()).collect();
        perm.shuffle(&mut r);
        let mut order: Vec<usize> = (0..mesh.triangles.len()).collect();
        order.shuffle(&mut r);
        let rotate: Vec<usize> = order.iter().map(|t| (t * 7 + seed as usize) % 3).collect();
        let other = relabel(&mesh, &perm, &order, &rotate);

        let mapped: BTreeSet<Hinge> = mesh
            .hinges()
            .iter()
            .map(|h| {
                let e = h.edge.map(|v| perm[v]);
                let o = h.opposite.map(|v| perm[v]);
                Hinge { edge: [e[0].min(e[1]), e[0].max(e[1])], opposite: [o[0].min(o[1]), o[0].max(o[1])] }
            })
            .collect();
        let got: BTreeSet<Hinge> = other.hinges().iter().copied().collect();
        prop_assert_eq!(got, mapped);
        prop_assert_eq!(other.edges().len(), mesh.edges().len());
        prop_assert!((other.total_area() - mesh.total_area()).abs() < 1e-12);

        let m = lumped_mass(&mesh, 0.3);
        let mo = lumped_mass(&other, 0.3);
        for (old, &new) in perm.iter().enumerate() {
            prop_assert!((m.node(old) - mo.node(new)).abs() < 1e-15);
        }
    }

    #[test]
    fn lumped_mass_sums_to_density_times_area(nx in 2usize..8, ny in 2usize..8, rho in 0.01f64..5.0) {
        let mesh = make_grid(nx, ny, 0.07f64).unwrap();
        let m = lumped_mass(&mesh, rho);
        prop_assert!((m.total() - rho * mesh.total_area()).abs() <= 1e-12 * m.total());
        prop_assert!(m.node_masses().iter().all(|&x| x > 0.0));
    }
}
