//! Fill-reducing orderings.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::real::Real;

use super::SparseMatrix;

/// Minimum-degree ordering of an undirected graph given by adjacency lists
/// (self loops ignored). Returns `order[k]` = vertex eliminated at step `k`.
///
/// Works on the explicit elimination graph, which is fine for the mesh sizes
/// handled here (a few thousand nodes).
pub fn minimum_degree(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut adj: Vec<Vec<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(v, nb)| {
            let mut a: Vec<usize> = nb.iter().copied().filter(|&u| u != v).collect();
            a.sort_unstable();
            a.dedup();
            a
        })
        .collect();
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut order = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            merged.clear();
            let au = &adj[u];
            let (mut p, mut q) = (0, 0);
            while p < au.len() || q < nbrs.len() {
                let a = au.get(p).copied().unwrap_or(usize::MAX);
                let b = nbrs.get(q).copied().unwrap_or(usize::MAX);
                let next = if a < b {
                    p += 1;
                    a
                } else if b < a {
                    q += 1;
                    b
                } else {
                    p += 1;
                    q += 1;
                    a
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    order
}

/// Symmetric fill-reducing permutation for a square matrix, computed on the
/// block graph of `A + Aᵀ` with `block` consecutive rows per node, then expanded.
/// Returns `perm[new] = old`.
pub fn block_minimum_degree<T: Real>(a: &SparseMatrix<T>, block: usize) -> Vec<usize> {
    let n = a.nrows();
    let bs = if block > 0 && n.is_multiple_of(block) { block } else { 1 };
    let nb = n / bs;
    let mut adjacency = vec![Vec::new(); nb];
    for (i, j, _) in a.triplets() {
        let (bi, bj) = (i / bs, j / bs);
        if bi != bj {
            adjacency[bi].push(bj);
            adjacency[bj].push(bi);
        }
    }
    minimum_degree(&adjacency)
        .into_iter()
        .flat_map(|b| (0..bs).map(move |r| b * bs + r))
        .collect()
}
