//! Label-free comparison of mixture centers.

use alloc::vec::Vec;

use crate::math;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return alloc::vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Assignment `perm` (a[i] ↔ b[perm[i]]) minimising the summed Euclidean distance,
/// by exhaustive search. Intended for K ≤ 8.
pub fn optimal_matching(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<usize> {
    assert_eq!(a.len(), b.len());
    assert!(a.len() <= 8, "exhaustive matching is limited to 8 centers");
    let mut best = (f64::INFINITY, Vec::new());
    for p in permutations(a.len()) {
        let cost: f64 = p.iter().enumerate().map(|(i, &j)| dist(&a[i], &b[j])).sum();
        if cost < best.0 {
            best = (cost, p);
        }
    }
    best.1
}

/// Per-center distances under the optimal matching, in the order of `a`.
pub fn matched_distances(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let p = optimal_matching(a, b);
    p.iter().enumerate().map(|(i, &j)| dist(&a[i], &b[j])).collect()
}

/// Largest matched-center distance.
pub fn matched_center_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    matched_distances(a, b).into_iter().fold(0.0, f64::max)
}
