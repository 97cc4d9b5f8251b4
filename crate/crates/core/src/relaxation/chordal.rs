//! Chordal extension of the line graph and max-determinant completion.
//!
//! A Hermitian matrix specified on a chordal pattern has a PSD completion
//! exactly when every maximal clique of the pattern is PSD.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct ChordalPlan {
    pub n: usize,
    /// maximal cliques, each sorted
    pub cliques: Vec<Vec<usize>>,
    /// perfect elimination order
    pub order: Vec<usize>,
    /// neighbours eliminated later, per vertex
    pub higher: Vec<Vec<usize>>,
}

/// Minimum-degree chordal extension of the graph on `n` vertices.
pub fn chordal_plan(n: usize, edges: &[(usize, usize)]) -> ChordalPlan {
    let mut adj = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut higher = vec![Vec::new(); n];
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !eliminated[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .expect("vertices remain");
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for (k, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[k + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
            adj[a].remove(&v);
        }
        eliminated[v] = true;
        order.push(v);
        higher[v] = nbrs;
    }

    let mut candidates: Vec<Vec<usize>> = order
        .iter()
        .map(|&v| {
            let mut c = higher[v].clone();
            c.push(v);
            c.sort_unstable();
            c
        })
        .collect();
    candidates.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    for c in candidates {
        if !cliques.iter().any(|k| c.iter().all(|x| k.binary_search(x).is_ok())) {
            cliques.push(c);
        }
    }
    cliques.sort();
    ChordalPlan { n, cliques, order, higher }
}

impl ChordalPlan {
    /// Whether `(i, j)` lies in the chordal extension.
    pub fn covered(&self, i: usize, j: usize) -> bool {
        i == j || self.higher[i].contains(&j) || self.higher[j].contains(&i)
    }

    /// Pairs `(i, j)`, `i < j`, of the extension.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> =
            self.higher.iter().enumerate().flat_map(|(v, h)| h.iter().map(move |&u| (v.min(u), v.max(u)))).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Fills every position outside the pattern of `m` so that the result has
    /// the largest determinant among PSD completions. Positions in the pattern
    /// are read, the rest overwritten.
    pub fn max_det_complete(&self, m: &mut DMatrix<Complex64>) {
        let mut done: Vec<usize> = Vec::with_capacity(self.n);
        for &v in self.order.iter().rev() {
            let k = &self.higher[v];
            let rest: Vec<usize> = done.iter().copied().filter(|u| !k.contains(u)).collect();
            for &u in &rest {
                m[(v, u)] = Complex64::new(0.0, 0.0);
                m[(u, v)] = Complex64::new(0.0, 0.0);
            }
            if !k.is_empty() && !rest.is_empty() {
                let mkk = DMatrix::from_fn(k.len(), k.len(), |a, b| m[(k[a], k[b])]);
                let coef = DMatrix::from_fn(1, k.len(), |_, b| m[(v, k[b])]) * pseudo_inverse(&mkk);
                for &u in &rest {
                    let val: Complex64 = (0..k.len()).map(|a| coef[(0, a)] * m[(k[a], u)]).sum();
                    m[(v, u)] = val;
                    m[(u, v)] = val.conj();
                }
            }
            done.push(v);
        }
    }
}

fn pseudo_inverse(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let u = svd.u.expect("u computed");
    let vt = svd.v_t.expect("v_t computed");
    let mut s_inv = DMatrix::zeros(a.ncols(), a.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            s_inv[(i, i)] = Complex64::new(1.0 / s, 0.0);
        }
    }
    vt.adjoint() * s_inv * u.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Vec<(usize, usize)> {
        (1..n).map(|i| (i - 1, i)).collect()
    }

    #[test]
    fn path_splits_into_edges() {
        let p = chordal_plan(6, &path(6));
        assert_eq!(p.cliques.len(), 5);
        assert!(p.cliques.iter().all(|c| c.len() == 2));
        assert_eq!(p.pattern(), path(6));
    }

    #[test]
    fn cycle_gets_triangulated() {
        let mut e = path(5);
        e.push((4, 0));
        let p = chordal_plan(5, &e);
        assert_eq!(p.cliques.len(), 3);
        assert!(p.cliques.iter().all(|c| c.len() == 3));
        assert_eq!(p.pattern().len(), 5 + 2);
    }

    #[test]
    fn completion_recovers_rank_one() {
        let n = 6;
        let plan = chordal_plan(n, &path(n));
        let u: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(1.0 + 0.03 * i as f64, -0.1 * i as f64)).collect();
        let full = DMatrix::from_fn(n, n, |i, j| u[i] * u[j].conj());
        let mut m = DMatrix::from_fn(n, n, |i, j| if plan.covered(i, j) { full[(i, j)] } else { Complex64::new(9.0, 9.0) });
        plan.max_det_complete(&mut m);
        assert!((&m - &full).camax() < 1e-12);
    }

    #[test]
    fn completion_of_positive_definite_band_is_positive_definite() {
        let n = 5;
        let plan = chordal_plan(n, &path(n));
        let mut m = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => Complex64::new(2.0, 0.0),
            1 if i < j => Complex64::new(-0.6, 0.6),
            1 => Complex64::new(-0.6, -0.6),
            _ => Complex64::new(0.0, 0.0),
        });
        plan.max_det_complete(&mut m);
        assert!(m.clone().symmetric_eigenvalues().min() > 0.0);
        // the inverse of a max-det completion vanishes off the pattern
        let inv = m.try_inverse().unwrap();
        assert!(inv[(0, 2)].norm() < 1e-12);
        assert!(inv[(0, 4)].norm() < 1e-12);
    }
}
