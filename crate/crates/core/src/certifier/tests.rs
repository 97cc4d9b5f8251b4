use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::cases;
use crate::solver::SolveDiagnostics;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// A solution whose `W` is `v v^H` on the given support (diagonal always
/// included) and whose injections close the AC equations at `v`.
fn solution_at(case: &NetworkCase, v: &[Complex64], full: bool) -> LiftedSolution {
    let n = case.n_buses();
    let mut w = BTreeMap::new();
    for i in 0..n {
        w.insert((i, i), c(v[i].norm_sqr(), 0.0));
    }
    if full {
        for j in 0..n {
            for i in 0..j {
                w.insert((i, j), v[i] * v[j].conj());
            }
        }
    } else {
        for k in 0..case.branches.len() {
            let (a, b) = case.branch_ends(k);
            let (i, j) = (a.min(b), a.max(b));
            w.insert((i, j), v[i] * v[j].conj());
        }
    }
    let flows = branch_flows(case, v);
    let mut s: Vec<Complex64> = (0..n).map(|i| c(case.buses[i].gs, -case.buses[i].bs) * v[i].norm_sqr()).collect();
    for (k, &(sf, st)) in flows.iter().enumerate() {
        let (f, t) = case.branch_ends(k);
        s[f] += sf;
        s[t] += st;
    }
    let gens = case.gens_by_bus();
    let mut pg = vec![0.0; case.generators.len()];
    let mut qg = vec![0.0; case.generators.len()];
    for i in 0..n {
        if let Some(&g) = gens[i].first() {
            pg[g] = s[i].re + case.buses[i].pd;
            qg[g] = s[i].im + case.buses[i].qd;
        }
    }
    LiftedSolution {
        case: case.name.clone(),
        kind: if full { RelaxationKind::Sdr } else { RelaxationKind::Socr },
        n,
        status: SolveStatus::Optimal,
        objective: 0.0,
        w,
        v: None,
        pg,
        qg,
        p_inj: s.iter().map(|z| z.re).collect(),
        q_inj: s.iter().map(|z| z.im).collect(),
        flow_from: flows.iter().map(|f| f.0).collect(),
        flow_to: flows.iter().map(|f| f.1).collect(),
        diagnostics: SolveDiagnostics::default(),
    }
}

fn set_w(sol: &mut LiftedSolution, i: usize, j: usize, z: Complex64) {
    if i <= j {
        sol.w.insert((i, j), z);
    } else {
        sol.w.insert((j, i), z.conj());
    }
}

#[test]
fn outer_product_is_rank_one() {
    let v = [c(1.0, 0.0), Complex64::from_polar(0.98, -0.1)];
    let cert = rank1_certificate(&outer(&v), &Tolerances::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::Exact);
    let d = cert.dense.unwrap();
    assert!(d.ratio < 1e-12);
    assert_eq!(d.psd_consistent, Some(true));
    assert!(d.eigenvalues[0] >= d.eigenvalues[1]);
}

#[test]
fn identity_is_not_rank_one() {
    let w = DMatrix::<Complex64>::identity(3, 3);
    let cert = rank1_certificate(&w, &Tolerances::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::NotCertified);
    assert!((cert.dense.as_ref().unwrap().ratio - 1.0).abs() < 1e-12);
    assert_eq!(cert.dense.unwrap().psd_consistent, None);
}

#[test]
fn negative_eigenvalue_counts_toward_ratio() {
    // rank one plus a large negative direction
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0, 0.0), c(-0.5, 0.0)]));
    let cert = rank1_certificate(&w, &Tolerances::default()).unwrap();
    assert_eq!(cert.verdict, Verdict::NotCertified);
    assert!((cert.dense.unwrap().ratio - 0.5).abs() < 1e-12);
}

#[test]
fn rank_test_rejects_bad_input() {
    let tol = Tolerances::default();
    assert_eq!(rank1_certificate(&DMatrix::zeros(2, 2), &tol).unwrap_err(), CertError::ZeroMatrix);
    let mut w = DMatrix::<Complex64>::identity(2, 2);
    w[(0, 1)] = c(0.5, 0.0);
    assert!(matches!(rank1_certificate(&w, &tol), Err(CertError::NotHermitian { .. })));
    assert!(matches!(rank1_certificate(&DMatrix::zeros(2, 3), &tol), Err(CertError::NotSquare { .. })));
    let bad = Tolerances { eps_rank: 0.0, ..tol };
    assert!(matches!(rank1_certificate(&w, &bad), Err(CertError::BadTolerance { name: "eps_rank", .. })));
}

#[test]
fn tightness_residual_arithmetic() {
    let case = cases::two_bus();
    let mut sol = solution_at(&case, &[c(1.0, 0.0), c(1.0, 0.0)], false);
    let tol = Tolerances::default();
    let r = tightness_check(&sol, &case, &tol).unwrap();
    assert_eq!(r.max, 0.0);
    assert!(r.pass);
    set_w(&mut sol, 0, 1, c(0.99, 0.0));
    let r = tightness_check(&sol, &case, &tol).unwrap();
    assert!((r.max - 0.0199).abs() < 1e-12);
    assert_eq!(r.argmax, Some(0));
    assert!(!r.pass);
}

#[test]
fn tightness_needs_every_line() {
    let case = cases::two_bus();
    let mut sol = solution_at(&case, &[c(1.0, 0.0), c(1.0, 0.0)], false);
    sol.w.remove(&(0, 1));
    assert_eq!(
        tightness_check(&sol, &case, &Tolerances::default()).unwrap_err(),
        CertError::MissingEntry { branch: 0, from: 0, to: 1 }
    );
}

#[test]
fn wrap_maps_into_half_open_interval() {
    assert_eq!(wrap_angle(PI), PI);
    assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
    assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
    assert!((wrap_angle(-0.1) + 0.1).abs() < 1e-15);
}

fn triangle_basis(case: &NetworkCase) -> CycleBasis {
    let g = PowerGraph::from_case(case);
    fundamental_cycles(&g, &spanning_tree(&g).unwrap())
}

#[test]
fn triangle_angles_that_close() {
    let case = cases::triangle();
    let mut sol = solution_at(&case, &[c(1.0, 0.0); 3], false);
    set_w(&mut sol, 0, 1, Complex64::from_polar(1.0, 0.1));
    set_w(&mut sol, 1, 2, Complex64::from_polar(1.0, 0.2));
    set_w(&mut sol, 2, 0, Complex64::from_polar(1.0, -0.3));
    let r = cycle_check(&sol, &case, &triangle_basis(&case), &Tolerances::default()).unwrap();
    assert_eq!(r.residuals.len(), 1);
    assert!(r.max < 1e-12);
    assert!(r.pass);

    set_w(&mut sol, 2, 0, Complex64::from_polar(1.0, -0.25));
    let r = cycle_check(&sol, &case, &triangle_basis(&case), &Tolerances::default()).unwrap();
    assert!((r.max - 0.05).abs() < 1e-12);
    assert!(!r.pass);
}

#[test]
fn zero_cycle_entry_is_not_certified() {
    let case = cases::triangle();
    let mut sol = solution_at(&case, &[c(1.0, 0.0); 3], false);
    set_w(&mut sol, 1, 2, c(0.0, 0.0));
    let r = cycle_check(&sol, &case, &triangle_basis(&case), &Tolerances::default()).unwrap();
    assert!(!r.pass);
    assert_eq!(r.residuals, vec![None]);
    assert!(r.diagnostic.unwrap().contains("undefined"));
    assert!(r.max.is_finite());
}

#[test]
fn radial_network_passes_cycles_vacuously() {
    let case = cases::bundled("case33bw").unwrap();
    let v: Vec<Complex64> = (0..case.n_buses()).map(|i| Complex64::from_polar(1.0 - 0.001 * i as f64, -0.002 * i as f64)).collect();
    let sol = solution_at(&case, &v, false);
    let cert = certify_sparse(&sol, &case, &Tolerances::default()).unwrap();
    let ev = cert.sparse.as_ref().unwrap();
    assert!(ev.cycles.residuals.is_empty());
    assert!(ev.cycles.pass);
    assert_eq!(cert.verdict, Verdict::Exact);
}

#[test]
fn two_bus_completion_matches_given_entries() {
    let case = cases::two_bus();
    let v = [c(1.03, 0.0), Complex64::from_polar(0.99, -0.04)];
    let sol = solution_at(&case, &v, false);
    let tree = spanning_tree(&PowerGraph::from_case(&case)).unwrap();
    let comp = complete_rank1(&sol, &case, &tree, &Tolerances::default()).unwrap();
    assert!(comp.max_deviation < 1e-6);
    for i in 0..2 {
        assert!((comp.v[i] - v[i]).norm() < 1e-12);
    }
}

#[test]
fn completion_refuses_uncertified_input() {
    let case = cases::two_bus();
    let mut sol = solution_at(&case, &[c(1.0, 0.0), c(1.0, 0.0)], false);
    set_w(&mut sol, 0, 1, c(0.9, 0.0));
    let tree = spanning_tree(&PowerGraph::from_case(&case)).unwrap();
    assert_eq!(complete_rank1(&sol, &case, &tree, &Tolerances::default()).unwrap_err(), CertError::NotCertified);
}

#[test]
fn recovery_from_rank_one_matrix() {
    let case = cases::two_bus();
    let v = [Complex64::from_polar(1.0, 0.3), Complex64::from_polar(0.95, 0.35)];
    let sol = solution_at(&case, &v, true);
    let p = recover_voltages(&outer(&v), &sol, &case, &Tolerances::default()).unwrap();
    assert_eq!(p.v[0].im, 0.0);
    assert!((p.v[0].re - 1.0).abs() < 1e-12);
    assert!((p.v[1] - Complex64::from_polar(0.95, 0.05)).norm() < 1e-12);
    assert!(p.max_residual < 1e-12);
    assert_eq!(p.residuals.len(), 2);
}

#[test]
fn recovery_refuses_high_rank() {
    let case = cases::two_bus();
    let sol = solution_at(&case, &[c(1.0, 0.0); 2], true);
    let w = DMatrix::<Complex64>::identity(2, 2);
    assert_eq!(recover_voltages(&w, &sol, &case, &Tolerances::default()).unwrap_err(), CertError::NotCertified);
}

#[test]
fn dense_and_sparse_agree_on_exact_points() {
    let case = cases::bundled("case9").unwrap();
    let v: Vec<Complex64> = (0..9).map(|i| Complex64::from_polar(1.0 + 0.01 * i as f64, 0.03 * i as f64 - 0.1)).collect();
    let tol = Tolerances::default();
    let dense = certify(&solution_at(&case, &v, true), &case, &tol).unwrap();
    let sparse = certify(&solution_at(&case, &v, false), &case, &tol).unwrap();
    assert_eq!(dense.path, CertPath::DenseRank);
    assert_eq!(sparse.path, CertPath::SparseCompletion);
    assert!(dense.is_exact() && sparse.is_exact());
    let p = recover(&solution_at(&case, &v, false), &case, &sparse).unwrap();
    assert!(p.max_residual < 1e-12);
}

#[test]
fn certificate_json_has_stable_fields() {
    let v = [c(1.0, 0.0), c(0.5, 0.5)];
    let cert = rank1_certificate(&outer(&v), &Tolerances::default()).unwrap();
    let json: serde_json::Value = serde_json::to_value(&cert).unwrap();
    for key in ["case", "kind", "verdict", "path", "tolerances", "dense", "sparse"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert_eq!(json["verdict"], "exact");
    assert_eq!(json["path"], "dense-rank");
    let back: ExactnessCertificate = serde_json::from_value(json).unwrap();
    assert_eq!(back, cert);
}

#[test]
fn gap_examples() {
    assert_eq!(optimality_gap(100.0, Some(100.0)), Ok(0.0));
    assert!((optimality_gap(99.92, Some(100.0)).unwrap() - 0.08).abs() < 1e-9);
    assert_eq!(optimality_gap(100.00001, Some(100.0)), Ok(0.0));
    assert_eq!(optimality_gap(1.0, None), Err(GapError::Unavailable));
    assert_eq!(optimality_gap(1.0, Some(0.0)), Err(GapError::NonPositiveReference(0.0)));
}

fn complex_vec(max_dim: usize) -> impl Strategy<Value = Vec<Complex64>> {
    proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..=max_dim)
        .prop_map(|v| v.into_iter().map(|(a, b)| c(a, b)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rank_one_hermitian_is_psd(mut v in complex_vec(20), lead in 0.05f64..2.0) {
        v[0] = c(lead, v[0].im);
        let w = outer(&v);
        prop_assert!(w[(0, 0)].re > 0.0);
        let (vals, _) = hermitian_eigen(&w);
        let lmax = *vals.last().unwrap();
        prop_assert!(vals[0] >= -1e-9 * lmax, "{:?}", vals);
        let cert = rank1_certificate(&w, &Tolerances::default()).unwrap();
        prop_assert!(cert.is_exact());
    }

    #[test]
    fn diagonal_entry_interlaces(v in complex_vec(20), seed in proptest::collection::vec(-1.0f64..1.0, 800)) {
        let n = v.len();
        let mut k = 0;
        let mut next = || { k += 1; seed[k % seed.len()] };
        let mut w = DMatrix::from_fn(n, n, |_, _| c(0.0, 0.0));
        for j in 0..n {
            w[(j, j)] = c(next() * 3.0, 0.0);
            for i in 0..j {
                let z = c(next(), next()) + v[i] * v[j].conj();
                w[(i, j)] = z;
                w[(j, i)] = z.conj();
            }
        }
        let (vals, _) = hermitian_eigen(&w);
        let tol = 1e-12 * vals.iter().fold(1.0f64, |m, l| m.max(l.abs()));
        prop_assert!(vals[0] <= w[(0, 0)].re + tol);
        prop_assert!(w[(0, 0)].re <= vals[n - 1] + tol);
    }

    #[test]
    fn tree_restricted_outer_product_completes_exactly(v in proptest::collection::vec((0.9f64..1.1, -0.5f64..0.5), 14)) {
        let case = cases::bundled("case14").unwrap();
        let mut v: Vec<Complex64> = v.into_iter().map(|(m, a)| Complex64::from_polar(m, a)).collect();
        let s = case.slack_index();
        v[s] = c(v[s].norm(), 0.0);
        let sol = solution_at(&case, &v, false);
        let tree = spanning_tree(&PowerGraph::from_case(&case)).unwrap();
        let comp = complete_rank1(&sol, &case, &tree, &Tolerances::default()).unwrap();
        let full = outer(&v);
        let err = (&comp.w - &full).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        prop_assert!(err < 1e-12, "{}", err);
    }
}
