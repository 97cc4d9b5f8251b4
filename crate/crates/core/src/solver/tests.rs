use super::*;
use crate::cases;
use crate::conic::{tri_index, AffineExpr};
use crate::relaxation::{build, build_with, BuildOptions};

fn native(prog: &ConicProgram) -> RawSolution {
    ClarabelBackend.solve_program(prog, &SolverConfig::default())
}

#[test]
fn trivial_lp() {
    let mut p = ConicProgram::new();
    let x = p.new_var("x");
    p.objective = AffineExpr::var(x);
    p.add_geq(AffineExpr::var(x).minus(&AffineExpr::constant(3.0)), "x >= 3");
    let r = native(&p);
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective - 3.0).abs() < 1e-7);
}

#[test]
fn psd_layout_matches_backend() {
    // [[t, 1, 2], [1, 1, 0], [2, 0, 1]] >= 0  <=>  t >= 5
    let mut p = ConicProgram::new();
    let t = p.new_var("t");
    p.objective = AffineExpr::var(t);
    let mut upper = vec![AffineExpr::zero(); 6];
    upper[tri_index(0, 0)] = AffineExpr::var(t);
    upper[tri_index(0, 1)] = AffineExpr::constant(1.0);
    upper[tri_index(0, 2)] = AffineExpr::constant(2.0);
    upper[tri_index(1, 1)] = AffineExpr::constant(1.0);
    upper[tri_index(2, 2)] = AffineExpr::constant(1.0);
    p.add_psd(3, upper, "psd");
    let r = native(&p);
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective - 5.0).abs() < 1e-6, "{}", r.objective);
}

#[test]
fn rotated_cone_epigraph() {
    // min t s.t. 2 t (1/2) >= (x)^2, x = 3
    let mut p = ConicProgram::new();
    let t = p.new_var("t");
    let x = p.new_var("x");
    p.objective = AffineExpr::var(t);
    p.add_eq(AffineExpr::var(x).minus(&AffineExpr::constant(3.0)), "x");
    p.add_rotated_soc(vec![AffineExpr::var(t), AffineExpr::constant(0.5), AffineExpr::var(x)], "epi");
    let r = native(&p);
    assert!((r.objective - 9.0).abs() < 1e-6);
}

#[test]
fn contradictory_voltage_rows_are_infeasible() {
    let mut case = cases::two_bus();
    case.buses[1].vmin = 1.2;
    let b = build(RelaxationKind::Socr, &case).unwrap();
    let sol = solve(&b, &case, &SolverConfig::default());
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn dense_w_requires_full_support() {
    let case = cases::two_bus();
    let b = build(RelaxationKind::Sdr, &case).unwrap();
    let sol = solve(&b, &case, &SolverConfig::default());
    assert_eq!(sol.status, SolveStatus::Optimal);
    let w = extract_dense_w(&sol).unwrap();
    assert_eq!(w.shape(), (2, 2));
    assert_eq!(w[(0, 0)].im, 0.0);
    assert_eq!(w[(1, 1)].im, 0.0);
    assert_eq!(w[(0, 1)], w[(1, 0)].conj());

    let mut triangle = cases::triangle();
    triangle.name = "t".into();
    let b = build(RelaxationKind::Socr, &triangle).unwrap();
    let sol = solve(&b, &triangle, &SolverConfig::default());
    // a triangle's line support is complete, so drop to a tree
    let mut partial = sol.clone();
    partial.w.remove(&(0, 2));
    assert!(matches!(extract_dense_w(&partial), Err(SolveError::SparseSupport { .. })));
}

#[test]
fn chordal_split_preserves_objective() {
    let case = cases::bundled("case14").unwrap();
    let whole = build(RelaxationKind::Sdr, &case).unwrap();
    let split = build_with(RelaxationKind::Sdr, &case, BuildOptions { sdr_split_min_buses: 2 }).unwrap();
    assert!(whole.chordal.is_none());
    assert!(split.chordal.is_some());
    assert!(split.report.counts.psd_dims.iter().all(|&d| d < 28));
    let cfg = SolverConfig::default();
    let (a, b) = (solve(&whole, &case, &cfg), solve(&split, &case, &cfg));
    assert_eq!(a.status, SolveStatus::Optimal);
    assert_eq!(b.status, SolveStatus::Optimal);
    let rel = (a.objective - b.objective).abs() / a.objective;
    assert!(rel < 1e-6, "{} vs {}", a.objective, b.objective);
    assert!(b.diagnostics.max_violation < 1e-6, "{:?}", b.diagnostics);
    // the completion is dense and PSD
    let w = extract_dense_w(&b).unwrap();
    let eig = w.symmetric_eigenvalues();
    assert!(eig.min() > -1e-7 * eig.max(), "{eig}");
}

#[test]
fn backend_selector_parsing() {
    assert_eq!("clarabel".parse::<BackendSelector>().unwrap(), BackendSelector::Clarabel);
    assert_eq!(
        "external:my-solver --quiet".parse::<BackendSelector>().unwrap(),
        BackendSelector::External("my-solver --quiet".into())
    );
    assert!("external:".parse::<BackendSelector>().is_err());
    assert!("mosek".parse::<BackendSelector>().is_err());
}
