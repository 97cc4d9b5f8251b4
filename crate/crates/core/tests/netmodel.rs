use num_complex::Complex64;
use opfcert::cases::{bundled_source, BUNDLED};
use opfcert::certifier::branch_flows;
use opfcert::netmodel::{branch_admittance, Branch, MatpowerData, NetworkCase};
use opfcert::relaxation::{build, RelaxationKind};
use opfcert::solver::{solve, SolveStatus, SolverConfig};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Same physical network on a base `k` times larger: MW quantities stay put,
/// impedances in per-unit grow with the base.
fn rebased(name: &str, k: f64) -> NetworkCase {
    let mut data = MatpowerData::parse(bundled_source(name).unwrap()).unwrap();
    data.base_mva *= k;
    for row in &mut data.branch {
        row[2] *= k;
        row[3] *= k;
        row[4] /= k;
    }
    data.into_case().unwrap()
}

fn same_physical(a: &NetworkCase, b: &NetworkCase) -> f64 {
    let (sa, sb) = (a.base_mva, b.base_mva);
    let mut worst = 0.0f64;
    let mut cmp = |x: f64, y: f64| {
        if x != 0.0 || y != 0.0 {
            worst = worst.max(rel(x, y));
        }
    };
    for (x, y) in a.buses.iter().zip(&b.buses) {
        cmp(x.pd * sa, y.pd * sb);
        cmp(x.qd * sa, y.qd * sb);
        cmp(x.gs * sa, y.gs * sb);
        cmp(x.bs * sa, y.bs * sb);
        cmp(x.vmin, y.vmin);
        cmp(x.vmax, y.vmax);
    }
    for (x, y) in a.branches.iter().zip(&b.branches) {
        cmp(x.r / sa, y.r / sb);
        cmp(x.x / sa, y.x / sb);
        cmp(x.b_charge * sa, y.b_charge * sb);
        cmp(x.tap, y.tap);
        cmp(x.shift, y.shift);
        cmp(x.smax.unwrap_or(0.0) * sa, y.smax.unwrap_or(0.0) * sb);
    }
    for (x, y) in a.generators.iter().zip(&b.generators) {
        cmp(x.pmin * sa, y.pmin * sb);
        cmp(x.pmax * sa, y.pmax * sb);
        cmp(x.qmin * sa, y.qmin * sb);
        cmp(x.qmax * sa, y.qmax * sb);
    }
    worst
}

#[test]
fn bundled_cases_round_trip_through_json() {
    for name in BUNDLED {
        let case = opfcert::cases::bundled(name).unwrap();
        assert_eq!(NetworkCase::from_json(&case.to_json()).unwrap(), case, "{name}");
    }
}

#[test]
fn rebasing_keeps_physical_quantities() {
    for name in BUNDLED {
        let base = opfcert::cases::bundled(name).unwrap();
        for k in [0.1, 2.0, 10.0] {
            let r = rebased(name, k);
            assert!(same_physical(&base, &r) <= 1e-9, "{name} k={k}");
        }
    }
}

/// Generator dispatch that balances `v` exactly, one generator per bus with
/// generation, expressed in per-unit on the case's own base.
fn balancing_dispatch(case: &NetworkCase, v: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    let mut s: Vec<Complex64> = case
        .buses
        .iter()
        .zip(v)
        .map(|(b, vi)| Complex64::new(b.gs, -b.bs) * vi.norm_sqr() + Complex64::new(b.pd, b.qd))
        .collect();
    for (k, (sf, st)) in branch_flows(case, v).into_iter().enumerate() {
        let (f, t) = case.branch_ends(k);
        s[f] += sf;
        s[t] += st;
    }
    let mut pg = vec![0.0; case.generators.len()];
    let mut qg = vec![0.0; case.generators.len()];
    for gens in case.gens_by_bus() {
        if let Some(&g) = gens.first() {
            let b = case.gen_bus(g);
            pg[g] = s[b].re;
            qg[g] = s[b].im;
        }
    }
    (pg, qg)
}

#[test]
fn rebasing_keeps_relaxation_objective_function() {
    for name in ["case9", "case14", "case33bw"] {
        let base = opfcert::cases::bundled(name).unwrap();
        let scaled = rebased(name, 2.0);
        let v: Vec<Complex64> = (0..base.n_buses())
            .map(|i| if i == base.slack_index() { Complex64::new(1.0, 0.0) } else { Complex64::from_polar(1.0 - 0.001 * (i % 7) as f64, -0.002 * (i % 5) as f64) })
            .collect();
        let (pa, qa) = balancing_dispatch(&base, &v);
        let (pb, qb) = balancing_dispatch(&scaled, &v);
        for kind in RelaxationKind::ALL {
            let ba = build(kind, &base).unwrap();
            let bb = build(kind, &scaled).unwrap();
            let fa = ba.program.objective.eval(&ba.lift(&base, &v, &pa, &qa));
            let fb = bb.program.objective.eval(&bb.lift(&scaled, &v, &pb, &qb));
            assert!(rel(fa, fb) <= 1e-9, "{name} {kind}: {fa} vs {fb}");
        }
    }
}

/// Interior-point solves of the meshed cases end at the solver's reduced
/// accuracy, so the solved optimum moves with the data scaling by more than
/// the model does.
#[test]
fn rebasing_keeps_solved_objectives_to_solver_accuracy() {
    for name in ["case9", "case14", "case33bw"] {
        let base = opfcert::cases::bundled(name).unwrap();
        let scaled = rebased(name, 2.0);
        for kind in RelaxationKind::ALL {
            let a = solve(&build(kind, &base).unwrap(), &base, &SolverConfig::default());
            let b = solve(&build(kind, &scaled).unwrap(), &scaled, &SolverConfig::default());
            assert_eq!((a.status, b.status), (SolveStatus::Optimal, SolveStatus::Optimal));
            assert!(rel(a.objective, b.objective) <= 1e-5, "{name} {kind}: {} vs {}", a.objective, b.objective);
        }
    }
}

fn perturbed_case() -> impl Strategy<Value = NetworkCase> {
    (
        proptest::sample::select(BUNDLED.to_vec()),
        proptest::collection::vec(0.5f64..1.5, 141),
        proptest::collection::vec(-0.2f64..0.2, 140),
    )
        .prop_map(|(name, load, shift)| {
            let c = opfcert::cases::bundled(name).unwrap();
            let buses = c
                .buses
                .iter()
                .zip(load.iter().cycle())
                .map(|(b, &f)| opfcert::netmodel::Bus { pd: b.pd * f, qd: b.qd * f, ..b.clone() })
                .collect();
            let branches = c
                .branches
                .iter()
                .zip(shift.iter().cycle())
                .map(|(l, &s)| Branch { shift: l.shift + s, ..l.clone() })
                .collect();
            NetworkCase::new(c.name.clone(), c.base_mva, buses, branches, c.generators.clone()).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_round_trip_is_identity(case in perturbed_case()) {
        prop_assert_eq!(NetworkCase::from_json(&case.to_json()).unwrap(), case);
    }

    #[test]
    fn untapped_line_is_symmetric(r in 0.0f64..0.5, x in 0.001f64..1.0, b in 0.0f64..0.5) {
        let y = branch_admittance(&Branch { from: 1, to: 2, r, x, b_charge: b, tap: 1.0, shift: 0.0, smax: None });
        prop_assert!((y.ft - y.tf).norm() <= 1e-15 * y.ft.norm());
        prop_assert!((y.ff - y.tt).norm() <= 1e-15 * y.ff.norm().max(1.0));
        prop_assert!((y.ff + y.ft - Complex64::new(0.0, b / 2.0)).norm() <= 1e-12 * y.ff.norm());
    }
}
