#![allow(dead_code)]

use std::sync::OnceLock;

use num_complex::Complex64;
use opfcert::cases::{bundled, BUNDLED};
use opfcert::certifier::branch_flows;
use opfcert::netmodel::branch_admittance;
use opfcert::netmodel::NetworkCase;
use opfcert::relaxation::{build, BuiltRelaxation, RelaxationKind};
use opfcert::solver::{solve, LiftedSolution, SolverConfig};

pub struct Solved {
    pub case: NetworkCase,
    pub kind: RelaxationKind,
    pub built: BuiltRelaxation,
    pub sol: LiftedSolution,
}

/// Every bundled case under every relaxation, solved once per test binary.
pub fn all_solved() -> &'static [Solved] {
    static CELL: OnceLock<Vec<Solved>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut out = Vec::new();
        for name in BUNDLED {
            let case = bundled(name).unwrap();
            for kind in RelaxationKind::ALL {
                let built = build(kind, &case).unwrap();
                let sol = solve(&built, &case, &SolverConfig::default());
                out.push(Solved { case: case.clone(), kind, built, sol });
            }
        }
        out
    })
}

pub fn solved(name: &str, kind: RelaxationKind) -> &'static Solved {
    all_solved().iter().find(|s| s.case.name == name && s.kind == kind).unwrap()
}

/// Dispatch that balances `v` when every bus has exactly one generator, and
/// its cost, or `None` if a limit is violated.
pub fn balancing_dispatch(case: &NetworkCase, v: &[Complex64]) -> Option<(f64, Vec<f64>)> {
    let s = net_injection(case, v);
    let mut cost = 0.0;
    let mut pg = Vec::with_capacity(case.generators.len());
    for (g, gen) in case.generators.iter().enumerate() {
        let si = s[case.gen_bus(g)];
        if si.re < gen.pmin || si.re > gen.pmax || si.im < gen.qmin || si.im > gen.qmax {
            return None;
        }
        cost += case.gen_cost(g, si.re);
        pg.push(si.re);
    }
    for (k, (sf, st)) in branch_flows(case, v).into_iter().enumerate() {
        if let Some(smax) = case.branches[k].smax {
            if sf.norm() > smax || st.norm() > smax {
                return None;
            }
        }
    }
    Some((cost, pg))
}

/// Generation each bus needs to serve its load at `v`.
fn net_injection(case: &NetworkCase, v: &[Complex64]) -> Vec<Complex64> {
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
    s
}

pub struct GridOptimum {
    pub cost: f64,
    pub v: Vec<Complex64>,
    /// position on the grid
    pub coords: Vec<f64>,
}

pub const GRID_STEP: f64 = 1e-3;

fn steps(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / GRID_STEP).round() as usize;
    (0..=n).map(move |k| lo + k as f64 * GRID_STEP)
}

fn far_gen(case: &NetworkCase, bus: usize) -> usize {
    case.generators.iter().position(|g| g.bus == case.buses[bus].id).unwrap()
}

/// Grid coordinates of the two-bus fixture: both magnitudes and the far
/// generator's output.
pub fn two_bus_coords(case: &NetworkCase, v: &[Complex64]) -> Vec<f64> {
    let s = net_injection(case, v);
    vec![v[0].norm(), v[1].norm(), s[1].re]
}

/// Grid over both magnitudes and the far generator's output. The far-bus
/// angle follows from that bus's active balance; both roots are tried.
pub fn grid_two_bus(case: &NetworkCase) -> GridOptimum {
    let (b0, b1) = (&case.buses[0], &case.buses[1]);
    let y = branch_admittance(&case.branches[0]);
    let far = far_gen(case, 1);
    let mut best = GridOptimum { cost: f64::INFINITY, v: vec![], coords: vec![] };
    for m0 in steps(b0.vmin, b0.vmax) {
        for m1 in steps(b1.vmin, b1.vmax) {
            for pg in steps(case.generators[far].pmin, case.generators[far].pmax) {
                let c = (pg - b1.pd - y.tt.re * m1 * m1 - b1.gs * m1 * m1) / (m0 * m1 * y.tf.norm());
                if c.abs() > 1.0 {
                    continue;
                }
                for th in [y.tf.arg() + c.acos(), y.tf.arg() - c.acos()] {
                    let v = [Complex64::new(m0, 0.0), Complex64::from_polar(m1, th)];
                    if let Some((cost, _)) = balancing_dispatch(case, &v) {
                        if cost < best.cost {
                            best = GridOptimum { cost, v: v.to_vec(), coords: vec![m0, m1, pg] };
                        }
                    }
                }
            }
        }
    }
    best
}

/// Grid coordinates of the triangle fixture: the outputs at the two
/// non-slack buses.
pub fn triangle_coords(case: &NetworkCase, v: &[Complex64]) -> Vec<f64> {
    let s = net_injection(case, v);
    vec![s[1].re, s[2].re]
}

/// Angles at buses 1 and 2 that make their active generation `target`, by
/// Newton's method from `start`.
fn triangle_angles(case: &NetworkCase, m: &[f64], target: [f64; 2], start: [f64; 2]) -> Option<[f64; 2]> {
    let point = |t: [f64; 2]| [Complex64::new(m[0], 0.0), Complex64::from_polar(m[1], t[0]), Complex64::from_polar(m[2], t[1])];
    let resid = |t: [f64; 2]| {
        let s = net_injection(case, &point(t));
        [s[1].re - target[0], s[2].re - target[1]]
    };
    let mut t = start;
    for _ in 0..30 {
        let r = resid(t);
        if r[0].abs().max(r[1].abs()) < 1e-13 {
            return Some(t);
        }
        let h = 1e-7;
        let d0 = resid([t[0] + h, t[1]]);
        let d1 = resid([t[0], t[1] + h]);
        let j = [[(d0[0] - r[0]) / h, (d1[0] - r[0]) / h], [(d0[1] - r[1]) / h, (d1[1] - r[1]) / h]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-12 {
            return None;
        }
        t[0] -= (j[1][1] * r[0] - j[0][1] * r[1]) / det;
        t[1] -= (j[0][0] * r[1] - j[1][0] * r[0]) / det;
        if t[0].abs() > 1.0 || t[1].abs() > 1.0 {
            return None;
        }
    }
    None
}

/// Grid over the outputs at the two non-slack buses; magnitudes are pinned
/// by the limits and the angles follow from the active balances.
pub fn grid_triangle(case: &NetworkCase) -> GridOptimum {
    let m: Vec<f64> = case.buses.iter().map(|b| b.vmax).collect();
    let (g1, g2) = (far_gen(case, 1), far_gen(case, 2));
    let mut best = GridOptimum { cost: f64::INFINITY, v: vec![], coords: vec![] };
    for p1 in steps(case.generators[g1].pmin, case.generators[g1].pmax) {
        let mut start = [0.0, 0.0];
        for p2 in steps(case.generators[g2].pmin, case.generators[g2].pmax) {
            let Some(t) = triangle_angles(case, &m, [p1, p2], start) else { continue };
            start = t;
            let v = [Complex64::new(m[0], 0.0), Complex64::from_polar(m[1], t[0]), Complex64::from_polar(m[2], t[1])];
            if let Some((cost, _)) = balancing_dispatch(case, &v) {
                if cost < best.cost {
                    best = GridOptimum { cost, v: v.to_vec(), coords: vec![p1, p2] };
                }
            }
        }
    }
    best
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
