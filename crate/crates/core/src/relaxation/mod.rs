//! Conic relaxations of AC-OPF over the lifted matrix `W = v v^H`.
//!
//! Every relaxation shares the linear model built by [`build_common`]: flows
//! as linear functions of `W`, nodal balance, bounds, line limits and the cost
//! epigraph. The kinds differ only in the cone constraints placed on `W`.
//!
//! Lines of a BFS spanning tree rooted at the slack are carried in
//! branch-flow coordinates (see [`SeriesLine`]). Distribution feeders have
//! per-unit impedances down to 1e-7, and with plain `W` variables their flows
//! are differences of nearly equal entries scaled by `1/z`. The change of
//! variables is an exact congruence, so the feasible sets are unchanged.

mod chordal;
mod common;
mod index;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{spanning_tree, GraphError, PowerGraph};
use crate::conic::{tri_index, tri_len, AffineExpr, ConicProgram, ProgramCounts, ProgramError};
use crate::netmodel::{branch_admittance, CostCurve, NetworkCase};

pub use common::{build_common, CommonVars};
pub use chordal::{chordal_plan, ChordalPlan};
pub use index::{ComplexExpr, LiftedVariableIndex, SeriesLine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelaxationKind {
    #[serde(rename = "SDR")]
    Sdr,
    #[serde(rename = "SOCR")]
    Socr,
    #[serde(rename = "TCR")]
    Tcr,
    #[serde(rename = "STCR")]
    Stcr,
}

impl RelaxationKind {
    pub const ALL: [RelaxationKind; 4] = [Self::Sdr, Self::Socr, Self::Tcr, Self::Stcr];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sdr => "SDR",
            Self::Socr => "SOCR",
            Self::Tcr => "TCR",
            Self::Stcr => "STCR",
        }
    }
}

impl fmt::Display for RelaxationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelaxationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SDR" => Ok(Self::Sdr),
            "SOCR" => Ok(Self::Socr),
            "TCR" => Ok(Self::Tcr),
            "STCR" => Ok(Self::Stcr),
            _ => Err(format!("unknown relaxation '{s}' (expected SDR, SOCR, TCR or STCR)")),
        }
    }
}

/// Which entries of `W` a solution of the relaxation determines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    /// every entry, after completion when the SDR is split into cliques
    Full,
    /// diagonal and line pairs
    Lines,
    /// diagonal, line pairs and the slack row
    LinesAndSlackRow,
}

#[derive(Debug, Error, PartialEq)]
pub enum BuildError {
    #[error("generator {gen} at bus {bus} has a cost that decreases without bound and no finite {side} limit")]
    UnboundedCost { gen: usize, bus: u32, side: &'static str },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("malformed program: {0}")]
    Program(#[from] ProgramError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub case: String,
    pub kind: RelaxationKind,
    pub support: Support,
    pub counts: ProgramCounts,
    pub lifted_pairs: usize,
    /// one tag per row, then one per cone, in program order
    pub tags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BuiltRelaxation {
    pub kind: RelaxationKind,
    pub program: ConicProgram,
    pub index: LiftedVariableIndex,
    pub vars: CommonVars,
    /// clique split of a large SDR, completed after the solve
    pub chordal: Option<ChordalPlan>,
    pub report: BuildReport,
}

/// SDR instances with at least this many buses are split along a chordal
/// extension of the line graph.
pub const SDR_SPLIT_MIN_BUSES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub sdr_split_min_buses: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { sdr_split_min_buses: SDR_SPLIT_MIN_BUSES }
    }
}

pub fn build(kind: RelaxationKind, case: &NetworkCase) -> Result<BuiltRelaxation, BuildError> {
    build_with(kind, case, BuildOptions::default())
}

pub fn build_with(kind: RelaxationKind, case: &NetworkCase, opts: BuildOptions) -> Result<BuiltRelaxation, BuildError> {
    let n = case.n_buses();
    let slack = case.slack_index();
    let tree = spanning_tree(&PowerGraph::from_case(case))?;
    let mut prog = ConicProgram::new();
    let mut index = LiftedVariableIndex::new(&mut prog, case, &tree);
    let lines = distinct_lines(case);
    for &(_, (i, j)) in &lines {
        index.ensure_pair(&mut prog, i, j);
    }
    let mut chordal = None;
    let support = match kind {
        RelaxationKind::Sdr => {
            if n >= opts.sdr_split_min_buses {
                let edges: Vec<(usize, usize)> = lines.iter().map(|&(_, e)| e).collect();
                let plan = chordal_plan(n, &edges);
                for (i, j) in plan.pattern() {
                    index.ensure_pair(&mut prog, i, j);
                }
                chordal = Some(plan);
            } else {
                for j in 0..n {
                    for i in 0..j {
                        index.ensure_pair(&mut prog, i, j);
                    }
                }
            }
            Support::Full
        }
        RelaxationKind::Stcr => {
            index.add_slack_row(&mut prog, case);
            Support::LinesAndSlackRow
        }
        RelaxationKind::Tcr => {
            index.add_voltages(&mut prog, case);
            Support::Lines
        }
        RelaxationKind::Socr => Support::Lines,
    };

    let vars = build_common(case, &index, &mut prog)?;
    let label = |k: usize, i: usize, j: usize| format!("branch {k} ({}-{})", case.buses[i].id, case.buses[j].id);

    match kind {
        RelaxationKind::Sdr => match &chordal {
            None => {
                let buses: Vec<usize> = (0..n).collect();
                let block = hermitian_block(&index, &buses);
                let (dim, upper) = realify_psd_block(n, &block);
                prog.add_psd(dim, upper, format!("psd W ({n}x{n})"));
            }
            Some(plan) => {
                for (q, clique) in plan.cliques.iter().enumerate() {
                    let ids: Vec<String> = clique.iter().map(|&b| case.buses[b].id.to_string()).collect();
                    let tag = format!("psd W clique {q} ({})", ids.join(","));
                    if let [i, j] = clique[..] {
                        add_minor(&mut prog, &index, i, j, tag);
                    } else {
                        let block = hermitian_block(&index, clique);
                        let (dim, upper) = realify_psd_block(clique.len(), &block);
                        prog.add_psd(dim, upper, tag);
                    }
                }
            }
        },
        RelaxationKind::Socr => {
            for &(k, (i, j)) in &lines {
                add_minor(&mut prog, &index, i, j, format!("minor {}", label(k, i, j)));
            }
        }
        RelaxationKind::Tcr => {
            let fixed = index.fixed_slack_voltage();
            // a constant corner leaves the solver's scaling of every block
            // to the other entries; W_ss / a^2 pins the same value
            let one = match fixed {
                Some(a) => ComplexExpr::real(index.w(slack, slack).re.scaled(1.0 / (a * a))),
                None => ComplexExpr::real(AffineExpr::constant(1.0)),
            };
            let nominal = index.nominal();
            let sb = &case.buses[slack];
            let (slack_mid, slack_spread) = ((sb.vmin + sb.vmax) / 2.0, (sb.vmax - sb.vmin) / 2.0);
            for &(k, (i, j)) in &lines {
                if fixed.is_some() && (i == slack || j == slack) {
                    add_fixed_slack_block(&mut prog, &index, i, j, &label(k, i, j));
                    continue;
                }
                let block = match index.series_between(i, j) {
                    // congruent to [[1, v^H], [v, W]] over (p, c)
                    Some(line) => {
                        let up = index.voltage(line.parent).expect("voltages added").times(line.tap_parent.inv());
                        let cur = ComplexExpr::pair(line.current.expect("voltages added")).scaled(1.0 / line.scale);
                        let a = ComplexExpr::real(index.scaled_diag(line.parent, line.tap_parent));
                        let l = ComplexExpr::real(line.l_scaled());
                        let s = line.s_scaled();
                        let mut block = vec![
                            vec![one.clone(), up.conj(), cur.conj()],
                            vec![up, a, s.clone()],
                            vec![cur, s.conj(), l],
                        ];
                        let (tau, d) = nominal[line.parent];
                        let spread = d + tau.norm() * slack_spread;
                        if spread > 0.0 {
                            recenter(&mut block, tau * slack_mid / line.tap_parent, spread / line.tap_parent.norm());
                        }
                        block
                    }
                    None => {
                        let vi = index.voltage(i).expect("voltages added");
                        let vj = index.voltage(j).expect("voltages added");
                        vec![
                            vec![one.clone(), vi.conj(), vj.conj()],
                            vec![vi.clone(), index.w(i, i), index.w(i, j)],
                            vec![vj.clone(), index.w(j, i), index.w(j, j)],
                        ]
                    }
                };
                let (dim, upper) = realify_psd_block(3, &block);
                prog.add_psd(dim, upper, format!("tcr block {}", label(k, i, j)));
            }
            // with v_s fixed the cut holds with equality and adds nothing
            if fixed.is_none() {
                let bus = &case.buses[slack];
                let vs = index.voltage(slack).expect("voltages added");
                let mut cut = vs.re.scaled(bus.vmin + bus.vmax);
                cut.add_constant(-bus.vmin * bus.vmax);
                cut.add_scaled(&index.w(slack, slack).re, -1.0);
                prog.add_geq(cut, format!("slack cut bus {}", bus.id));
            }
        }
        RelaxationKind::Stcr => {
            let nominal = index.nominal();
            for &(k, (i, j)) in &lines {
                if i == slack || j == slack {
                    add_minor(&mut prog, &index, i, j, format!("stcr minor {}", label(k, i, j)));
                    continue;
                }
                let block = match index.series_between(i, j) {
                    // congruent to the (slack, p, c) block of W
                    Some(line) => {
                        let wss = index.w(slack, slack);
                        let wsp = index.w(slack, line.parent).times(line.tap_parent.conj().inv());
                        let x = ComplexExpr::pair(line.slack_moment.expect("slack row added")).scaled(1.0 / line.scale);
                        let a = ComplexExpr::real(index.scaled_diag(line.parent, line.tap_parent));
                        let l = ComplexExpr::real(line.l_scaled());
                        let s = line.s_scaled();
                        let mut block = vec![
                            vec![wss, wsp.clone(), x.clone()],
                            vec![wsp.conj(), a, s.clone()],
                            vec![x.conj(), s.conj(), l],
                        ];
                        let (tau, d) = nominal[line.parent];
                        if d > 0.0 {
                            recenter(&mut block, tau / line.tap_parent, d / line.tap_parent.norm());
                        }
                        block
                    }
                    None => hermitian_block(&index, &[slack, i, j]),
                };
                let (dim, upper) = realify_psd_block(3, &block);
                prog.add_psd(dim, upper, format!("stcr block {}", label(k, i, j)));
            }
        }
    }

    prog.validate()?;
    let mut tags: Vec<String> = prog.rows.iter().map(|r| r.tag.clone()).collect();
    tags.extend(prog.cones.iter().map(|c| c.tag.clone()));
    let report = BuildReport {
        case: case.name.clone(),
        kind,
        support,
        counts: prog.counts(),
        lifted_pairs: index.n_pairs(),
        tags,
    };
    Ok(BuiltRelaxation { kind, program: prog, index, vars, chordal, report })
}

/// TCR block of a line at a slack bus whose voltage is the constant `a`.
/// The block over `(1, v_s, v_o)` has the singular corner `[[1, a], [a, a^2]]`,
/// so it is replaced by the exact reduction that removes the zero row: the
/// slack row of the block equals `v_s` times its first row, and what remains
/// is `[[1, v_o^H], [v_o, W_oo]]`. On a tree line `v_o` and `W_oo` are
/// replaced by `J` and `l`.
fn add_fixed_slack_block(prog: &mut ConicProgram, index: &LiftedVariableIndex, i: usize, j: usize, label: &str) {
    let slack = index.slack();
    let other = if i == slack { j } else { i };
    let vs = index.voltage(slack).expect("voltages added");
    let r2 = std::f64::consts::SQRT_2;
    let (tie, entries) = match index.series_between(i, j) {
        Some(line) => {
            let cur = ComplexExpr::pair(line.current.expect("voltages added"));
            let us = vs.re.constant / line.tap_parent;
            let tie = line.s_expr().minus(&cur.conj().times(us));
            let c = cur.scaled(r2 / line.scale);
            (tie, vec![AffineExpr::constant(1.0), line.l_scaled(), c.re, c.im])
        }
        None => {
            let vo = index.voltage(other).expect("voltages added");
            let tie = index.w(slack, other).minus(&vo.conj().scaled(vs.re.constant));
            (tie, vec![AffineExpr::constant(1.0), index.w(other, other).re, vo.re.scaled(r2), vo.im.scaled(r2)])
        }
    };
    prog.add_eq(tie.re, format!("slack tie re {label}"));
    prog.add_eq(tie.im, format!("slack tie im {label}"));
    prog.add_rotated_soc(entries, format!("tcr minor {label}"));
}

/// Congruence of a 3x3 moment block `E[y y^H]` taking `y_1` to
/// `(y_1 - nu y_0) / d`. Near the slack `y_1` barely differs from `nu y_0`,
/// and without this the block is PSD only within a sliver of width `d^2`.
fn recenter(block: &mut [Vec<ComplexExpr>], nu: Complex64, d: f64) {
    for j in 0..3 {
        block[1][j] = block[1][j].minus(&block[0][j].times(nu)).scaled(1.0 / d);
    }
    for row in block.iter_mut() {
        row[1] = row[1].minus(&row[0].times(nu.conj())).scaled(1.0 / d);
    }
}

/// `W_ii W_jj >= |W_ij|^2`, in branch-flow form on tree lines.
fn add_minor(prog: &mut ConicProgram, index: &LiftedVariableIndex, i: usize, j: usize, tag: String) {
    let r2 = std::f64::consts::SQRT_2;
    let entries = match index.series_between(i, j) {
        Some(line) => {
            let s = line.s_scaled();
            vec![index.scaled_diag(line.parent, line.tap_parent), line.l_scaled(), s.re.scaled(r2), s.im.scaled(r2)]
        }
        None => {
            let wij = index.w(i, j);
            vec![index.w(i, i).re, index.w(j, j).re, wij.re.scaled(r2), wij.im.scaled(r2)]
        }
    };
    prog.add_rotated_soc(entries, tag);
}

/// Branches with distinct endpoint pairs; parallel branches share one block.
fn distinct_lines(case: &NetworkCase) -> Vec<(usize, (usize, usize))> {
    let mut seen = std::collections::BTreeSet::new();
    (0..case.branches.len())
        .filter_map(|k| {
            let (i, j) = case.branch_ends(k);
            seen.insert((i.min(j), i.max(j))).then_some((k, (i, j)))
        })
        .collect()
}

fn hermitian_block(index: &LiftedVariableIndex, buses: &[usize]) -> Vec<Vec<ComplexExpr>> {
    buses.iter().map(|&a| buses.iter().map(|&b| index.w(a, b)).collect()).collect()
}

/// Real symmetric embedding `[[Re M, -Im M], [Im M, Re M]]` of a Hermitian
/// affine block, returned as its upper triangle.
pub fn realify_psd_block(d: usize, m: &[Vec<ComplexExpr>]) -> (usize, Vec<AffineExpr>) {
    let dim = 2 * d;
    let mut upper = vec![AffineExpr::zero(); tri_len(dim)];
    for b in 0..dim {
        for a in 0..=b {
            let e = match (a < d, b < d) {
                (true, true) => m[a][b].re.clone(),
                (true, false) => m[a][b - d].im.scaled(-1.0),
                (false, false) => m[a - d][b - d].re.clone(),
                (false, true) => unreachable!("a <= b"),
            };
            upper[tri_index(a, b)] = e;
        }
    }
    (dim, upper)
}

impl BuiltRelaxation {
    /// Embeds an operating point: `W = v v^H`, flows from the pi-model and the
    /// cost epigraph at its lower envelope.
    pub fn lift(&self, case: &NetworkCase, v: &[Complex64], pg: &[f64], qg: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.program.n_vars()];
        self.index.lift(&mut x, v);
        let vars = &self.vars;
        for g in 0..case.generators.len() {
            x[vars.pg[g]] = pg[g];
            x[vars.qg[g]] = qg[g];
            if let Some((t, unit)) = vars.cost_epi[g] {
                x[t] = match &case.generators[g].cost {
                    CostCurve::Polynomial { .. } => pg[g] * pg[g],
                    curve => curve.eval_mw(case.base_mva * pg[g]) / unit,
                };
            }
        }
        for (k, br) in case.branches.iter().enumerate() {
            let (f, t) = case.branch_ends(k);
            let y = branch_admittance(br);
            let sf = v[f] * (y.ff * v[f] + y.ft * v[t]).conj();
            let st = v[t] * (y.tf * v[f] + y.tt * v[t]).conj();
            x[vars.pf[k]] = sf.re;
            x[vars.qf[k]] = sf.im;
            x[vars.pt[k]] = st.re;
            x[vars.qt[k]] = st.im;
        }
        x
    }
}
