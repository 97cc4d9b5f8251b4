//! Ex post exactness certificates for relaxation optima.
//!
//! A full-support solution is certified by the eigenvalue ratio of `W`. A
//! solution known only on the line support is certified when every line
//! block is rank one and the angles of `W` close around every cycle, in
//! which case the partial matrix has a unique rank-one completion.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{fundamental_cycles, spanning_tree, CycleBasis, GraphError, PowerGraph, SpanningTree};
use crate::netmodel::{branch_admittance, NetworkCase};
use crate::relaxation::RelaxationKind;
use crate::solver::{extract_dense_w, LiftedSolution, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// bound on |second eigenvalue| / largest eigenvalue
    pub eps_rank: f64,
    /// bound on the relative 2x2 minor of each line
    pub eps_tight: f64,
    /// bound on the wrapped angle sum around each cycle, radians
    pub eps_cycle: f64,
    /// bound on power-flow residuals at a recovered point, per-unit
    pub eps_residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { eps_rank: 1e-6, eps_tight: 1e-4, eps_cycle: 1e-3, eps_residual: 1e-5 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<(), CertError> {
        for (name, v) in [
            ("eps_rank", self.eps_rank),
            ("eps_tight", self.eps_tight),
            ("eps_cycle", self.eps_cycle),
            ("eps_residual", self.eps_residual),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CertError::BadTolerance { name, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Exact,
    NotCertified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertPath {
    DenseRank,
    SparseCompletion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseEvidence {
    /// descending
    pub eigenvalues: Vec<f64>,
    pub ratio: f64,
    /// smallest eigenvalue is at least `-eps_rank * largest`; only recorded
    /// when the verdict is exact
    pub psd_consistent: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineResidual {
    pub branch: usize,
    pub from: usize,
    pub to: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub residuals: Vec<LineResidual>,
    pub max: f64,
    /// branch index of the largest residual
    pub argmax: Option<usize>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    /// `None` where a cycle edge carries `W_ij = 0`
    pub residuals: Vec<Option<f64>>,
    pub max: f64,
    pub argmax: Option<usize>,
    pub pass: bool,
    pub diagnostic: Option<String>,
}

/// Tightness of the off-line entries `W_si` a strong relaxation adds in
/// the slack row. Reported, never part of the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackRowEvidence {
    pub entries: usize,
    pub max: f64,
    pub argmax_bus: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseEvidence {
    pub support: String,
    pub tightness: TightnessReport,
    pub cycles: CycleReport,
    pub slack_row: Option<SlackRowEvidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactnessCertificate {
    pub case: String,
    pub kind: Option<RelaxationKind>,
    pub verdict: Verdict,
    pub path: CertPath,
    pub tolerances: Tolerances,
    pub dense: Option<DenseEvidence>,
    pub sparse: Option<SparseEvidence>,
}

impl ExactnessCertificate {
    pub fn is_exact(&self) -> bool {
        self.verdict == Verdict::Exact
    }

    /// The residual that decided the verdict, divided by its tolerance.
    pub fn margin(&self) -> f64 {
        match (&self.dense, &self.sparse) {
            (Some(d), _) => d.ratio / self.tolerances.eps_rank,
            (None, Some(s)) => {
                (s.tightness.max / self.tolerances.eps_tight).max(s.cycles.max / self.tolerances.eps_cycle)
            }
            (None, None) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error("tolerance {name} must be positive and finite, got {value}")]
    BadTolerance { name: &'static str, value: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix is zero")]
    ZeroMatrix,
    #[error("solution has no entry W({from},{to}) for branch {branch}")]
    MissingEntry { branch: usize, from: usize, to: usize },
    #[error("solution status is {0}, nothing to certify")]
    NotOptimal(SolveStatus),
    #[error("solution is not certified exact")]
    NotCertified,
    #[error("voltage vector has {got} entries for {n} buses")]
    WrongLength { got: usize, n: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

const HERMITIAN_TOL: f64 = 1e-9;

/// Dense rank-one test.
pub fn rank1_certificate(w: &DMatrix<Complex64>, tol: &Tolerances) -> Result<ExactnessCertificate, CertError> {
    tol.validate()?;
    let (n, m) = w.shape();
    if n != m {
        return Err(CertError::NotSquare { rows: n, cols: m });
    }
    let scale = w.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if scale == 0.0 {
        return Err(CertError::ZeroMatrix);
    }
    let deviation = (w - w.adjoint()).iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if deviation > HERMITIAN_TOL * scale.max(1.0) {
        return Err(CertError::NotHermitian { deviation });
    }
    let mut eig: Vec<f64> = hermitian_eigen(w).0;
    eig.reverse();
    let largest = eig[0];
    let second = eig[1..].iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let ratio = if largest > 0.0 { second / largest } else { f64::INFINITY };
    let exact = largest > 0.0 && ratio <= tol.eps_rank;
    let smallest = *eig.last().expect("nonempty");
    let psd_consistent = exact.then(|| smallest >= -tol.eps_rank * largest);
    Ok(ExactnessCertificate {
        case: String::new(),
        kind: None,
        verdict: if exact { Verdict::Exact } else { Verdict::NotCertified },
        path: CertPath::DenseRank,
        tolerances: *tol,
        dense: Some(DenseEvidence { eigenvalues: eig, ratio, psd_consistent }),
        sparse: None,
    })
}

/// Eigenvalues ascending with matching unit eigenvectors as columns.
pub fn hermitian_eigen(w: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let h = (w + w.adjoint()).scale(0.5);
    let se = h.symmetric_eigen();
    let mut idx: Vec<usize> = (0..se.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let vals = idx.iter().map(|&k| se.eigenvalues[k]).collect();
    let vecs = DMatrix::from_fn(w.nrows(), idx.len(), |r, c| se.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

fn entry(sol: &LiftedSolution, k: usize, i: usize, j: usize) -> Result<Complex64, CertError> {
    sol.w(i, j).ok_or(CertError::MissingEntry { branch: k, from: i, to: j })
}

fn minor_residual(wii: f64, wjj: f64, wij: Complex64) -> f64 {
    let d = wii * wjj;
    (d - wij.norm_sqr()).abs() / d.max(1.0)
}

/// Relative 2x2 minor of every branch.
pub fn tightness_check(sol: &LiftedSolution, case: &NetworkCase, tol: &Tolerances) -> Result<TightnessReport, CertError> {
    let mut residuals = Vec::with_capacity(case.branches.len());
    for k in 0..case.branches.len() {
        let (i, j) = case.branch_ends(k);
        let r = minor_residual(entry(sol, k, i, i)?.re, entry(sol, k, j, j)?.re, entry(sol, k, i, j)?);
        residuals.push(LineResidual { branch: k, from: i, to: j, residual: r });
    }
    let (max, argmax) = residuals
        .iter()
        .fold((0.0, None), |(m, a), r| if r.residual > m || a.is_none() { (r.residual, Some(r.branch)) } else { (m, a) });
    Ok(TightnessReport { residuals, max, argmax, pass: max <= tol.eps_tight })
}

/// Maps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Wrapped angle sum of `W` around each basis cycle.
pub fn cycle_check(sol: &LiftedSolution, case: &NetworkCase, basis: &CycleBasis, tol: &Tolerances) -> Result<CycleReport, CertError> {
    let mut residuals = Vec::with_capacity(basis.cycles.len());
    let mut diagnostic = None;
    for (c, cycle) in basis.cycles.iter().enumerate() {
        let mut sum = 0.0;
        let mut defined = true;
        for s in &cycle.steps {
            let (f, t) = case.branch_ends(s.edge);
            let w = entry(sol, s.edge, f, t)?;
            if w.norm() == 0.0 {
                defined = false;
                diagnostic.get_or_insert_with(|| format!("W({f},{t}) is zero on cycle {c}; its angle is undefined"));
                break;
            }
            sum += f64::from(s.sign) * w.arg();
        }
        residuals.push(defined.then(|| wrap_angle(sum).abs()));
    }
    let mut max: f64 = 0.0;
    let mut argmax = None;
    for (c, r) in residuals.iter().enumerate() {
        let r = r.unwrap_or(f64::INFINITY);
        if argmax.is_none() || r > max {
            max = r;
            argmax = Some(c);
        }
    }
    let pass = diagnostic.is_none() && max <= tol.eps_cycle;
    // keep the JSON finite
    if max.is_infinite() {
        max = PI;
    }
    Ok(CycleReport { residuals, max, argmax, pass, diagnostic })
}

fn slack_row_evidence(sol: &LiftedSolution, case: &NetworkCase) -> Option<SlackRowEvidence> {
    let s = case.slack_index();
    let mut lines = vec![false; sol.n];
    for k in 0..case.branches.len() {
        let (i, j) = case.branch_ends(k);
        if i == s {
            lines[j] = true;
        }
        if j == s {
            lines[i] = true;
        }
    }
    let mut ev = SlackRowEvidence { entries: 0, max: 0.0, argmax_bus: None };
    for i in (0..sol.n).filter(|&i| i != s && !lines[i]) {
        let Some(w) = sol.w(s, i) else { continue };
        let r = minor_residual(sol.w(s, s)?.re, sol.w(i, i)?.re, w);
        ev.entries += 1;
        if ev.argmax_bus.is_none() || r > ev.max {
            ev.max = r;
            ev.argmax_bus = Some(i);
        }
    }
    (ev.entries > 0).then_some(ev)
}

/// Certificate from the line entries of `W` alone.
pub fn certify_sparse(sol: &LiftedSolution, case: &NetworkCase, tol: &Tolerances) -> Result<ExactnessCertificate, CertError> {
    tol.validate()?;
    if sol.status != SolveStatus::Optimal {
        return Err(CertError::NotOptimal(sol.status));
    }
    let g = PowerGraph::from_case(case);
    let tree = spanning_tree(&g)?;
    let basis = fundamental_cycles(&g, &tree);
    let tightness = tightness_check(sol, case, tol)?;
    let cycles = cycle_check(sol, case, &basis, tol)?;
    let slack_row = slack_row_evidence(sol, case);
    let exact = tightness.pass && cycles.pass;
    Ok(ExactnessCertificate {
        case: sol.case.clone(),
        kind: Some(sol.kind),
        verdict: if exact { Verdict::Exact } else { Verdict::NotCertified },
        path: CertPath::SparseCompletion,
        tolerances: *tol,
        dense: None,
        sparse: Some(SparseEvidence {
            support: if slack_row.is_some() { "lines+slack-row" } else { "lines" }.into(),
            tightness,
            cycles,
            slack_row,
        }),
    })
}

/// Dense test for full-support solutions, line-support test otherwise.
pub fn certify(sol: &LiftedSolution, case: &NetworkCase, tol: &Tolerances) -> Result<ExactnessCertificate, CertError> {
    if sol.status != SolveStatus::Optimal {
        return Err(CertError::NotOptimal(sol.status));
    }
    if !sol.has_full_support() {
        return certify_sparse(sol, case, tol);
    }
    let w = extract_dense_w(sol).expect("full support");
    let mut cert = rank1_certificate(&w, tol)?;
    cert.case = sol.case.clone();
    cert.kind = Some(sol.kind);
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOneCompletion {
    pub v: Vec<Complex64>,
    pub w: DMatrix<Complex64>,
    /// largest |W^c_ij - W_ij| over the branches
    pub max_deviation: f64,
}

/// Rank-one completion of the line entries. Magnitudes come from the
/// diagonal and angles are carried from the slack along `tree`.
pub fn complete_rank1(
    sol: &LiftedSolution,
    case: &NetworkCase,
    tree: &SpanningTree,
    tol: &Tolerances,
) -> Result<RankOneCompletion, CertError> {
    let cert = certify_sparse(sol, case, tol)?;
    if !cert.is_exact() {
        return Err(CertError::NotCertified);
    }
    let n = sol.n;
    let mut theta = vec![0.0; n];
    for &u in tree.order.iter().skip(1) {
        let (p, k) = tree.parent[u].expect("non-root has a parent");
        // arg W_pu = theta_p - theta_u
        theta[u] = theta[p] - entry(sol, k, p, u)?.arg();
    }
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let d = sol.w(i, i).ok_or(CertError::MissingEntry { branch: usize::MAX, from: i, to: i })?;
        v.push(Complex64::from_polar(d.re.max(0.0).sqrt(), theta[i]));
    }
    let w = outer(&v);
    let mut max_deviation: f64 = 0.0;
    for k in 0..case.branches.len() {
        let (i, j) = case.branch_ends(k);
        max_deviation = max_deviation.max((w[(i, j)] - entry(sol, k, i, j)?).norm());
    }
    Ok(RankOneCompletion { v, w, max_deviation })
}

pub fn outer(v: &[Complex64]) -> DMatrix<Complex64> {
    DMatrix::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj())
}

/// Worst violation of each operating limit at a recovered point, per-unit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintViolations {
    pub voltage: f64,
    pub pg: f64,
    pub qg: f64,
    pub line_limit: f64,
}

impl ConstraintViolations {
    pub fn max(&self) -> f64 {
        self.voltage.max(self.pg).max(self.qg).max(self.line_limit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredOperatingPoint {
    pub v: Vec<Complex64>,
    /// injection computed from `v` minus the injection the solver reported
    pub residuals: Vec<Complex64>,
    pub max_residual: f64,
    pub violations: ConstraintViolations,
    pub objective: f64,
}

impl RecoveredOperatingPoint {
    /// Power flow closes within `eps_residual` and no limit is violated
    /// beyond `limit_tol`.
    pub fn is_feasible(&self, tol: &Tolerances, limit_tol: f64) -> bool {
        self.max_residual <= tol.eps_residual && self.violations.max() <= limit_tol
    }
}

/// Voltages from the leading eigenpair of a certified `W`.
pub fn recover_voltages(
    w: &DMatrix<Complex64>,
    sol: &LiftedSolution,
    case: &NetworkCase,
    tol: &Tolerances,
) -> Result<RecoveredOperatingPoint, CertError> {
    if !rank1_certificate(w, tol)?.is_exact() {
        return Err(CertError::NotCertified);
    }
    let (vals, vecs) = hermitian_eigen(w);
    let n = w.nrows();
    let lam = vals[n - 1];
    let u = vecs.column(n - 1);
    let s = case.slack_index();
    let rot = if u[s].norm() > 0.0 { u[s].conj() / u[s].norm() } else { Complex64::new(1.0, 0.0) };
    let mut v: Vec<Complex64> = u.iter().map(|z| z * rot * lam.sqrt()).collect();
    v[s] = Complex64::new(v[s].norm(), 0.0);
    evaluate_point(&v, sol, case)
}

/// Recovers the operating point along the path the certificate took.
pub fn recover(
    sol: &LiftedSolution,
    case: &NetworkCase,
    cert: &ExactnessCertificate,
) -> Result<RecoveredOperatingPoint, CertError> {
    if !cert.is_exact() {
        return Err(CertError::NotCertified);
    }
    match cert.path {
        CertPath::DenseRank => {
            let w = extract_dense_w(sol).map_err(|_| CertError::NotCertified)?;
            recover_voltages(&w, sol, case, &cert.tolerances)
        }
        CertPath::SparseCompletion => {
            let g = PowerGraph::from_case(case);
            let tree = spanning_tree(&g)?;
            let c = complete_rank1(sol, case, &tree, &cert.tolerances)?;
            evaluate_point(&c.v, sol, case)
        }
    }
}

/// Branch flows `(S_from, S_to)` of `v` under the pi-model.
pub fn branch_flows(case: &NetworkCase, v: &[Complex64]) -> Vec<(Complex64, Complex64)> {
    (0..case.branches.len())
        .map(|k| {
            let (f, t) = case.branch_ends(k);
            let y = branch_admittance(&case.branches[k]);
            let sf = v[f] * (y.ff * v[f] + y.ft * v[t]).conj();
            let st = v[t] * (y.tf * v[f] + y.tt * v[t]).conj();
            (sf, st)
        })
        .collect()
}

/// Checks `v` against the AC equations, with the generator dispatch taken
/// from the relaxation optimum.
pub fn evaluate_point(v: &[Complex64], sol: &LiftedSolution, case: &NetworkCase) -> Result<RecoveredOperatingPoint, CertError> {
    let n = case.n_buses();
    if v.len() != n {
        return Err(CertError::WrongLength { got: v.len(), n });
    }
    let flows = branch_flows(case, v);
    let mut calc: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(case.buses[i].gs, -case.buses[i].bs) * v[i].norm_sqr())
        .collect();
    let mut viol = ConstraintViolations::default();
    for (k, &(sf, st)) in flows.iter().enumerate() {
        let (f, t) = case.branch_ends(k);
        calc[f] += sf;
        calc[t] += st;
        if let Some(smax) = case.branches[k].smax {
            viol.line_limit = viol.line_limit.max(sf.norm() - smax).max(st.norm() - smax);
        }
    }
    let residuals: Vec<Complex64> =
        (0..n).map(|i| calc[i] - Complex64::new(sol.p_inj[i], sol.q_inj[i])).collect();
    let max_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.re.abs()).max(r.im.abs()));
    for (i, b) in case.buses.iter().enumerate() {
        let m = v[i].norm();
        viol.voltage = viol.voltage.max(b.vmin - m).max(m - b.vmax);
    }
    let mut objective = 0.0;
    for (g, gen) in case.generators.iter().enumerate() {
        viol.pg = viol.pg.max(gen.pmin - sol.pg[g]).max(sol.pg[g] - gen.pmax);
        viol.qg = viol.qg.max(gen.qmin - sol.qg[g]).max(sol.qg[g] - gen.qmax);
        objective += case.gen_cost(g, sol.pg[g]);
    }
    Ok(RecoveredOperatingPoint { v: v.to_vec(), residuals, max_residual, violations: viol, objective })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GapError {
    #[error("no reference objective")]
    Unavailable,
    #[error("reference objective must be positive, got {0}")]
    NonPositiveReference(f64),
}

/// Gaps this close to zero, in percent, count as solver noise.
pub const GAP_NOISE_PERCENT: f64 = 1e-4;

/// `100 (reference - relaxation) / reference`.
pub fn optimality_gap(relax_obj: f64, reference_obj: Option<f64>) -> Result<f64, GapError> {
    let r = reference_obj.ok_or(GapError::Unavailable)?;
    if !(r > 0.0) {
        return Err(GapError::NonPositiveReference(r));
    }
    let gap = 100.0 * (r - relax_obj) / r;
    Ok(if gap.abs() <= GAP_NOISE_PERCENT { 0.0 } else { gap })
}

#[cfg(test)]
mod tests;
