//! Solving conic programs and mapping solutions back to the lifted variables.

mod clarabel;
mod external;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{ConeKind, ConicProgram};
use crate::netmodel::NetworkCase;
use crate::relaxation::{BuiltRelaxation, RelaxationKind};

pub use self::clarabel::ClarabelBackend;
pub use self::external::{solve_cbf_file, ExternalBackend};

/// Environment variable that overrides the configured backend.
pub const BACKEND_ENV: &str = "OPFCERT_BACKEND";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendSelector {
    Clarabel,
    /// command run as `<cmd> problem.cbf solution.txt`
    External(String),
}

impl FromStr for BackendSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            _ if s.eq_ignore_ascii_case("clarabel") => Ok(Self::Clarabel),
            Some(("external", cmd)) if !cmd.trim().is_empty() => Ok(Self::External(cmd.trim().to_string())),
            _ => Err(format!("unknown backend '{s}' (expected 'clarabel' or 'external:<command>')")),
        }
    }
}

impl fmt::Display for BackendSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Clarabel => f.write_str("clarabel"),
            Self::External(cmd) => write!(f, "external:{cmd}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol_feas: f64,
    pub tol_gap_rel: f64,
    pub max_iter: u32,
    /// seconds
    pub time_limit: Option<f64>,
    pub backend: BackendSelector,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_feas: 1e-8,
            tol_gap_rel: 1e-8,
            max_iter: 200,
            time_limit: None,
            backend: BackendSelector::Clarabel,
        }
    }
}

impl SolverConfig {
    /// Applies `OPFCERT_BACKEND` if it is set.
    pub fn with_env_override(mut self) -> Result<Self, String> {
        if let Ok(value) = std::env::var(BACKEND_ENV) {
            if !value.trim().is_empty() {
                self.backend = value.parse()?;
            }
        }
        Ok(self)
    }

    pub fn backend(&self) -> Box<dyn Backend> {
        match &self.backend {
            BackendSelector::Clarabel => Box::new(ClarabelBackend),
            BackendSelector::External(cmd) => Box::new(ExternalBackend::new(cmd.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Optimal => "optimal",
            Self::Infeasible => "infeasible",
            Self::Unbounded => "unbounded",
            Self::NumericalFailure => "numerical-failure",
        })
    }
}

/// What a backend returns: a point in the program's own variables.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub backend: String,
    pub iterations: u32,
    pub solve_time_s: f64,
    pub gap_rel: Option<f64>,
    /// largest row or cone violation of the returned point
    pub max_violation: f64,
    pub worst_constraint: Option<String>,
    /// backend stopped at its reduced-accuracy tolerances
    pub reduced_accuracy: bool,
    /// largest disagreement between positions of a real PSD embedding that
    /// must repeat the same entry of a Hermitian block
    pub embedding_discrepancy: f64,
    pub message: Option<String>,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> String;
    fn solve_program(&self, prog: &ConicProgram, cfg: &SolverConfig) -> RawSolution;
}

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("the solution carries only {have} of {need} entries of W; use the completion path instead")]
    SparseSupport { have: usize, need: usize },
    #[error("solver status is {0}, not optimal")]
    NotOptimal(SolveStatus),
}

/// Optimal point of a relaxation in network terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSolution {
    pub case: String,
    pub kind: RelaxationKind,
    pub n: usize,
    pub status: SolveStatus,
    pub objective: f64,
    /// upper triangle of W, diagonal included
    pub w: BTreeMap<(usize, usize), Complex64>,
    pub v: Option<Vec<Complex64>>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    /// net injection per bus, generation minus demand
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub flow_from: Vec<Complex64>,
    pub flow_to: Vec<Complex64>,
    pub diagnostics: SolveDiagnostics,
}

impl LiftedSolution {
    pub fn w(&self, i: usize, j: usize) -> Option<Complex64> {
        if i <= j {
            self.w.get(&(i, j)).copied()
        } else {
            self.w.get(&(j, i)).map(|z| z.conj())
        }
    }

    pub fn has_full_support(&self) -> bool {
        self.w.len() == self.n * (self.n + 1) / 2
    }
}

pub fn solve(built: &BuiltRelaxation, case: &NetworkCase, cfg: &SolverConfig) -> LiftedSolution {
    let raw = cfg.backend().solve_program(&built.program, cfg);
    lift_solution(built, case, raw)
}

/// Maps a raw program solution to network quantities.
pub fn lift_solution(built: &BuiltRelaxation, case: &NetworkCase, raw: RawSolution) -> LiftedSolution {
    let x = &raw.x;
    let idx = &built.index;
    let n = idx.n();
    let ok = x.len() == built.program.n_vars();
    let get = |v: usize| if ok { x[v] } else { f64::NAN };

    let mut w = BTreeMap::new();
    for i in 0..n {
        w.insert((i, i), Complex64::new(get(idx.diag_var(i)), 0.0));
    }
    for (i, j) in idx.pairs() {
        let z = if ok { idx.w(i, j).eval(x) } else { Complex64::new(f64::NAN, f64::NAN) };
        w.insert((i, j), z);
    }
    if let (Some(plan), true) = (&built.chordal, ok && raw.status == SolveStatus::Optimal) {
        let mut m = DMatrix::from_fn(n, n, |i, j| {
            if plan.covered(i, j) {
                if i <= j {
                    w[&(i, j)]
                } else {
                    w[&(j, i)].conj()
                }
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        plan.max_det_complete(&mut m);
        for j in 0..n {
            for i in 0..j {
                w.entry((i, j)).or_insert(m[(i, j)]);
            }
        }
    }
    let v = idx.has_voltages().then(|| {
        (0..n)
            .map(|i| {
                let e = idx.voltage(i).expect("voltages present");
                if ok {
                    e.eval(x)
                } else {
                    Complex64::new(f64::NAN, f64::NAN)
                }
            })
            .collect()
    });
    let vars = &built.vars;
    let pg: Vec<f64> = vars.pg.iter().map(|&v| get(v)).collect();
    let qg: Vec<f64> = vars.qg.iter().map(|&v| get(v)).collect();
    let mut p_inj: Vec<f64> = case.buses.iter().map(|b| -b.pd).collect();
    let mut q_inj: Vec<f64> = case.buses.iter().map(|b| -b.qd).collect();
    for g in 0..case.generators.len() {
        p_inj[case.gen_bus(g)] += pg[g];
        q_inj[case.gen_bus(g)] += qg[g];
    }
    let flow_from = (0..case.branches.len()).map(|k| Complex64::new(get(vars.pf[k]), get(vars.qf[k]))).collect();
    let flow_to = (0..case.branches.len()).map(|k| Complex64::new(get(vars.pt[k]), get(vars.qt[k]))).collect();

    let mut diagnostics = raw.diagnostics;
    if ok {
        let (viol, tag) = built.program.max_violation(x);
        diagnostics.max_violation = viol;
        diagnostics.worst_constraint = tag;
        diagnostics.embedding_discrepancy = embedding_discrepancy(&built.program, x);
    }
    LiftedSolution {
        case: case.name.clone(),
        kind: built.kind,
        n,
        status: raw.status,
        objective: raw.objective,
        w,
        v,
        pg,
        qg,
        p_inj,
        q_inj,
        flow_from,
        flow_to,
        diagnostics,
    }
}

fn embedding_discrepancy(prog: &ConicProgram, x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for c in &prog.cones {
        let ConeKind::Psd { dim } = c.kind else { continue };
        if dim % 2 != 0 {
            continue;
        }
        let d = dim / 2;
        let e = |i: usize, j: usize| c.psd_entry(i, j).eval(x);
        for b in 0..d {
            for a in 0..=b {
                worst = worst.max((e(a, b) - e(a + d, b + d)).abs());
                worst = worst.max((e(a, b + d) + e(b, a + d)).abs());
            }
        }
    }
    worst
}

/// Dense Hermitian `W` from a full-support solution.
pub fn extract_dense_w(sol: &LiftedSolution) -> Result<DMatrix<Complex64>, SolveError> {
    if !sol.has_full_support() {
        return Err(SolveError::SparseSupport { have: sol.w.len(), need: sol.n * (sol.n + 1) / 2 });
    }
    let n = sol.n;
    let m = DMatrix::from_fn(n, n, |i, j| sol.w(i, j).expect("full support"));
    // (W + W^H) / 2
    Ok((&m + m.adjoint()).scale(0.5))
}

#[cfg(test)]
mod tests;
