use std::process::Command;
use std::time::Instant;

use super::{Backend, RawSolution, SolveDiagnostics, SolveStatus, SolverConfig};
use crate::conic::ConicProgram;

/// Runs an external solver as `<cmd> problem.cbf solution.txt`.
///
/// The solution file holds `status <optimal|infeasible|unbounded|...>`,
/// an optional `objective <value>` line, then `x` followed by one value
/// per line in variable order.
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    command: String,
}

impl ExternalBackend {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalBackend { command: command.into() }
    }
}

impl Backend for ExternalBackend {
    fn name(&self) -> String {
        format!("external:{}", self.command)
    }

    fn solve_program(&self, prog: &ConicProgram, _cfg: &SolverConfig) -> RawSolution {
        let start = Instant::now();
        let mut diagnostics = SolveDiagnostics { backend: self.name(), ..Default::default() };
        let fail = |mut d: SolveDiagnostics, msg: String| {
            d.message = Some(msg);
            d.solve_time_s = start.elapsed().as_secs_f64();
            RawSolution { status: SolveStatus::NumericalFailure, x: vec![], objective: f64::NAN, diagnostics: d }
        };

        let dir = match tempfile::tempdir() {
            Ok(d) => d,
            Err(e) => return fail(diagnostics, format!("cannot create work directory: {e}")),
        };
        let problem = dir.path().join("problem.cbf");
        let solution = dir.path().join("solution.txt");
        if let Err(e) = std::fs::write(&problem, prog.to_cbf()) {
            return fail(diagnostics, format!("cannot write {}: {e}", problem.display()));
        }
        let mut parts = self.command.split_whitespace();
        let Some(program) = parts.next() else {
            return fail(diagnostics, "empty command".into());
        };
        let output = Command::new(program).args(parts).arg(&problem).arg(&solution).output();
        match output {
            Err(e) => return fail(diagnostics, format!("cannot run '{program}': {e}")),
            Ok(out) if !out.status.success() => {
                let stderr = String::from_utf8_lossy(&out.stderr);
                return fail(diagnostics, format!("'{program}' exited with {}: {}", out.status, stderr.trim()));
            }
            Ok(_) => {}
        }
        let text = match std::fs::read_to_string(&solution) {
            Ok(t) => t,
            Err(e) => return fail(diagnostics, format!("cannot read solution: {e}")),
        };
        match parse_solution(&text, prog.n_vars()) {
            Ok((status, objective, x)) => {
                diagnostics.solve_time_s = start.elapsed().as_secs_f64();
                let objective = match (status, objective) {
                    (SolveStatus::Optimal, _) if x.len() == prog.n_vars() => prog.objective.eval(&x),
                    (_, Some(o)) => o,
                    _ => f64::NAN,
                };
                RawSolution { status, x, objective, diagnostics }
            }
            Err(msg) => {
                diagnostics = SolveDiagnostics { backend: self.name(), ..Default::default() };
                fail(diagnostics, msg)
            }
        }
    }
}

pub(crate) fn parse_solution(text: &str, n: usize) -> Result<(SolveStatus, Option<f64>, Vec<f64>), String> {
    let mut status = None;
    let mut objective = None;
    let mut x = Vec::new();
    let mut in_x = false;
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| format!("solution line {}: {what}", k + 1);
        if in_x {
            x.push(line.parse::<f64>().map_err(|_| bad("expected a number"))?);
            continue;
        }
        match line.split_once(char::is_whitespace).map(|(a, b)| (a, b.trim())) {
            Some(("status", s)) => {
                status = Some(match s {
                    "optimal" => SolveStatus::Optimal,
                    "infeasible" => SolveStatus::Infeasible,
                    "unbounded" => SolveStatus::Unbounded,
                    _ => SolveStatus::NumericalFailure,
                })
            }
            Some(("objective", v)) => objective = Some(v.parse::<f64>().map_err(|_| bad("bad objective"))?),
            None if line == "x" => in_x = true,
            _ => return Err(bad("unrecognized line")),
        }
    }
    let status = status.ok_or("solution file has no status line")?;
    if status == SolveStatus::Optimal && x.len() != n {
        return Err(format!("solution has {} values for {n} variables", x.len()));
    }
    Ok((status, objective, x))
}

/// Solves a CBF file with the native backend and writes a solution file in
/// the format [`ExternalBackend`] reads.
pub fn solve_cbf_file(problem: &std::path::Path, solution: &std::path::Path) -> Result<SolveStatus, String> {
    let text = std::fs::read_to_string(problem).map_err(|e| format!("{}: {e}", problem.display()))?;
    let prog = ConicProgram::from_cbf(&text).map_err(|e| e.to_string())?;
    let raw = super::ClarabelBackend.solve_program(&prog, &SolverConfig::default());
    let mut out = format!("status {}\nobjective {:e}\nx\n", raw.status, raw.objective);
    for v in &raw.x {
        out.push_str(&format!("{v:e}\n"));
    }
    std::fs::write(solution, out).map_err(|e| format!("{}: {e}", solution.display()))?;
    Ok(raw.status)
}
