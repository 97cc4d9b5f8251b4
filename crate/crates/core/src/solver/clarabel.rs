use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
    SupportedConeT::{NonnegativeConeT, PSDTriangleConeT, SecondOrderConeT, ZeroConeT},
};

use super::{Backend, RawSolution, SolveDiagnostics, SolveStatus, SolverConfig};
use crate::conic::{tri_index, AffineExpr, ConeKind, ConicProgram, RowKind};

/// Native interior-point backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

struct Assembly {
    rows_i: Vec<usize>,
    rows_j: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    col: Vec<Option<usize>>,
}

impl Assembly {
    /// Appends `e ∈ K` as the row `s = b - A x` with `A = -coef`, `b = const`.
    fn push(&mut self, e: &AffineExpr, scale: f64) {
        let r = self.b.len();
        for &(v, c) in &e.terms {
            let j = self.col[v].expect("referenced variable has a column");
            self.rows_i.push(r);
            self.rows_j.push(j);
            self.vals.push(-c * scale);
        }
        self.b.push(e.constant * scale);
    }

    fn cone(&mut self, k: SupportedConeT<f64>) {
        let merged = match (self.cones.last_mut(), &k) {
            (Some(ZeroConeT(a)), ZeroConeT(b)) => {
                *a += b;
                true
            }
            (Some(NonnegativeConeT(a)), NonnegativeConeT(b)) => {
                *a += b;
                true
            }
            _ => false,
        };
        if !merged {
            self.cones.push(k);
        }
    }

    fn psd(&mut self, dim: usize, upper: &[AffineExpr]) {
        // svec: upper triangle by columns, off-diagonals scaled by sqrt(2)
        for j in 0..dim {
            for i in 0..=j {
                let scale = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                self.push(&upper[tri_index(i, j)], scale);
            }
        }
        self.cone(PSDTriangleConeT(dim));
    }
}

impl Backend for ClarabelBackend {
    fn name(&self) -> String {
        "clarabel".into()
    }

    fn solve_program(&self, prog: &ConicProgram, cfg: &SolverConfig) -> RawSolution {
        let start = Instant::now();
        let nv = prog.n_vars();

        let mut referenced = vec![false; nv];
        let mut mark = |e: &AffineExpr| e.terms.iter().for_each(|&(v, _)| referenced[v] = true);
        mark(&prog.objective);
        prog.rows.iter().for_each(|r| mark(&r.expr));
        prog.cones.iter().flat_map(|c| &c.entries).for_each(&mut mark);
        let mut col = vec![None; nv];
        let mut ncols = 0;
        for v in 0..nv {
            if referenced[v] {
                col[v] = Some(ncols);
                ncols += 1;
            }
        }

        let mut asm = Assembly { rows_i: vec![], rows_j: vec![], vals: vec![], b: vec![], cones: vec![], col };
        for kind in [RowKind::Eq, RowKind::Geq] {
            for r in prog.rows.iter().filter(|r| r.kind == kind) {
                asm.push(&r.expr, 1.0);
                asm.cone(match kind {
                    RowKind::Eq => ZeroConeT(1),
                    RowKind::Geq => NonnegativeConeT(1),
                });
            }
        }
        for c in &prog.cones {
            match c.kind {
                ConeKind::Soc => {
                    c.entries.iter().for_each(|e| asm.push(e, 1.0));
                    asm.cone(SecondOrderConeT(c.entries.len()));
                }
                ConeKind::RotatedSoc => {
                    let (a, b) = (&c.entries[0], &c.entries[1]);
                    asm.push(&a.plus(b), 1.0);
                    asm.push(&a.minus(b), 1.0);
                    c.entries[2..].iter().for_each(|e| asm.push(e, std::f64::consts::SQRT_2));
                    asm.cone(SecondOrderConeT(c.entries.len()));
                }
                ConeKind::Psd { dim } => asm.psd(dim, &c.entries),
            }
        }

        let m = asm.b.len();
        let a = CscMatrix::new_from_triplets(m, ncols, asm.rows_i, asm.rows_j, asm.vals);
        let p = CscMatrix::zeros((ncols, ncols));
        let mut q = vec![0.0; ncols];
        for &(v, c) in &prog.objective.terms {
            q[asm.col[v].expect("objective variable has a column")] += c;
        }

        // cost coefficients in $/h per p.u. stall the solver near optimality
        let qscale = q.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        q.iter_mut().for_each(|c| *c /= qscale);
        let mut diagnostics = SolveDiagnostics { backend: self.name(), ..Default::default() };
        let mut best: Option<(SolveStatus, bool, Vec<f64>)> = None;
        // equilibration helps the radial cases and hurts some meshed SDR
        // blocks, so a solve short of full accuracy is repeated without it
        for equilibrate in [true, false] {
            let mut builder = DefaultSettingsBuilder::default();
            builder
                .verbose(false)
                .tol_feas(cfg.tol_feas)
                .tol_gap_rel(cfg.tol_gap_rel)
                .max_iter(cfg.max_iter)
                .equilibrate_enable(equilibrate);
            if let Some(t) = cfg.time_limit {
                builder.time_limit(t);
            }
            let settings = builder.build().expect("valid settings");
            let mut solver = match DefaultSolver::new(&p, &q, &a, &asm.b, &asm.cones, settings) {
                Ok(s) => s,
                Err(e) => {
                    diagnostics.message = Some(format!("setup failed: {e}"));
                    return RawSolution { status: SolveStatus::NumericalFailure, x: vec![], objective: f64::NAN, diagnostics };
                }
            };
            solver.solve();
            let sol = &solver.solution;
            let (status, reduced) = match sol.status {
                SolverStatus::Solved => (SolveStatus::Optimal, false),
                SolverStatus::AlmostSolved => (SolveStatus::Optimal, true),
                SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => (SolveStatus::Infeasible, false),
                SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => (SolveStatus::Unbounded, false),
                _ => (SolveStatus::NumericalFailure, false),
            };
            let full = status == SolveStatus::Optimal && !reduced;
            let keep = match &best {
                None => true,
                Some((SolveStatus::Optimal, _, _)) => full,
                Some(_) => status == SolveStatus::Optimal,
            };
            diagnostics.iterations += sol.iterations;
            if keep {
                diagnostics.gap_rel = Some(solver.info.gap_rel);
                diagnostics.message = (status != SolveStatus::Optimal).then(|| format!("{:?}", sol.status));
                best = Some((status, reduced, sol.x.clone()));
            }
            if full || matches!(status, SolveStatus::Infeasible | SolveStatus::Unbounded) {
                break;
            }
        }
        let (status, reduced, solx) = best.expect("at least one attempt");
        diagnostics.reduced_accuracy = reduced;
        let mut x = vec![0.0; nv];
        for v in 0..nv {
            if let Some(j) = asm.col[v] {
                x[v] = solx[j];
            }
        }
        let objective = if status == SolveStatus::Optimal { prog.objective.eval(&x) } else { f64::NAN };
        diagnostics.solve_time_s = start.elapsed().as_secs_f64();
        RawSolution { status, x, objective, diagnostics }
    }
}
