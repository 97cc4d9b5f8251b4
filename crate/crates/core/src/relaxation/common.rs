use super::index::{ComplexExpr, SeriesLine};
use super::{BuildError, LiftedVariableIndex};
use crate::conic::{AffineExpr, ConicProgram, Var};
use crate::netmodel::{branch_admittance, CostCurve, NetworkCase};

/// Variables shared by every relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonVars {
    pub pg: Vec<Var>,
    pub qg: Vec<Var>,
    /// from-side and to-side branch flows
    pub pf: Vec<Var>,
    pub qf: Vec<Var>,
    pub pt: Vec<Var>,
    pub qt: Vec<Var>,
    /// cost epigraph variable per generator, when the cost is not affine,
    /// with the $/h value of one unit of it
    pub cost_epi: Vec<Option<(Var, f64)>>,
}

/// Linear model of the network over `W`: flow definitions, nodal balance,
/// voltage and generator bounds, line limits and the cost.
pub fn build_common(
    case: &NetworkCase,
    index: &LiftedVariableIndex,
    prog: &mut ConicProgram,
) -> Result<CommonVars, BuildError> {
    let n_gen = case.generators.len();
    let n_br = case.branches.len();
    let base = case.base_mva;

    let mut vars = CommonVars {
        pg: Vec::with_capacity(n_gen),
        qg: Vec::with_capacity(n_gen),
        pf: Vec::with_capacity(n_br),
        qf: Vec::with_capacity(n_br),
        pt: Vec::with_capacity(n_br),
        qt: Vec::with_capacity(n_br),
        cost_epi: Vec::with_capacity(n_gen),
    };
    for g in 0..n_gen {
        vars.pg.push(prog.new_var(format!("pg[{g}]")));
        vars.qg.push(prog.new_var(format!("qg[{g}]")));
    }
    for k in 0..n_br {
        vars.pf.push(prog.new_var(format!("pf[{k}]")));
        vars.qf.push(prog.new_var(format!("qf[{k}]")));
        vars.pt.push(prog.new_var(format!("pt[{k}]")));
        vars.qt.push(prog.new_var(format!("qt[{k}]")));
    }

    for (k, br) in case.branches.iter().enumerate() {
        let (f, t) = case.branch_ends(k);
        let label = format!("branch {k} ({}-{})", br.from, br.to);
        let (sf, st) = match index.series_between(f, t).filter(|l| l.branch == k) {
            Some(line) => {
                let (sp, sc) = series_flows(index, line);
                if line.parent == f {
                    (sp, sc)
                } else {
                    (sc, sp)
                }
            }
            None => {
                let y = branch_admittance(br);
                let sf = index.w(f, f).times(y.ff.conj()).plus(&index.w(f, t).times(y.ft.conj()));
                let st = index.w(t, t).times(y.tt.conj()).plus(&index.w(t, f).times(y.tf.conj()));
                (sf, st)
            }
        };
        prog.add_eq(AffineExpr::var(vars.pf[k]).minus(&sf.re), format!("flow p from {label}"));
        prog.add_eq(AffineExpr::var(vars.qf[k]).minus(&sf.im), format!("flow q from {label}"));
        prog.add_eq(AffineExpr::var(vars.pt[k]).minus(&st.re), format!("flow p to {label}"));
        prog.add_eq(AffineExpr::var(vars.qt[k]).minus(&st.im), format!("flow q to {label}"));
        if let Some(smax) = br.smax {
            let c = AffineExpr::constant(smax);
            prog.add_soc(
                vec![c.clone(), AffineExpr::var(vars.pf[k]), AffineExpr::var(vars.qf[k])],
                format!("limit from {label}"),
            );
            prog.add_soc(
                vec![c, AffineExpr::var(vars.pt[k]), AffineExpr::var(vars.qt[k])],
                format!("limit to {label}"),
            );
        }
    }

    let gens_at = case.gens_by_bus();
    for (i, bus) in case.buses.iter().enumerate() {
        let wii = index.w(i, i).re;
        let mut p = AffineExpr::constant(-bus.pd);
        let mut q = AffineExpr::constant(-bus.qd);
        p.add_scaled(&wii, -bus.gs);
        q.add_scaled(&wii, bus.bs);
        for &g in &gens_at[i] {
            p.add_term(vars.pg[g], 1.0);
            q.add_term(vars.qg[g], 1.0);
        }
        for (k, _) in case.branches.iter().enumerate() {
            let (f, t) = case.branch_ends(k);
            if f == i {
                p.add_term(vars.pf[k], -1.0);
                q.add_term(vars.qf[k], -1.0);
            }
            if t == i {
                p.add_term(vars.pt[k], -1.0);
                q.add_term(vars.qt[k], -1.0);
            }
        }
        prog.add_eq(p, format!("balance p bus {}", bus.id));
        prog.add_eq(q, format!("balance q bus {}", bus.id));
        prog.add_bounds(&wii, bus.vmin * bus.vmin, bus.vmax * bus.vmax, &format!("voltage bus {}", bus.id));
    }

    let mut objective = AffineExpr::zero();
    for (g, gen) in case.generators.iter().enumerate() {
        let bus = case.buses[case.gen_bus(g)].id;
        prog.add_bounds(&AffineExpr::var(vars.pg[g]), gen.pmin, gen.pmax, &format!("pg gen {g} bus {bus}"));
        prog.add_bounds(&AffineExpr::var(vars.qg[g]), gen.qmin, gen.qmax, &format!("qg gen {g} bus {bus}"));
        check_bounded(&gen.cost, gen.pmin, gen.pmax).map_err(|side| BuildError::UnboundedCost { gen: g, bus, side })?;
        let pg = vars.pg[g];
        let epi = match &gen.cost {
            CostCurve::Polynomial { quadratic, linear, constant } => {
                objective.add_term(pg, linear * base);
                objective.add_constant(*constant);
                if *quadratic > 0.0 {
                    // t >= pg^2 in p.u., worth c2 * base^2 $/h per unit
                    let t = prog.new_var(format!("cost[{g}]"));
                    prog.add_rotated_soc(
                        vec![AffineExpr::var(t), AffineExpr::constant(0.5), AffineExpr::var(pg)],
                        format!("cost gen {g} bus {bus}"),
                    );
                    let unit = quadratic * base * base;
                    objective.add_term(t, unit);
                    Some((t, unit))
                } else {
                    None
                }
            }
            CostCurve::PiecewiseLinear { points } if points.len() == 1 => {
                objective.add_constant(points[0].1);
                None
            }
            curve @ CostCurve::PiecewiseLinear { .. } => {
                let t = prog.new_var(format!("cost[{g}]"));
                let unit = curve.segments().fold(1.0f64, |m, (slope, c)| m.max((slope * base).abs()).max(c.abs()));
                for (s, (slope, intercept)) in curve.segments().enumerate() {
                    let mut row = AffineExpr::var(t);
                    row.add_term(pg, -slope * base / unit);
                    row.add_constant(-intercept / unit);
                    prog.add_geq(row, format!("cost gen {g} bus {bus} segment {s}"));
                }
                objective.add_term(t, unit);
                Some((t, unit))
            }
        };
        vars.cost_epi.push(epi);
    }
    prog.objective = objective.canonical();
    Ok(vars)
}

/// Parent-end and child-end flows of a tree line: `S - j b/2 A_p` and
/// `-S + z l - j b/2 A_c`.
fn series_flows(index: &LiftedVariableIndex, line: &SeriesLine) -> (ComplexExpr, ComplexExpr) {
    let s = line.s_expr();
    let mut sp = s.clone();
    sp.im.add_scaled(&index.scaled_diag(line.parent, line.tap_parent), -line.half_charge);
    let mut sc = s.scaled(-1.0);
    sc.re.add_term(line.l, line.z.re);
    sc.im.add_term(line.l, line.z.im);
    sc.im.add_scaled(&index.scaled_diag(line.child, line.tap_child), -line.half_charge);
    (sp, sc)
}

/// `Err(side)` when the cost decreases without bound toward an open side.
fn check_bounded(cost: &CostCurve, pmin: f64, pmax: f64) -> Result<(), &'static str> {
    let (first, last) = match cost {
        CostCurve::Polynomial { quadratic, linear, .. } => {
            if *quadratic > 0.0 {
                return Ok(());
            }
            (*linear, *linear)
        }
        curve @ CostCurve::PiecewiseLinear { .. } => {
            let slopes: Vec<f64> = curve.segments().map(|(s, _)| s).collect();
            match (slopes.first(), slopes.last()) {
                (Some(&a), Some(&b)) => (a, b),
                _ => return Ok(()),
            }
        }
    };
    if last < 0.0 && !pmax.is_finite() {
        return Err("upper");
    }
    if first > 0.0 && !pmin.is_finite() {
        return Err("lower");
    }
    Ok(())
}
