use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::conic::{AffineExpr, ConicProgram, Var};
use crate::graph::SpanningTree;
use crate::netmodel::NetworkCase;

/// A complex affine expression as a pair of real ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComplexExpr {
    pub re: AffineExpr,
    pub im: AffineExpr,
}

impl ComplexExpr {
    pub fn real(re: AffineExpr) -> Self {
        ComplexExpr { re, im: AffineExpr::zero() }
    }

    pub fn pair((re, im): (Var, Var)) -> Self {
        ComplexExpr { re: AffineExpr::var(re), im: AffineExpr::var(im) }
    }

    pub fn conj(&self) -> Self {
        ComplexExpr { re: self.re.clone(), im: self.im.scaled(-1.0) }
    }

    /// `c * self`
    pub fn times(&self, c: Complex64) -> Self {
        let mut re = self.re.scaled(c.re);
        re.add_scaled(&self.im, -c.im);
        let mut im = self.im.scaled(c.re);
        im.add_scaled(&self.re, c.im);
        ComplexExpr { re, im }
    }

    pub fn scaled(&self, s: f64) -> Self {
        ComplexExpr { re: self.re.scaled(s), im: self.im.scaled(s) }
    }

    pub fn plus(&self, other: &ComplexExpr) -> Self {
        ComplexExpr { re: self.re.plus(&other.re), im: self.im.plus(&other.im) }
    }

    pub fn minus(&self, other: &ComplexExpr) -> Self {
        ComplexExpr { re: self.re.minus(&other.re), im: self.im.minus(&other.im) }
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        Complex64::new(self.re.eval(x), self.im.eval(x))
    }
}

/// A spanning-tree branch written in branch-flow coordinates.
///
/// With `u_p = v_p / tap_parent` and the series current `I` leaving the
/// parent end, the variables are `S = u_p conj(I)` and `l = |I|^2`. The
/// child's voltage drop, the line entry of `W` and both end flows are linear
/// in them, and the 2x2 minor of `W` is a scaled copy of `A_p l - |S|^2`
/// where `A_p = |u_p|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesLine {
    pub branch: usize,
    pub parent: usize,
    pub child: usize,
    /// complex ratio on each end, one on the plain end
    pub tap_parent: Complex64,
    pub tap_child: Complex64,
    pub z: Complex64,
    pub half_charge: f64,
    /// rough size of the current, used to balance cone blocks
    pub scale: f64,
    pub s: (Var, Var),
    pub l: Var,
    /// first moment of the current (TCR)
    pub current: Option<(Var, Var)>,
    /// `v_slack conj(I)` (STCR)
    pub slack_moment: Option<(Var, Var)>,
}

impl SeriesLine {
    pub fn s_expr(&self) -> ComplexExpr {
        ComplexExpr::pair(self.s)
    }

    pub fn l_expr(&self) -> AffineExpr {
        AffineExpr::var(self.l)
    }

    /// `S / scale`
    pub fn s_scaled(&self) -> ComplexExpr {
        self.s_expr().scaled(1.0 / self.scale)
    }

    /// `l / scale^2`
    pub fn l_scaled(&self) -> AffineExpr {
        AffineExpr::term(self.l, self.scale.powi(-2))
    }

    /// `z^H S`
    fn drop_term(&self) -> ComplexExpr {
        self.s_expr().times(self.z.conj())
    }

    /// `(S, l, I)` at the operating point `v`
    fn values(&self, v: &[Complex64]) -> (Complex64, f64, Complex64) {
        let up = v[self.parent] / self.tap_parent;
        let uc = v[self.child] / self.tap_child;
        let i = (up - uc) / self.z;
        (up * i.conj(), i.norm_sqr(), i)
    }
}

/// Load and generation capacity below each bus, clamped to `[1e-3, 1]` p.u.
/// A tree line cannot carry much more current than what sits below it, and
/// feeder-end lines carry far less than one per unit.
fn current_scales(case: &NetworkCase, tree: &SpanningTree) -> Vec<f64> {
    let mut below: Vec<f64> = case.buses.iter().map(|b| b.pd.hypot(b.qd)).collect();
    for g in &case.generators {
        let cap = g.pmax.abs().max(g.pmin.abs()).hypot(g.qmax.abs().max(g.qmin.abs()));
        if cap.is_finite() {
            below[case.bus_index(g.bus).expect("generator bus exists")] += cap;
        }
    }
    for &c in tree.order.iter().rev() {
        if let Some((p, _)) = tree.parent[c] {
            below[p] += below[c];
        }
    }
    below.iter().map(|b| b.clamp(1e-3, 1.0)).collect()
}

/// Program variables standing for the lifted matrix `W` (and `v` for TCR).
///
/// Diagonal entries are variables. Spanning-tree lines are expressions in
/// their branch-flow variables, tied to the diagonal by one drop row each.
/// Every other entry the relaxation needs is a plain (Re, Im) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedVariableIndex {
    n: usize,
    slack: usize,
    diag: Vec<Var>,
    plain: BTreeMap<(usize, usize), (Var, Var)>,
    series: Vec<SeriesLine>,
    series_at: BTreeMap<(usize, usize), usize>,
    voltage: Option<Vec<ComplexExpr>>,
    /// real slack voltage, absent when its magnitude is fixed
    slack_v: Option<Var>,
    fixed_slack: Option<f64>,
}

impl LiftedVariableIndex {
    pub fn new(prog: &mut ConicProgram, case: &NetworkCase, tree: &SpanningTree) -> Self {
        let n = case.n_buses();
        let diag: Vec<Var> = (0..n).map(|i| prog.new_var(format!("W[{i},{i}]"))).collect();
        let mut index = LiftedVariableIndex {
            n,
            slack: tree.root,
            diag,
            plain: BTreeMap::new(),
            series: Vec::with_capacity(n.saturating_sub(1)),
            series_at: BTreeMap::new(),
            voltage: None,
            slack_v: None,
            fixed_slack: None,
        };
        let scale = current_scales(case, tree);
        for &c in &tree.order[1..] {
            let (p, k) = tree.parent[c].expect("non-root vertex has a parent");
            let br = &case.branches[k];
            let ratio = Complex64::from_polar(br.tap, br.shift);
            let one = Complex64::new(1.0, 0.0);
            let from_is_parent = case.branch_ends(k).0 == p;
            let line = SeriesLine {
                branch: k,
                parent: p,
                child: c,
                tap_parent: if from_is_parent { ratio } else { one },
                tap_child: if from_is_parent { one } else { ratio },
                z: Complex64::new(br.r, br.x),
                half_charge: br.b_charge / 2.0,
                scale: scale[c],
                s: (prog.new_var(format!("ReS[{k}]")), prog.new_var(format!("ImS[{k}]"))),
                l: prog.new_var(format!("l[{k}]")),
                current: None,
                slack_moment: None,
            };
            // A_c = A_p - 2 Re(z^H S) + |z|^2 l
            let mut row = index.scaled_diag(c, line.tap_child);
            row.add_scaled(&index.scaled_diag(p, line.tap_parent), -1.0);
            row.add_scaled(&line.drop_term().re, 2.0);
            row.add_term(line.l, -line.z.norm_sqr());
            prog.add_eq(row, format!("drop branch {k} ({}-{})", case.buses[p].id, case.buses[c].id));
            index.series_at.insert((p.min(c), p.max(c)), index.series.len());
            index.series.push(line);
        }
        index
    }

    /// Per bus, the no-load ratio `v_b / v_slack` and a bound on how far
    /// `v_b / v_slack` strays from it under the scaled currents.
    pub fn nominal(&self) -> Vec<(Complex64, f64)> {
        let mut out = vec![(Complex64::new(1.0, 0.0), 0.0); self.n];
        for line in &self.series {
            let (tau, d) = out[line.parent];
            let tc = line.tap_child;
            out[line.child] = (tc * tau / line.tap_parent, tc.norm() * (d / line.tap_parent.norm() + line.z.norm() * line.scale));
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `W_ii / |t|^2`
    pub fn scaled_diag(&self, i: usize, tap: Complex64) -> AffineExpr {
        AffineExpr::term(self.diag[i], 1.0 / tap.norm_sqr())
    }

    pub fn ensure_pair(&mut self, prog: &mut ConicProgram, i: usize, j: usize) {
        if self.has(i, j) {
            return;
        }
        let key = (i.min(j), i.max(j));
        let re = prog.new_var(format!("ReW[{},{}]", key.0, key.1));
        let im = prog.new_var(format!("ImW[{},{}]", key.0, key.1));
        self.plain.insert(key, (re, im));
    }

    /// Adds `v`, real at the slack and constant there when its magnitude is
    /// fixed. Below the slack, `v_c = t_c (v_p / t_p - z J)` ties each voltage
    /// to its parent through one current variable `J` per tree line.
    pub fn add_voltages(&mut self, prog: &mut ConicProgram, case: &NetworkCase) {
        let slack = self.slack;
        let bus = &case.buses[slack];
        self.fixed_slack = (bus.vmin == bus.vmax).then_some(bus.vmin);
        let mut v = vec![ComplexExpr::default(); self.n];
        v[slack] = match self.fixed_slack {
            Some(a) => ComplexExpr::real(AffineExpr::constant(a)),
            None => {
                let var = prog.new_var(format!("Rev[{slack}]"));
                self.slack_v = Some(var);
                ComplexExpr::real(AffineExpr::var(var))
            }
        };
        let mut rows = Vec::new();
        for line in &mut self.series {
            let k = line.branch;
            let j = (prog.new_var(format!("ReJ[{k}]")), prog.new_var(format!("ImJ[{k}]")));
            line.current = Some(j);
            let up = v[line.parent].times(line.tap_parent.inv());
            let drop = up.minus(&ComplexExpr::pair(j).times(line.z)).times(line.tap_child);
            let c = line.child;
            v[c] = ComplexExpr::pair((prog.new_var(format!("Rev[{c}]")), prog.new_var(format!("Imv[{c}]"))));
            rows.push((v[c].minus(&drop), format!("branch {k} ({}-{})", case.buses[line.parent].id, case.buses[c].id)));
        }
        for (d, label) in rows {
            prog.add_eq(d.re, format!("voltage drop re {label}"));
            prog.add_eq(d.im, format!("voltage drop im {label}"));
        }
        self.voltage = Some(v);
    }

    /// Adds the slack row of `W`. Below the slack's own neighbours each entry
    /// follows its parent's by `W_sc = conj(t_c) (W_sp / conj(t_p) - conj(z) X)`.
    pub fn add_slack_row(&mut self, prog: &mut ConicProgram, case: &NetworkCase) {
        let slack = self.slack;
        for s in 0..self.series.len() {
            if self.series[s].parent == slack {
                continue;
            }
            let k = self.series[s].branch;
            let x = (prog.new_var(format!("ReX[{k}]")), prog.new_var(format!("ImX[{k}]")));
            self.series[s].slack_moment = Some(x);
            let line = &self.series[s];
            let wsp = self.w(slack, line.parent).times(line.tap_parent.conj().inv());
            let wsc = wsp.minus(&ComplexExpr::pair(x).times(line.z.conj())).times(line.tap_child.conj());
            let c = line.child;
            let label = format!("branch {k} ({}-{})", case.buses[line.parent].id, case.buses[c].id);
            let key = (slack.min(c), slack.max(c));
            let upper = if slack < c { wsc } else { wsc.conj() };
            if !self.plain.contains_key(&key) {
                let re = prog.new_var(format!("ReW[{},{}]", key.0, key.1));
                let im = prog.new_var(format!("ImW[{},{}]", key.0, key.1));
                self.plain.insert(key, (re, im));
            }
            let d = ComplexExpr::pair(self.plain[&key]).minus(&upper);
            prog.add_eq(d.re, format!("slack row re {label}"));
            prog.add_eq(d.im, format!("slack row im {label}"));
        }
    }

    pub fn has(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        i == j || self.plain.contains_key(&key) || self.series_at.contains_key(&key)
    }

    /// Number of off-diagonal entries carried.
    pub fn n_pairs(&self) -> usize {
        self.plain.len() + self.series.len()
    }

    /// Off-diagonal pairs `(i, j)`, `i < j`, in increasing order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self.plain.keys().chain(self.series_at.keys()).copied().collect();
        out.sort_unstable();
        out
    }

    pub fn diag_var(&self, i: usize) -> Var {
        self.diag[i]
    }

    pub fn is_full(&self) -> bool {
        self.n_pairs() == self.n * (self.n.saturating_sub(1)) / 2
    }

    pub fn has_voltages(&self) -> bool {
        self.voltage.is_some()
    }

    pub fn series_lines(&self) -> &[SeriesLine] {
        &self.series
    }

    /// The tree line between `i` and `j`, if any.
    pub fn series_between(&self, i: usize, j: usize) -> Option<&SeriesLine> {
        self.series_at.get(&(i.min(j), i.max(j))).map(|&s| &self.series[s])
    }

    /// `W_ij` as an expression. Panics if the entry is not carried.
    pub fn w(&self, i: usize, j: usize) -> ComplexExpr {
        if i == j {
            return ComplexExpr::real(AffineExpr::var(self.diag[i]));
        }
        let key = (i.min(j), i.max(j));
        let upper = match self.plain.get(&key) {
            Some(&pair) => ComplexExpr::pair(pair),
            None => {
                let line = self.series_between(i, j).unwrap_or_else(|| panic!("W[{i},{j}] is not lifted"));
                let wpc = self.line_entry(line);
                if line.parent == key.0 {
                    wpc
                } else {
                    wpc.conj()
                }
            }
        };
        if i < j {
            upper
        } else {
            upper.conj()
        }
    }

    /// `W_pc = t_p conj(t_c) (A_p - conj(z) S)`
    fn line_entry(&self, line: &SeriesLine) -> ComplexExpr {
        let a = ComplexExpr::real(self.scaled_diag(line.parent, line.tap_parent));
        a.minus(&line.drop_term()).times(line.tap_parent * line.tap_child.conj())
    }

    pub fn voltage(&self, i: usize) -> Option<ComplexExpr> {
        self.voltage.as_ref().map(|v| v[i].clone())
    }

    /// Slack voltage when it is a constant of the program.
    pub fn fixed_slack_voltage(&self) -> Option<f64> {
        self.fixed_slack.filter(|_| self.voltage.is_some())
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn eval_w(&self, x: &[f64], i: usize, j: usize) -> Option<Complex64> {
        self.has(i, j).then(|| self.w(i, j).eval(x))
    }

    /// Writes the lifting of `v` into `x`. The slack entry of `v` must be real
    /// when voltages are carried.
    pub fn lift(&self, x: &mut [f64], v: &[Complex64]) {
        for i in 0..self.n {
            x[self.diag[i]] = v[i].norm_sqr();
        }
        for (&(i, j), &(re, im)) in &self.plain {
            let w = v[i] * v[j].conj();
            x[re] = w.re;
            x[im] = w.im;
        }
        let vs = v[self.slack];
        for line in &self.series {
            let (s, l, i) = line.values(v);
            x[line.s.0] = s.re;
            x[line.s.1] = s.im;
            x[line.l] = l;
            if let Some((re, im)) = line.current {
                x[re] = i.re;
                x[im] = i.im;
            }
            if let Some((re, im)) = line.slack_moment {
                let m = vs * i.conj();
                x[re] = m.re;
                x[im] = m.im;
            }
        }
        if let Some(var) = self.slack_v {
            x[var] = v[self.slack].re;
        }
        if let Some(exprs) = &self.voltage {
            for (i, e) in exprs.iter().enumerate() {
                if let (Some(re), Some(im)) = (e.re.as_single_var(), e.im.as_single_var()) {
                    x[re] = v[i].re;
                    x[im] = v[i].im;
                }
            }
        }
    }
}
