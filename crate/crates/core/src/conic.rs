//! Solver-agnostic conic programs in real variables.
//!
//! A program minimizes an affine objective subject to affine rows (`= 0` or
//! `>= 0`) and cone memberships of affine vectors. PSD blocks store the upper
//! triangle of a symmetric matrix in column-major order, entry `(i, j)` with
//! `i <= j` at position `j * (j + 1) / 2 + i`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Var = usize;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        AffineExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(v: Var) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: Var, coef: f64) -> Self {
        AffineExpr { terms: vec![(v, coef)], constant: 0.0 }
    }

    pub fn add_term(&mut self, v: Var, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_scaled(&mut self, other: &AffineExpr, scale: f64) -> &mut Self {
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.constant += other.constant * scale;
        self
    }

    pub fn scaled(&self, scale: f64) -> AffineExpr {
        let mut e = AffineExpr::zero();
        e.add_scaled(self, scale);
        e
    }

    pub fn plus(&self, other: &AffineExpr) -> AffineExpr {
        let mut e = self.clone();
        e.add_scaled(other, 1.0);
        e
    }

    pub fn minus(&self, other: &AffineExpr) -> AffineExpr {
        let mut e = self.clone();
        e.add_scaled(other, -1.0);
        e
    }

    /// Merges duplicate variables, drops zeros, sorts by variable.
    pub fn canonical(&self) -> AffineExpr {
        let mut acc: BTreeMap<Var, f64> = BTreeMap::new();
        for &(v, c) in &self.terms {
            *acc.entry(v).or_insert(0.0) += c;
        }
        AffineExpr {
            terms: acc.into_iter().filter(|&(_, c)| c != 0.0).collect(),
            constant: self.constant,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    /// The variable if this expression is exactly `1 * v`.
    pub fn as_single_var(&self) -> Option<Var> {
        match self.canonical().terms.as_slice() {
            [(v, c)] if *c == 1.0 && self.constant == 0.0 => Some(*v),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    /// expr = 0
    Eq,
    /// expr >= 0
    Geq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub expr: AffineExpr,
    pub kind: RowKind,
    pub tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    /// e0 >= ||e[1..]||
    Soc,
    /// 2 e0 e1 >= ||e[2..]||^2, e0, e1 >= 0
    RotatedSoc,
    /// symmetric PSD matrix of the given dimension, upper triangle stored
    Psd { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub kind: ConeKind,
    pub entries: Vec<AffineExpr>,
    pub tag: String,
}

pub fn tri_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

pub fn tri_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

impl Cone {
    pub fn psd_entry(&self, i: usize, j: usize) -> &AffineExpr {
        &self.entries[tri_index(i, j)]
    }

    /// How far `x` is outside the cone (0 when inside).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let vals: Vec<f64> = self.entries.iter().map(|e| e.eval(x)).collect();
        match self.kind {
            ConeKind::Soc => {
                let norm = vals[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                (norm - vals[0]).max(0.0)
            }
            ConeKind::RotatedSoc => {
                let (a, b) = (vals[0], vals[1]);
                let rest = vals[2..].iter().map(|v| v * v).sum::<f64>();
                // same cone as (a + b, a - b, sqrt(2) z) in SOC
                let soc = ((a - b).powi(2) + 2.0 * rest).sqrt() - (a + b);
                (soc / 2.0_f64.sqrt()).max(0.0)
            }
            ConeKind::Psd { dim } => {
                let m = DMatrix::from_fn(dim, dim, |i, j| vals[tri_index(i, j)]);
                let min = m.symmetric_eigenvalues().min();
                (-min).max(0.0)
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProgramError {
    #[error("{what} references variable {var} but the program has {n} variables")]
    UnknownVar { what: String, var: Var, n: usize },
    #[error("variable {0} ({1}) is not referenced by any row, cone or the objective")]
    Unused(Var, String),
    #[error("cone '{tag}' has {got} entries, expected {expected}")]
    ConeSize { tag: String, got: usize, expected: String },
    #[error("CBF parse error on line {line}: {message}")]
    Cbf { line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub var_names: Vec<String>,
    pub objective: AffineExpr,
    pub rows: Vec<Row>,
    pub cones: Vec<Cone>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramCounts {
    pub variables: usize,
    pub eq_rows: usize,
    pub ineq_rows: usize,
    pub soc: usize,
    pub rotated_soc: usize,
    pub psd: usize,
    pub psd_dims: Vec<usize>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn new_var(&mut self, name: impl Into<String>) -> Var {
        self.var_names.push(name.into());
        self.var_names.len() - 1
    }

    pub fn add_eq(&mut self, expr: AffineExpr, tag: impl Into<String>) {
        self.rows.push(Row { expr: expr.canonical(), kind: RowKind::Eq, tag: tag.into() });
    }

    pub fn add_geq(&mut self, expr: AffineExpr, tag: impl Into<String>) {
        self.rows.push(Row { expr: expr.canonical(), kind: RowKind::Geq, tag: tag.into() });
    }

    /// lo <= expr <= hi, skipping infinite sides.
    pub fn add_bounds(&mut self, expr: &AffineExpr, lo: f64, hi: f64, tag: &str) {
        if lo == hi {
            self.add_eq(expr.minus(&AffineExpr::constant(lo)), tag);
            return;
        }
        if lo.is_finite() {
            self.add_geq(expr.minus(&AffineExpr::constant(lo)), format!("{tag} lower"));
        }
        if hi.is_finite() {
            self.add_geq(AffineExpr::constant(hi).minus(expr), format!("{tag} upper"));
        }
    }

    pub fn add_soc(&mut self, entries: Vec<AffineExpr>, tag: impl Into<String>) {
        self.push_cone(ConeKind::Soc, entries, tag.into());
    }

    pub fn add_rotated_soc(&mut self, entries: Vec<AffineExpr>, tag: impl Into<String>) {
        self.push_cone(ConeKind::RotatedSoc, entries, tag.into());
    }

    /// `upper` holds the upper triangle, column-major.
    pub fn add_psd(&mut self, dim: usize, upper: Vec<AffineExpr>, tag: impl Into<String>) {
        self.push_cone(ConeKind::Psd { dim }, upper, tag.into());
    }

    fn push_cone(&mut self, kind: ConeKind, entries: Vec<AffineExpr>, tag: String) {
        let entries = entries.iter().map(AffineExpr::canonical).collect();
        self.cones.push(Cone { kind, entries, tag });
    }

    pub fn counts(&self) -> ProgramCounts {
        let mut c = ProgramCounts { variables: self.n_vars(), ..Default::default() };
        for r in &self.rows {
            match r.kind {
                RowKind::Eq => c.eq_rows += 1,
                RowKind::Geq => c.ineq_rows += 1,
            }
        }
        for k in &self.cones {
            match k.kind {
                ConeKind::Soc => c.soc += 1,
                ConeKind::RotatedSoc => c.rotated_soc += 1,
                ConeKind::Psd { dim } => {
                    c.psd += 1;
                    c.psd_dims.push(dim);
                }
            }
        }
        c
    }

    /// Checks dimensions, variable references and that every variable is used.
    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.n_vars();
        let mut used = vec![false; n];
        let mut visit = |e: &AffineExpr, what: &str| -> Result<(), ProgramError> {
            for &(v, _) in &e.terms {
                if v >= n {
                    return Err(ProgramError::UnknownVar { what: what.to_string(), var: v, n });
                }
                used[v] = true;
            }
            Ok(())
        };
        visit(&self.objective, "objective")?;
        for r in &self.rows {
            visit(&r.expr, &r.tag)?;
        }
        for c in &self.cones {
            let (ok, expected) = match c.kind {
                ConeKind::Soc => (!c.entries.is_empty(), "at least 1".to_string()),
                ConeKind::RotatedSoc => (c.entries.len() >= 2, "at least 2".to_string()),
                ConeKind::Psd { dim } => (c.entries.len() == tri_len(dim), tri_len(dim).to_string()),
            };
            if !ok {
                return Err(ProgramError::ConeSize { tag: c.tag.clone(), got: c.entries.len(), expected });
            }
            for e in &c.entries {
                visit(e, &c.tag)?;
            }
        }
        match used.iter().position(|u| !u) {
            Some(v) => Err(ProgramError::Unused(v, self.var_names[v].clone())),
            None => Ok(()),
        }
    }

    /// Largest violation of any row or cone at `x`.
    pub fn max_violation(&self, x: &[f64]) -> (f64, Option<String>) {
        let mut worst = (0.0, None);
        for r in &self.rows {
            let v = r.expr.eval(x);
            let viol = match r.kind {
                RowKind::Eq => v.abs(),
                RowKind::Geq => (-v).max(0.0),
            };
            if viol > worst.0 {
                worst = (viol, Some(r.tag.clone()));
            }
        }
        for c in &self.cones {
            let viol = c.violation(x);
            if viol > worst.0 {
                worst = (viol, Some(c.tag.clone()));
            }
        }
        worst
    }

    /// Writes the program in the conic benchmark format (CBF, version 3).
    pub fn to_cbf(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "VER\n3\n\nOBJSENSE\nMIN\n");
        let _ = writeln!(w, "VAR\n{} 1\nF {}\n", self.n_vars(), self.n_vars());

        // scalar constraint rows: eq rows, ineq rows, then cone entries
        let mut groups: Vec<(&str, Vec<&AffineExpr>)> = Vec::new();
        let eq: Vec<&AffineExpr> = self.rows.iter().filter(|r| r.kind == RowKind::Eq).map(|r| &r.expr).collect();
        let ge: Vec<&AffineExpr> = self.rows.iter().filter(|r| r.kind == RowKind::Geq).map(|r| &r.expr).collect();
        if !eq.is_empty() {
            groups.push(("L=", eq));
        }
        if !ge.is_empty() {
            groups.push(("L+", ge));
        }
        let mut psd = Vec::new();
        for c in &self.cones {
            match c.kind {
                ConeKind::Soc => groups.push(("Q", c.entries.iter().collect())),
                ConeKind::RotatedSoc => groups.push(("QR", c.entries.iter().collect())),
                ConeKind::Psd { dim } => psd.push((dim, c)),
            }
        }
        let m: usize = groups.iter().map(|g| g.1.len()).sum();
        if m > 0 {
            let _ = writeln!(w, "CON\n{m} {}", groups.len());
            for (name, rows) in &groups {
                let _ = writeln!(w, "{name} {}", rows.len());
            }
            let _ = writeln!(w);
        }
        if !psd.is_empty() {
            let _ = writeln!(w, "PSDCON\n{}", psd.len());
            for (dim, _) in &psd {
                let _ = writeln!(w, "{dim}");
            }
            let _ = writeln!(w);
        }

        let obj = self.objective.canonical();
        if !obj.terms.is_empty() {
            let _ = writeln!(w, "OBJACOORD\n{}", obj.terms.len());
            for (v, c) in &obj.terms {
                let _ = writeln!(w, "{v} {c:e}");
            }
            let _ = writeln!(w);
        }
        if obj.constant != 0.0 {
            let _ = writeln!(w, "OBJBCOORD\n{:e}\n", obj.constant);
        }

        let rows: Vec<&AffineExpr> = groups.iter().flat_map(|g| g.1.iter().copied()).collect();
        let a: Vec<(usize, Var, f64)> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, e)| e.terms.iter().map(move |&(v, c)| (i, v, c)))
            .collect();
        if !a.is_empty() {
            let _ = writeln!(w, "ACOORD\n{}", a.len());
            for (i, v, c) in &a {
                let _ = writeln!(w, "{i} {v} {c:e}");
            }
            let _ = writeln!(w);
        }
        let b: Vec<(usize, f64)> =
            rows.iter().enumerate().filter(|(_, e)| e.constant != 0.0).map(|(i, e)| (i, e.constant)).collect();
        if !b.is_empty() {
            let _ = writeln!(w, "BCOORD\n{}", b.len());
            for (i, c) in &b {
                let _ = writeln!(w, "{i} {c:e}");
            }
            let _ = writeln!(w);
        }

        // CBF indexes PSD entries by the lower triangle (row >= col)
        let mut h = Vec::new();
        let mut d = Vec::new();
        for (k, (dim, c)) in psd.iter().enumerate() {
            for j in 0..*dim {
                for i in 0..=j {
                    let e = c.psd_entry(i, j);
                    for &(v, coef) in &e.terms {
                        h.push(format!("{k} {v} {j} {i} {coef:e}"));
                    }
                    if e.constant != 0.0 {
                        d.push(format!("{k} {j} {i} {:e}", e.constant));
                    }
                }
            }
        }
        if !h.is_empty() {
            let _ = writeln!(w, "HCOORD\n{}", h.len());
            for line in &h {
                let _ = writeln!(w, "{line}");
            }
            let _ = writeln!(w);
        }
        if !d.is_empty() {
            let _ = writeln!(w, "DCOORD\n{}", d.len());
            for line in &d {
                let _ = writeln!(w, "{line}");
            }
            let _ = writeln!(w);
        }
        out
    }

    /// Reads the subset of CBF written by [`ConicProgram::to_cbf`]: free
    /// variables, minimization, L=, L+, L-, Q, QR and PSD constraints.
    pub fn from_cbf(text: &str) -> Result<ConicProgram, ProgramError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .peekable();
        let err = |line: usize, message: &str| ProgramError::Cbf { line, message: message.to_string() };
        let mut next = |what: &str| -> Result<(usize, Vec<String>), ProgramError> {
            lines
                .next()
                .map(|(k, l)| (k, l.split_whitespace().map(str::to_string).collect()))
                .ok_or_else(|| err(0, &format!("unexpected end of file in {what}")))
        };
        fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, ProgramError> {
            s.parse().map_err(|_| ProgramError::Cbf { line, message: format!("bad number '{s}'") })
        }

        let mut p = ConicProgram::new();
        let mut groups: Vec<(String, usize)> = Vec::new();
        let mut psd_dims: Vec<usize> = Vec::new();
        let mut rows: Vec<AffineExpr> = Vec::new();
        let mut psd: Vec<Vec<AffineExpr>> = Vec::new();
        let mut sense_max = false;
        loop {
            let Ok((line, head)) = next("section") else { break };
            match head[0].as_str() {
                "VER" => {
                    next("VER")?;
                }
                "OBJSENSE" => {
                    let (_, s) = next("OBJSENSE")?;
                    sense_max = s[0] == "MAX";
                }
                "VAR" => {
                    let (l, s) = next("VAR")?;
                    let n: usize = num(&s[0], l)?;
                    let k: usize = num(&s[1], l)?;
                    for _ in 0..k {
                        let (l, s) = next("VAR")?;
                        if s[0] != "F" {
                            return Err(err(l, "only free variable domains are supported"));
                        }
                    }
                    for v in 0..n {
                        p.new_var(format!("x{v}"));
                    }
                }
                "CON" => {
                    let (l, s) = next("CON")?;
                    let m: usize = num(&s[0], l)?;
                    let k: usize = num(&s[1], l)?;
                    for _ in 0..k {
                        let (l, s) = next("CON")?;
                        groups.push((s[0].clone(), num(&s[1], l)?));
                    }
                    rows = vec![AffineExpr::zero(); m];
                }
                "PSDCON" => {
                    let (l, s) = next("PSDCON")?;
                    let k: usize = num(&s[0], l)?;
                    for _ in 0..k {
                        let (l, s) = next("PSDCON")?;
                        let dim: usize = num(&s[0], l)?;
                        psd_dims.push(dim);
                        psd.push(vec![AffineExpr::zero(); tri_len(dim)]);
                    }
                }
                "OBJACOORD" | "OBJBCOORD" | "ACOORD" | "BCOORD" | "HCOORD" | "DCOORD" => {
                    let section = head[0].clone();
                    if section == "OBJBCOORD" {
                        let (l, s) = next(&section)?;
                        p.objective.constant = num(&s[0], l)?;
                        continue;
                    }
                    let (l, s) = next(&section)?;
                    let nnz: usize = num(&s[0], l)?;
                    for _ in 0..nnz {
                        let (l, s) = next(&section)?;
                        let get = |k: usize| s.get(k).ok_or_else(|| err(l, "missing field"));
                        match section.as_str() {
                            "OBJACOORD" => {
                                p.objective.add_term(num(get(0)?, l)?, num(get(1)?, l)?);
                            }
                            "ACOORD" => {
                                let i: usize = num(get(0)?, l)?;
                                let row = rows.get_mut(i).ok_or_else(|| err(l, "row out of range"))?;
                                row.add_term(num(get(1)?, l)?, num(get(2)?, l)?);
                            }
                            "BCOORD" => {
                                let i: usize = num(get(0)?, l)?;
                                let row = rows.get_mut(i).ok_or_else(|| err(l, "row out of range"))?;
                                row.constant += num::<f64>(get(1)?, l)?;
                            }
                            "HCOORD" => {
                                let k: usize = num(get(0)?, l)?;
                                let v: usize = num(get(1)?, l)?;
                                let i: usize = num(get(2)?, l)?;
                                let j: usize = num(get(3)?, l)?;
                                let block = psd.get_mut(k).ok_or_else(|| err(l, "PSD index out of range"))?;
                                block[tri_index(i, j)].add_term(v, num(get(4)?, l)?);
                            }
                            _ => {
                                let k: usize = num(get(0)?, l)?;
                                let i: usize = num(get(1)?, l)?;
                                let j: usize = num(get(2)?, l)?;
                                let block = psd.get_mut(k).ok_or_else(|| err(l, "PSD index out of range"))?;
                                block[tri_index(i, j)].constant += num::<f64>(get(3)?, l)?;
                            }
                        }
                    }
                }
                other => return Err(err(line, &format!("unsupported section {other}"))),
            }
        }
        if sense_max {
            p.objective = p.objective.scaled(-1.0);
        }
        let mut it = rows.into_iter();
        for (k, (kind, len)) in groups.into_iter().enumerate() {
            let entries: Vec<AffineExpr> = it.by_ref().take(len).collect();
            let tag = format!("cbf group {k}");
            match kind.as_str() {
                "L=" => entries.into_iter().for_each(|e| p.add_eq(e, tag.clone())),
                "L+" => entries.into_iter().for_each(|e| p.add_geq(e, tag.clone())),
                "L-" => entries.into_iter().for_each(|e| p.add_geq(e.scaled(-1.0), tag.clone())),
                "Q" => p.add_soc(entries, tag),
                "QR" => p.add_rotated_soc(entries, tag),
                other => return Err(err(0, &format!("unsupported cone {other}"))),
            }
        }
        for (k, (dim, block)) in psd_dims.into_iter().zip(psd).enumerate() {
            p.add_psd(dim, block, format!("cbf psd {k}"));
        }
        Ok(p)
    }
}
