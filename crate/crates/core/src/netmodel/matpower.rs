//! Reader for MATPOWER `.m` case files.
//!
//! Case files are MATLAB functions. Besides the `mpc.*` matrix literals, some
//! distributed cases (the distribution feeders in particular) post-process the
//! data with a few MATLAB statements: column-index constants from `idx_bus` and
//! friends, scalar arithmetic, and column-block assignments such as
//! `mpc.bus(:, [PD, QD]) = mpc.bus(:, [PD, QD]) / 1e3;`. This module
//! evaluates that subset; anything else is reported as a syntax error with
//! its line number.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use super::{deg_to_rad, Branch, Bus, CaseError, CostCurve, Generator, NetworkCase};

/// Raw numeric content of a case file, in MATPOWER units, before per-unit
/// conversion. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MatpowerData {
    pub name: Option<String>,
    pub base_mva: f64,
    pub bus: Vec<Vec<f64>>,
    pub gen: Vec<Vec<f64>>,
    pub branch: Vec<Vec<f64>>,
    pub gencost: Vec<Vec<f64>>,
}

/// Parses a MATPOWER case from a text stream into a validated per-unit model.
pub fn parse_matpower(mut source: impl Read) -> Result<NetworkCase, CaseError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    parse_matpower_str(&text)
}

pub fn parse_matpower_str(text: &str) -> Result<NetworkCase, CaseError> {
    MatpowerData::parse(text)?.into_case()
}

impl MatpowerData {
    pub fn parse(text: &str) -> Result<Self, CaseError> {
        let tokens = lex(text)?;
        let mut interp = Interpreter::new(tokens);
        interp.run()?;
        let mut take = |field: &'static str| -> Result<Vec<Vec<f64>>, CaseError> {
            match interp.mpc.remove(field) {
                Some(Value::Mat(m)) => Ok(m.into_rows()),
                Some(Value::Num(x)) => Ok(vec![vec![x]]),
                _ => Err(CaseError::MissingMatrix(field)),
            }
        };
        let bus = take("bus")?;
        let gen = take("gen")?;
        let branch = take("branch")?;
        let gencost = take("gencost")?;
        let base_mva = match interp.mpc.get("baseMVA") {
            Some(Value::Num(x)) => *x,
            _ => return Err(CaseError::MissingMatrix("baseMVA")),
        };
        Ok(MatpowerData {
            name: interp.func_name,
            base_mva,
            bus,
            gen,
            branch,
            gencost,
        })
    }

    /// Converts to per-unit, drops out-of-service elements and validates.
    pub fn into_case(self) -> Result<NetworkCase, CaseError> {
        let base = self.base_mva;
        let row_len = |what: &str, row: &[f64], min: usize, k: usize| {
            if row.len() < min {
                Err(CaseError::invalid(
                    format!("{what} row {}", k + 1),
                    format!("has {} columns, need at least {min}", row.len()),
                ))
            } else {
                Ok(())
            }
        };
        let bus_id = |x: f64, what: &str| -> Result<u32, CaseError> {
            if x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                Ok(x as u32)
            } else {
                Err(CaseError::invalid(what.to_string(), format!("bus number {x} is not a positive integer")))
            }
        };

        let mut buses = Vec::with_capacity(self.bus.len());
        for (k, row) in self.bus.iter().enumerate() {
            row_len("bus", row, 13, k)?;
            let kind = row[1] as i64;
            if kind == 4 {
                continue;
            }
            buses.push(Bus {
                id: bus_id(row[0], &format!("bus row {}", k + 1))?,
                vmin: row[12],
                vmax: row[11],
                pd: row[2] / base,
                qd: row[3] / base,
                gs: row[4] / base,
                bs: row[5] / base,
                is_slack: kind == 3,
            });
        }

        let mut branches = Vec::with_capacity(self.branch.len());
        for (k, row) in self.branch.iter().enumerate() {
            row_len("branch", row, 11, k)?;
            if row[10] == 0.0 {
                continue;
            }
            let what = format!("branch row {}", k + 1);
            branches.push(Branch {
                from: bus_id(row[0], &what)?,
                to: bus_id(row[1], &what)?,
                r: row[2],
                x: row[3],
                b_charge: row[4],
                tap: if row[8] == 0.0 { 1.0 } else { row[8] },
                shift: deg_to_rad(row[9]),
                smax: (row[5] != 0.0).then(|| row[5] / base),
            });
        }

        if self.gencost.len() < self.gen.len() {
            return Err(CaseError::invalid(
                "mpc.gencost",
                format!("{} rows for {} generators", self.gencost.len(), self.gen.len()),
            ));
        }
        let mut generators = Vec::with_capacity(self.gen.len());
        for (k, (row, cost)) in self.gen.iter().zip(&self.gencost).enumerate() {
            row_len("gen", row, 10, k)?;
            if row[7] <= 0.0 {
                continue;
            }
            generators.push(Generator {
                bus: bus_id(row[0], &format!("gen row {}", k + 1))?,
                pmin: row[9] / base,
                pmax: row[8] / base,
                qmin: row[4] / base,
                qmax: row[3] / base,
                cost: cost_curve(cost, k)?,
            });
        }

        let name = self.name.unwrap_or_else(|| "case".to_string());
        NetworkCase::new(name, base, buses, branches, generators)
    }
}

fn cost_curve(row: &[f64], k: usize) -> Result<CostCurve, CaseError> {
    let what = || format!("gencost row {}", k + 1);
    if row.len() < 4 {
        return Err(CaseError::invalid(what(), "fewer than 4 columns"));
    }
    let n = row[3];
    if n < 0.0 || n.fract() != 0.0 {
        return Err(CaseError::invalid(what(), format!("invalid parameter count {n}")));
    }
    let n = n as usize;
    let params = &row[4..];
    match row[0] as i64 {
        2 => {
            if params.len() < n {
                return Err(CaseError::invalid(what(), "truncated polynomial coefficients"));
            }
            if n > 3 {
                return Err(CaseError::invalid(what(), format!("polynomial of degree {} > 2", n - 1)));
            }
            // highest order first
            let mut c = [0.0; 3];
            for (i, &v) in params[..n].iter().rev().enumerate() {
                c[i] = v;
            }
            Ok(CostCurve::Polynomial {
                quadratic: c[2],
                linear: c[1],
                constant: c[0],
            })
        }
        1 => {
            if params.len() < 2 * n {
                return Err(CaseError::invalid(what(), "truncated breakpoints"));
            }
            let points = params[..2 * n].chunks(2).map(|p| (p[0], p[1])).collect();
            Ok(CostCurve::PiecewiseLinear { points })
        }
        m => Err(CaseError::invalid(what(), format!("unknown cost model {m}"))),
    }
}

// ---------------------------------------------------------------------------
// lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Str(String),
    Sym(&'static str),
    Newline,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    space_before: bool,
}

const SYMBOLS: &[&str] = &[
    ".*", "./", ".^", ".'", "==", "~=", "<=", ">=", "&&", "||", "=", "(", ")", "[", "]", "{", "}",
    ",", ";", ":", "+", "-", "*", "/", "^", "'", ".", "<", ">", "&", "|", "~", "!", "\\",
];

fn lex(text: &str) -> Result<Vec<Token>, CaseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out: Vec<Token> = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut space = false;
    let err = |line: usize, message: String| CaseError::Syntax { line, message };
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\r' => {
                space = true;
                i += 1;
            }
            '\n' => {
                out.push(Token { tok: Tok::Newline, line, space_before: space });
                line += 1;
                space = false;
                i += 1;
            }
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '.' if chars[i..].starts_with(&['.', '.', '.']) => {
                // continuation: ignore the rest of the line
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                i += 1;
                line += 1;
                space = true;
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len()
                    && chars[i] == '.'
                    && !matches!(chars.get(i + 1), Some('*' | '/' | '^' | '\''))
                {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse::<f64>()
                    .map_err(|_| err(line, format!("malformed number '{s}'")))?;
                out.push(Token { tok: Tok::Num(v), line, space_before: space });
                space = false;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(Token { tok: Tok::Ident(s), line, space_before: space });
                space = false;
            }
            '\'' | '"' => {
                let transpose = c == '\''
                    && !space
                    && matches!(
                        out.last().map(|t| &t.tok),
                        Some(Tok::Ident(_) | Tok::Num(_) | Tok::Sym(")") | Tok::Sym("]"))
                    );
                if transpose {
                    out.push(Token { tok: Tok::Sym("'"), line, space_before: space });
                    i += 1;
                } else {
                    let mut s = String::new();
                    i += 1;
                    loop {
                        match chars.get(i) {
                            None | Some('\n') => return Err(err(line, "unterminated string".into())),
                            Some(&q) if q == c => {
                                if chars.get(i + 1) == Some(&c) {
                                    s.push(c);
                                    i += 2;
                                } else {
                                    i += 1;
                                    break;
                                }
                            }
                            Some(&ch) => {
                                s.push(ch);
                                i += 1;
                            }
                        }
                    }
                    out.push(Token { tok: Tok::Str(s), line, space_before: space });
                }
                space = false;
            }
            _ => {
                let sym = SYMBOLS
                    .iter()
                    .find(|s| {
                        let sc: Vec<char> = s.chars().collect();
                        chars[i..].starts_with(&sc)
                    })
                    .ok_or_else(|| err(line, format!("unexpected character '{c}'")))?;
                out.push(Token { tok: Tok::Sym(sym), line, space_before: space });
                i += sym.len();
                space = false;
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, space_before: space });
    Ok(out)
}

// ---------------------------------------------------------------------------
// values

#[derive(Debug, Clone, PartialEq)]
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn into_rows(self) -> Vec<Vec<f64>> {
        if self.cols == 0 {
            return Vec::new();
        }
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Num(f64),
    Mat(Mat),
    Str(String),
    Cell,
}

impl Value {
    fn from_mat(m: Mat) -> Value {
        if m.rows == 1 && m.cols == 1 {
            Value::Num(m.data[0])
        } else {
            Value::Mat(m)
        }
    }

    /// Elements as a flat list, for index vectors and matrix concatenation.
    fn elements(&self) -> Option<Vec<f64>> {
        match self {
            Value::Num(x) => Some(vec![*x]),
            Value::Mat(m) => Some(m.data.clone()),
            _ => None,
        }
    }
}

enum IndexArg {
    All,
    Values(Vec<f64>),
}

// MATPOWER column-index helpers, in output order.
const IDX_BUS: &[(&str, f64)] = &[
    ("PQ", 1.0), ("PV", 2.0), ("REF", 3.0), ("NONE", 4.0), ("BUS_I", 1.0), ("BUS_TYPE", 2.0),
    ("PD", 3.0), ("QD", 4.0), ("GS", 5.0), ("BS", 6.0), ("BUS_AREA", 7.0), ("VM", 8.0),
    ("VA", 9.0), ("BASE_KV", 10.0), ("ZONE", 11.0), ("VMAX", 12.0), ("VMIN", 13.0),
    ("LAM_P", 14.0), ("LAM_Q", 15.0), ("MU_VMAX", 16.0), ("MU_VMIN", 17.0),
];
const IDX_BRCH: &[(&str, f64)] = &[
    ("F_BUS", 1.0), ("T_BUS", 2.0), ("BR_R", 3.0), ("BR_X", 4.0), ("BR_B", 5.0),
    ("RATE_A", 6.0), ("RATE_B", 7.0), ("RATE_C", 8.0), ("TAP", 9.0), ("SHIFT", 10.0),
    ("BR_STATUS", 11.0), ("PF", 14.0), ("QF", 15.0), ("PT", 16.0), ("QT", 17.0),
    ("MU_SF", 18.0), ("MU_ST", 19.0), ("ANGMIN", 12.0), ("ANGMAX", 13.0),
    ("MU_ANGMIN", 20.0), ("MU_ANGMAX", 21.0),
];
const IDX_GEN: &[(&str, f64)] = &[
    ("GEN_BUS", 1.0), ("PG", 2.0), ("QG", 3.0), ("QMAX", 4.0), ("QMIN", 5.0), ("VG", 6.0),
    ("MBASE", 7.0), ("GEN_STATUS", 8.0), ("PMAX", 9.0), ("PMIN", 10.0), ("MU_PMAX", 22.0),
    ("MU_PMIN", 23.0), ("MU_QMAX", 24.0), ("MU_QMIN", 25.0), ("PC1", 11.0), ("PC2", 12.0),
    ("QC1MIN", 13.0), ("QC1MAX", 14.0), ("QC2MIN", 15.0), ("QC2MAX", 16.0),
    ("RAMP_AGC", 17.0), ("RAMP_10", 18.0), ("RAMP_30", 19.0), ("RAMP_Q", 20.0), ("APF", 21.0),
];
const IDX_COST: &[(&str, f64)] = &[
    ("PW_LINEAR", 1.0), ("POLYNOMIAL", 2.0), ("MODEL", 1.0), ("STARTUP", 2.0),
    ("SHUTDOWN", 3.0), ("NCOST", 4.0), ("COST", 5.0),
];

fn index_table(name: &str) -> Option<&'static [(&'static str, f64)]> {
    match name {
        "idx_bus" => Some(IDX_BUS),
        "idx_brch" => Some(IDX_BRCH),
        "idx_gen" => Some(IDX_GEN),
        "idx_cost" => Some(IDX_COST),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// interpreter

struct Interpreter {
    toks: Vec<Token>,
    pos: usize,
    vars: HashMap<String, Value>,
    mpc: BTreeMap<String, Value>,
    func_name: Option<String>,
}

type Res<T> = Result<T, CaseError>;

impl Interpreter {
    fn new(toks: Vec<Token>) -> Self {
        Interpreter {
            toks,
            pos: 0,
            vars: HashMap::new(),
            mpc: BTreeMap::new(),
            func_name: None,
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn token(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn line(&self) -> usize {
        self.toks[self.pos].line
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Res<T> {
        Err(CaseError::Syntax {
            line: self.line(),
            message: message.into(),
        })
    }

    fn expect(&mut self, sym: &'static str) -> Res<()> {
        if *self.peek() == Tok::Sym(sym) {
            self.advance();
            Ok(())
        } else {
            self.error(format!("expected '{sym}', found {}", describe(self.peek())))
        }
    }

    fn is_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Tok::Sym(s) if *s == sym)
    }

    fn at_statement_end(&self) -> bool {
        matches!(self.peek(), Tok::Newline | Tok::Eof | Tok::Sym(";") | Tok::Sym(","))
    }

    fn run(&mut self) -> Res<()> {
        loop {
            match self.peek().clone() {
                Tok::Eof => return Ok(()),
                Tok::Newline | Tok::Sym(";") | Tok::Sym(",") => {
                    self.advance();
                }
                Tok::Ident(word) if word == "function" => self.function_header()?,
                Tok::Ident(word) if matches!(word.as_str(), "end" | "return" | "endfunction") => {
                    self.advance();
                }
                Tok::Sym("[") => self.multi_assign()?,
                Tok::Ident(_) => self.assignment()?,
                other => return self.error(format!("unexpected {} at start of statement", describe(&other))),
            }
        }
    }

    fn function_header(&mut self) -> Res<()> {
        self.advance();
        let mut idents = Vec::new();
        let mut after_eq = None;
        while !matches!(self.peek(), Tok::Newline | Tok::Eof) {
            match self.advance() {
                Tok::Ident(s) => idents.push(s),
                Tok::Sym("=") => after_eq = Some(idents.len()),
                Tok::Sym("(") => {
                    while !matches!(self.peek(), Tok::Sym(")") | Tok::Newline | Tok::Eof) {
                        self.advance();
                    }
                }
                _ => {}
            }
        }
        let name_at = after_eq.unwrap_or(0);
        self.func_name = idents.get(name_at).cloned();
        Ok(())
    }

    fn multi_assign(&mut self) -> Res<()> {
        self.expect("[")?;
        let mut names = Vec::new();
        loop {
            match self.advance() {
                Tok::Ident(s) => names.push(s),
                Tok::Sym(",") => {}
                Tok::Sym("]") => break,
                other => return self.error(format!("unexpected {} in output list", describe(&other))),
            }
        }
        self.expect("=")?;
        let func = match self.advance() {
            Tok::Ident(s) => s,
            other => return self.error(format!("expected function name, found {}", describe(&other))),
        };
        let Some(table) = index_table(&func) else {
            return self.error(format!("unsupported function '{func}'"));
        };
        if names.len() > table.len() {
            return self.error(format!("{func} returns only {} outputs", table.len()));
        }
        for (name, &(_, value)) in names.into_iter().zip(table) {
            self.vars.insert(name, Value::Num(value));
        }
        Ok(())
    }

    fn assignment(&mut self) -> Res<()> {
        let Tok::Ident(name) = self.advance() else { unreachable!() };
        if self.at_statement_end() {
            return match name.as_str() {
                "define_constants" => {
                    for table in [IDX_BUS, IDX_BRCH, IDX_GEN, IDX_COST] {
                        for &(n, v) in table {
                            self.vars.insert(n.to_string(), Value::Num(v));
                        }
                    }
                    Ok(())
                }
                _ => self.error(format!("unsupported command '{name}'")),
            };
        }
        let field = if self.is_sym(".") {
            self.advance();
            match self.advance() {
                Tok::Ident(f) => Some(f),
                other => return self.error(format!("expected field name, found {}", describe(&other))),
            }
        } else {
            None
        };
        let index = if self.is_sym("(") {
            Some(self.index_args()?)
        } else {
            None
        };
        self.expect("=")?;
        let line = self.line();
        let rhs = self.rhs()?;
        if !self.at_statement_end() {
            return self.error(format!("unexpected {} after expression", describe(self.peek())));
        }
        match field {
            Some(f) if name == "mpc" => {
                let result = assign(self.mpc.remove(&f), index, rhs, line)?;
                self.mpc.insert(f, result);
            }
            Some(f) => {
                return Err(CaseError::Syntax {
                    line,
                    message: format!("unsupported struct assignment {name}.{f}"),
                })
            }
            None => {
                let result = assign(self.vars.remove(&name), index, rhs, line)?;
                self.vars.insert(name, result);
            }
        }
        Ok(())
    }

    fn rhs(&mut self) -> Res<Value> {
        match self.peek() {
            Tok::Sym("{") => {
                self.skip_braces()?;
                Ok(Value::Cell)
            }
            Tok::Str(_) => {
                let Tok::Str(s) = self.advance() else { unreachable!() };
                Ok(Value::Str(s))
            }
            _ => self.expr(false),
        }
    }

    fn skip_braces(&mut self) -> Res<()> {
        let mut depth = 0usize;
        loop {
            match self.advance() {
                Tok::Sym("{") => depth += 1,
                Tok::Sym("}") => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok(());
                    }
                }
                Tok::Eof => return self.error("unterminated cell array"),
                _ => {}
            }
        }
    }

    fn index_args(&mut self) -> Res<Vec<IndexArg>> {
        self.expect("(")?;
        let mut args = Vec::new();
        loop {
            if self.is_sym(":") && matches!(self.peek_at(1), Tok::Sym(",") | Tok::Sym(")")) {
                self.advance();
                args.push(IndexArg::All);
            } else {
                let v = self.expr(false)?;
                match v.elements() {
                    Some(e) => args.push(IndexArg::Values(e)),
                    None => return self.error("index is not numeric"),
                }
            }
            match self.advance() {
                Tok::Sym(",") => {}
                Tok::Sym(")") => return Ok(args),
                other => return self.error(format!("expected ',' or ')', found {}", describe(&other))),
            }
        }
    }

    /// In matrix mode, whitespace separates elements: `[1 -2]` has two.
    fn ends_element(&self, in_matrix: bool) -> bool {
        if !in_matrix {
            return false;
        }
        let t = self.token();
        let next = &self.toks[(self.pos + 1).min(self.toks.len() - 1)];
        matches!(t.tok, Tok::Sym("+") | Tok::Sym("-")) && t.space_before && !next.space_before
    }

    fn expr(&mut self, in_matrix: bool) -> Res<Value> {
        let mut lhs = self.term(in_matrix)?;
        loop {
            let op = match self.peek() {
                Tok::Sym(s @ ("+" | "-")) => *s,
                _ => return Ok(lhs),
            };
            if self.ends_element(in_matrix) {
                return Ok(lhs);
            }
            self.advance();
            let rhs = self.term(in_matrix)?;
            lhs = self.binary(op, lhs, rhs)?;
        }
    }

    fn term(&mut self, in_matrix: bool) -> Res<Value> {
        let mut lhs = self.unary(in_matrix)?;
        loop {
            let op = match self.peek() {
                Tok::Sym(s @ ("*" | "/" | ".*" | "./")) => *s,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.unary(in_matrix)?;
            lhs = self.binary(op, lhs, rhs)?;
        }
    }

    fn unary(&mut self, in_matrix: bool) -> Res<Value> {
        match self.peek() {
            Tok::Sym("-") => {
                self.advance();
                let v = self.unary(in_matrix)?;
                self.binary("*", Value::Num(-1.0), v)
            }
            Tok::Sym("+") => {
                self.advance();
                self.unary(in_matrix)
            }
            _ => self.power(in_matrix),
        }
    }

    fn power(&mut self, in_matrix: bool) -> Res<Value> {
        let base = self.primary()?;
        match self.peek() {
            Tok::Sym(s @ ("^" | ".^")) => {
                let op = *s;
                self.advance();
                let exp = self.unary(in_matrix)?;
                self.binary(op, base, exp)
            }
            Tok::Sym("'") | Tok::Sym(".'") => self.error("transpose is not supported"),
            _ => Ok(base),
        }
    }

    fn primary(&mut self) -> Res<Value> {
        match self.advance() {
            Tok::Num(x) => Ok(Value::Num(x)),
            Tok::Str(s) => Ok(Value::Str(s)),
            Tok::Sym("(") => {
                let v = self.expr(false)?;
                self.expect(")")?;
                Ok(v)
            }
            Tok::Sym("[") => self.matrix_literal(),
            Tok::Ident(name) => self.identifier(name),
            other => self.error(format!("unexpected {} in expression", describe(&other))),
        }
    }

    fn identifier(&mut self, name: String) -> Res<Value> {
        if name == "mpc" && self.is_sym(".") {
            self.advance();
            let field = match self.advance() {
                Tok::Ident(f) => f,
                other => return self.error(format!("expected field name, found {}", describe(&other))),
            };
            let Some(value) = self.mpc.get(&field).cloned() else {
                return self.error(format!("mpc.{field} is undefined"));
            };
            return self.maybe_index(value);
        }
        if let Some(value) = self.vars.get(&name).cloned() {
            return self.maybe_index(value);
        }
        match name.as_str() {
            "pi" => return Ok(Value::Num(std::f64::consts::PI)),
            "Inf" | "inf" => return Ok(Value::Num(f64::INFINITY)),
            "NaN" | "nan" => return Ok(Value::Num(f64::NAN)),
            "true" => return Ok(Value::Num(1.0)),
            "false" => return Ok(Value::Num(0.0)),
            _ => {}
        }
        let func: fn(f64) -> f64 = match name.as_str() {
            "sin" => f64::sin,
            "cos" => f64::cos,
            "tan" => f64::tan,
            "asin" => f64::asin,
            "acos" => f64::acos,
            "atan" => f64::atan,
            "sqrt" => f64::sqrt,
            "exp" => f64::exp,
            "log" => f64::ln,
            "abs" => f64::abs,
            _ => return self.error(format!("undefined identifier '{name}'")),
        };
        self.expect("(")?;
        let arg = self.expr(false)?;
        self.expect(")")?;
        self.map(arg, func)
    }

    fn maybe_index(&mut self, value: Value) -> Res<Value> {
        if !self.is_sym("(") || self.token().space_before {
            return Ok(value);
        }
        let line = self.line();
        let args = self.index_args()?;
        let m = match value {
            Value::Num(x) => Mat { rows: 1, cols: 1, data: vec![x] },
            Value::Mat(m) => m,
            _ => return self.error("indexing a non-numeric value"),
        };
        let (rows, cols) = resolve_indices(&m, &args, line)?;
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &r in &rows {
            for &c in &cols {
                data.push(m.get(r, c));
            }
        }
        Ok(Value::from_mat(Mat { rows: rows.len(), cols: cols.len(), data }))
    }

    fn matrix_literal(&mut self) -> Res<Value> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut cur: Vec<f64> = Vec::new();
        loop {
            match self.peek() {
                Tok::Sym("]") => {
                    self.advance();
                    break;
                }
                Tok::Sym(";") | Tok::Newline => {
                    self.advance();
                    if !cur.is_empty() {
                        rows.push(std::mem::take(&mut cur));
                    }
                }
                Tok::Sym(",") => {
                    self.advance();
                }
                Tok::Eof => return self.error("unterminated matrix literal"),
                _ => {
                    let v = self.expr(true)?;
                    match v {
                        Value::Num(x) => cur.push(x),
                        Value::Mat(m) if m.rows <= 1 => cur.extend(m.data),
                        Value::Mat(_) => return self.error("vertical concatenation inside a row is not supported"),
                        _ => return self.error("non-numeric matrix element"),
                    }
                }
            }
        }
        if !cur.is_empty() {
            rows.push(cur);
        }
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return self.error(format!(
                "matrix row {} has {} columns, expected {cols}",
                bad + 1,
                rows[bad].len()
            ));
        }
        let n = rows.len();
        Ok(Value::Mat(Mat {
            rows: n,
            cols,
            data: rows.into_iter().flatten().collect(),
        }))
    }

    fn map(&self, v: Value, f: impl Fn(f64) -> f64) -> Res<Value> {
        match v {
            Value::Num(x) => Ok(Value::Num(f(x))),
            Value::Mat(mut m) => {
                m.data.iter_mut().for_each(|x| *x = f(*x));
                Ok(Value::Mat(m))
            }
            _ => self.error("arithmetic on a non-numeric value"),
        }
    }

    fn binary(&self, op: &str, a: Value, b: Value) -> Res<Value> {
        let f: fn(f64, f64) -> f64 = match op {
            "+" => |x, y| x + y,
            "-" => |x, y| x - y,
            "*" | ".*" => |x, y| x * y,
            "/" | "./" => |x, y| x / y,
            "^" | ".^" => f64::powf,
            _ => return self.error(format!("unsupported operator '{op}'")),
        };
        match (a, b) {
            (Value::Num(x), Value::Num(y)) => Ok(Value::Num(f(x, y))),
            (Value::Mat(m), Value::Num(y)) => self.map(Value::Mat(m), |x| f(x, y)),
            (Value::Num(x), Value::Mat(m)) if op != "/" && op != "^" => {
                self.map(Value::Mat(m), |y| f(x, y))
            }
            (Value::Mat(a), Value::Mat(b)) => {
                if op == "*" && a.cols == b.rows && !(a.rows == b.rows && a.cols == b.cols && a.cols == 1) {
                    let mut data = vec![0.0; a.rows * b.cols];
                    for i in 0..a.rows {
                        for j in 0..b.cols {
                            data[i * b.cols + j] = (0..a.cols).map(|k| a.get(i, k) * b.get(k, j)).sum();
                        }
                    }
                    return Ok(Value::from_mat(Mat { rows: a.rows, cols: b.cols, data }));
                }
                let elementwise = matches!(op, "+" | "-" | ".*" | "./" | ".^");
                if !elementwise || a.rows != b.rows || a.cols != b.cols {
                    return self.error(format!(
                        "operator '{op}' on {}x{} and {}x{} matrices is not supported",
                        a.rows, a.cols, b.rows, b.cols
                    ));
                }
                let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
                Ok(Value::Mat(Mat { rows: a.rows, cols: a.cols, data }))
            }
            _ => self.error(format!("operator '{op}' is not supported for these operands")),
        }
    }
}

fn resolve_indices(m: &Mat, args: &[IndexArg], line: usize) -> Res<(Vec<usize>, Vec<usize>)> {
    let err = |message: String| CaseError::Syntax { line, message };
    let pick = |arg: &IndexArg, dim: usize| -> Res<Vec<usize>> {
        match arg {
            IndexArg::All => Ok((0..dim).collect()),
            IndexArg::Values(vs) => vs
                .iter()
                .map(|&v| {
                    if v >= 1.0 && v.fract() == 0.0 && (v as usize) <= dim {
                        Ok(v as usize - 1)
                    } else {
                        Err(err(format!("index {v} out of bounds for dimension {dim}")))
                    }
                })
                .collect(),
        }
    };
    match args {
        [r, c] => Ok((pick(r, m.rows)?, pick(c, m.cols)?)),
        _ => Err(err(format!("expected 2 indices, found {}", args.len()))),
    }
}

fn assign(current: Option<Value>, index: Option<Vec<IndexArg>>, rhs: Value, line: usize) -> Res<Value> {
    let Some(args) = index else {
        return Ok(rhs);
    };
    let err = |message: String| CaseError::Syntax { line, message };
    let mut m = match current {
        Some(Value::Mat(m)) => m,
        Some(Value::Num(x)) => Mat { rows: 1, cols: 1, data: vec![x] },
        _ => return Err(err("indexed assignment to an undefined or non-numeric value".into())),
    };
    let (rows, cols) = resolve_indices(&m, &args, line)?;
    let src: Vec<f64> = match &rhs {
        Value::Num(x) => vec![*x; rows.len() * cols.len()],
        Value::Mat(r) if r.rows == rows.len() && r.cols == cols.len() => r.data.clone(),
        Value::Mat(r) => {
            return Err(err(format!(
                "cannot assign {}x{} value to {}x{} selection",
                r.rows,
                r.cols,
                rows.len(),
                cols.len()
            )))
        }
        _ => return Err(err("cannot assign a non-numeric value into a matrix".into())),
    };
    let mut k = 0;
    for &r in &rows {
        for &c in &cols {
            let w = m.cols;
            m.data[r * w + c] = src[k];
            k += 1;
        }
    }
    Ok(Value::Mat(m))
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(x) => format!("number {x}"),
        Tok::Ident(s) => format!("identifier '{s}'"),
        Tok::Str(s) => format!("string '{s}'"),
        Tok::Sym(s) => format!("'{s}'"),
        Tok::Newline => "end of line".into(),
        Tok::Eof => "end of file".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"function mpc = twobus
mpc.version = '2';
mpc.baseMVA = 100;
%	bus_i	type	Pd	Qd	Gs	Bs	area	Vm	Va	baseKV	zone	Vmax	Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1	0	135	1	1.05	0.95;
	2	1	50	20	0	0	1	1	0	135	1	1.05	0.95;
];
mpc.gen = [
	1	0	0	100	-100	1	100	1	200	0	0	0	0	0	0	0	0	0	0	0	0;
];
mpc.branch = [
	1	2	0.01	0.1	0	0	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.01	10	0;
];
"#;

    #[test]
    fn two_bus_fixture() {
        let case = parse_matpower_str(TWO_BUS).unwrap();
        assert_eq!(case.name, "twobus");
        assert_eq!(case.n_buses(), 2);
        assert_eq!(case.branches.len(), 1);
        assert!((case.buses[1].pd - 0.5).abs() < 1e-15);
        assert_eq!(case.branches[0].smax, None);
        assert_eq!(case.branches[0].tap, 1.0);
        assert_eq!(case.slack_index(), 0);
    }

    #[test]
    fn dangling_branch_endpoint() {
        let text = TWO_BUS.replace("\t1\t2\t0.01", "\t1\t99\t0.01");
        match parse_matpower_str(&text) {
            Err(CaseError::DanglingBus { bus: 99, .. }) => {}
            other => panic!("expected dangling bus error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_bus() {
        let text = TWO_BUS.replace("\t2\t1\t50", "\t1\t1\t50");
        assert!(matches!(parse_matpower_str(&text), Err(CaseError::DuplicateBus(1))));
    }

    #[test]
    fn missing_gencost() {
        let cut = TWO_BUS.find("mpc.gencost").unwrap();
        assert!(matches!(
            parse_matpower_str(&TWO_BUS[..cut]),
            Err(CaseError::MissingMatrix("gencost"))
        ));
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = TWO_BUS.replace("mpc.baseMVA = 100;", "mpc.baseMVA = 100 $;");
        match parse_matpower_str(&text) {
            Err(CaseError::Syntax { line: 3, .. }) => {}
            other => panic!("expected syntax error on line 3, got {other:?}"),
        }
    }

    #[test]
    fn out_of_service_elements_dropped() {
        let text = TWO_BUS.replace(
            "mpc.branch = [\n",
            "mpc.branch = [\n\t1\t2\t0.02\t0.2\t0\t0\t0\t0\t0\t0\t0\t-360\t360;\n",
        );
        let case = parse_matpower_str(&text).unwrap();
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.branches[0].r, 0.01);
    }

    #[test]
    fn continuation_and_inline_comments() {
        let text = "function mpc = c\nmpc.baseMVA = ...\n  100; % base\nx = [1 -2 3 - 1, 2^2];\n";
        let mut interp = Interpreter::new(lex(text).unwrap());
        interp.run().unwrap();
        assert_eq!(interp.mpc["baseMVA"], Value::Num(100.0));
        assert_eq!(interp.vars["x"].elements().unwrap(), vec![1.0, -2.0, 2.0, 4.0]);
    }

    #[test]
    fn column_post_processing() {
        let text = "mpc.baseMVA = 10;\nmpc.bus = [1 3 100 50; 2 1 200 80];\n\
            [PQ, PV, REF, NONE, BUS_I, BUS_TYPE, PD, QD] = idx_bus;\n\
            mpc.bus(:, [PD, QD]) = mpc.bus(:, [PD, QD]) / 1e3;\n\
            pf = 0.8;\nmpc.bus(:, QD) = mpc.bus(:, PD) * sin(acos(pf));\n\
            v = mpc.bus(1, PD) * 1e3;\n";
        let mut interp = Interpreter::new(lex(text).unwrap());
        interp.run().unwrap();
        let Value::Mat(bus) = &interp.mpc["bus"] else { panic!() };
        assert!((bus.get(0, 2) - 0.1).abs() < 1e-15);
        assert!((bus.get(1, 3) - 0.2 * 0.6).abs() < 1e-12);
        assert_eq!(interp.vars["v"], Value::Num(100.0));
    }
}
