//! Batch driver: cases × relaxations → certificates, gaps and reports.
//!
//! The JSON report is an array of [`RunRecord`] objects, documented in
//! `docs/report-schema.md`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cases::{bundled, bundled_source, reference_objectives, ReferenceTable};
use crate::certifier::{certify_sparse, optimality_gap, rank1_certificate, CertPath, ExactnessCertificate, Tolerances, Verdict};
use crate::netmodel::{parse_matpower_str, NetworkCase};
use crate::relaxation::{build, RelaxationKind};
use crate::solver::{extract_dense_w, solve, LiftedSolution, SolveStatus, SolverConfig};

/// A case given either by bundled name or by file path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseSource {
    Bundled(String),
    File(PathBuf),
}

impl CaseSource {
    /// Bundled names win over relative paths of the same spelling.
    pub fn parse(s: &str) -> Self {
        if bundled_source(s).is_some() {
            CaseSource::Bundled(s.to_string())
        } else {
            CaseSource::File(PathBuf::from(s))
        }
    }

    /// Name used in records when the case cannot be loaded.
    pub fn label(&self) -> String {
        match self {
            CaseSource::Bundled(n) => n.clone(),
            CaseSource::File(p) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string()),
        }
    }

    pub fn load(&self) -> Result<NetworkCase, String> {
        match self {
            CaseSource::Bundled(n) => bundled(n).map_err(|e| e.to_string()),
            CaseSource::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                parse_matpower_str(&text).map_err(|e| format!("{}: {e}", p.display()))
            }
        }
    }
}

/// Every `*.m` file of a directory, sorted by file name.
pub fn cases_in_dir(dir: &Path) -> std::io::Result<Vec<CaseSource>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "m"))
        .collect();
    files.sort();
    Ok(files.into_iter().map(CaseSource::File).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(RunError::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("no cases given")]
    NoCases,
    #[error("no relaxations given")]
    NoKinds,
    #[error("unknown report format '{0}' (expected table, csv or json)")]
    UnknownFormat(String),
    #[error("nothing to render")]
    NoRecords,
    #[error(transparent)]
    Tolerance(#[from] crate::certifier::CertError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub cases: Vec<CaseSource>,
    pub kinds: Vec<RelaxationKind>,
    pub tolerances: Tolerances,
    pub solver: SolverConfig,
    pub format: ReportFormat,
    pub out: Option<PathBuf>,
    /// bundled table when `None`
    pub references: Option<ReferenceTable>,
}

impl RunSpec {
    pub fn new(cases: Vec<CaseSource>, kinds: Vec<RelaxationKind>) -> Self {
        RunSpec {
            cases,
            kinds,
            tolerances: Tolerances::default(),
            solver: SolverConfig::default(),
            format: ReportFormat::Table,
            out: None,
            references: None,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.cases.is_empty() {
            return Err(RunError::NoCases);
        }
        if self.kinds.is_empty() {
            return Err(RunError::NoKinds);
        }
        self.tolerances.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// One (case, relaxation) pair. Failed pairs keep their slot with the
/// error message and whatever was computed before the failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case: String,
    pub kind: RelaxationKind,
    pub status: RunStatus,
    pub solve_status: Option<SolveStatus>,
    pub objective: Option<f64>,
    pub reference: Option<f64>,
    /// percent
    pub gap: Option<f64>,
    pub verdict: Option<Verdict>,
    pub cert_path: Option<CertPath>,
    /// residual that decided the verdict over its tolerance
    pub cert_margin: Option<f64>,
    /// verdict under default tolerances, which decides the table mark
    pub exact_at_default: Option<bool>,
    pub wall_time_s: f64,
    pub iterations: Option<u32>,
    pub error: Option<String>,
}

impl RunRecord {
    fn failed(case: String, kind: RelaxationKind, msg: String) -> Self {
        RunRecord {
            case,
            kind,
            status: RunStatus::Failed,
            solve_status: None,
            objective: None,
            reference: None,
            gap: None,
            verdict: None,
            cert_path: None,
            cert_margin: None,
            exact_at_default: None,
            wall_time_s: 0.0,
            iterations: None,
            error: Some(msg),
        }
    }
}

/// Dense rank test for SDR, line-support completion test otherwise.
pub fn certify_pair(sol: &LiftedSolution, case: &NetworkCase, tol: &Tolerances) -> Result<ExactnessCertificate, String> {
    if sol.status != SolveStatus::Optimal {
        return Err(format!("solver status is {}", sol.status));
    }
    if sol.kind == RelaxationKind::Sdr {
        let w = extract_dense_w(sol).map_err(|e| e.to_string())?;
        let mut cert = rank1_certificate(&w, tol).map_err(|e| e.to_string())?;
        cert.case = sol.case.clone();
        cert.kind = Some(sol.kind);
        Ok(cert)
    } else {
        certify_sparse(sol, case, tol).map_err(|e| e.to_string())
    }
}

fn run_pair(case: &NetworkCase, kind: RelaxationKind, spec: &RunSpec, refs: &ReferenceTable) -> RunRecord {
    let start = Instant::now();
    let mut rec = RunRecord::failed(case.name.clone(), kind, String::new());
    rec.reference = refs.get(&case.name).map(|r| r.objective);
    let result = (|| -> Result<(), String> {
        let built = build(kind, case).map_err(|e| e.to_string())?;
        let sol = solve(&built, case, &spec.solver);
        rec.solve_status = Some(sol.status);
        rec.iterations = Some(sol.diagnostics.iterations);
        if sol.status != SolveStatus::Optimal {
            let detail = sol.diagnostics.message.clone().map(|m| format!(": {m}")).unwrap_or_default();
            return Err(format!("solver status is {}{detail}", sol.status));
        }
        rec.objective = Some(sol.objective);
        rec.gap = optimality_gap(sol.objective, rec.reference).ok();
        let cert = certify_pair(&sol, case, &spec.tolerances)?;
        rec.verdict = Some(cert.verdict);
        rec.cert_path = Some(cert.path);
        rec.cert_margin = Some(cert.margin());
        rec.exact_at_default = Some(if spec.tolerances == Tolerances::default() {
            cert.is_exact()
        } else {
            certify_pair(&sol, case, &Tolerances::default())?.is_exact()
        });
        Ok(())
    })();
    rec.wall_time_s = start.elapsed().as_secs_f64();
    match result {
        Ok(()) => {
            rec.status = RunStatus::Completed;
            rec.error = None;
        }
        Err(msg) => rec.error = Some(msg),
    }
    rec
}

/// Runs every (case, kind) pair. Records come back ordered by the case's
/// position in `RunSpec::cases`, then by relaxation.
pub fn run(spec: &RunSpec) -> Result<Vec<RunRecord>, RunError> {
    spec.validate()?;
    let refs = spec.references.clone().unwrap_or_else(reference_objectives);
    let loaded: Vec<(String, Result<NetworkCase, String>)> =
        spec.cases.par_iter().map(|c| (c.label(), c.load())).collect();
    let mut kinds = spec.kinds.clone();
    kinds.sort();
    kinds.dedup();
    let pairs: Vec<(usize, RelaxationKind)> =
        (0..loaded.len()).flat_map(|c| kinds.iter().map(move |&k| (c, k))).collect();
    let records = pairs
        .par_iter()
        .map(|&(c, kind)| match &loaded[c] {
            (_, Ok(case)) => run_pair(case, kind, spec, &refs),
            (label, Err(msg)) => RunRecord::failed(label.clone(), kind, msg.clone()),
        })
        .collect();
    Ok(records)
}

/// Whether any pair failed; the process exit code follows this.
pub fn any_failed(records: &[RunRecord]) -> bool {
    records.iter().any(|r| r.status == RunStatus::Failed)
}

pub fn render(records: &[RunRecord], format: ReportFormat) -> Result<String, RunError> {
    if records.is_empty() {
        return Err(RunError::NoRecords);
    }
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(records)? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in records {
                w.serialize(r)?;
            }
            let bytes = w.into_inner().map_err(|e| RunError::Csv(e.into_error().into()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Table => Ok(render_table(records)),
    }
}

pub fn parse_csv(text: &str) -> Result<Vec<RunRecord>, RunError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

fn render_table(records: &[RunRecord]) -> String {
    let mut cases: Vec<&str> = Vec::new();
    let mut kinds: Vec<RelaxationKind> = Vec::new();
    for r in records {
        if !cases.contains(&r.case.as_str()) {
            cases.push(&r.case);
        }
        if !kinds.contains(&r.kind) {
            kinds.push(r.kind);
        }
    }
    kinds.sort();
    let find = |c: &str, k: RelaxationKind| records.iter().find(|r| r.case == c && r.kind == k);
    let width = cases.iter().map(|c| c.len()).max().unwrap_or(0).max(8);

    let mut out = String::new();
    let matrix = |out: &mut String, title: &str, cell: &dyn Fn(&RunRecord) -> String| {
        let _ = writeln!(out, "{title}");
        let _ = write!(out, "{:<width$}", "case");
        for k in &kinds {
            let _ = write!(out, " {:>6}", k.name());
        }
        out.push('\n');
        for c in &cases {
            let _ = write!(out, "{c:<width$}");
            for &k in &kinds {
                let s = find(c, k).map(cell).unwrap_or_default();
                let _ = write!(out, " {s:>6}");
            }
            out.push('\n');
        }
    };
    matrix(&mut out, "Ex post condition satisfied", &|r| match (r.status, r.exact_at_default) {
        (RunStatus::Failed, _) => "err".into(),
        (_, Some(true)) => "✓".into(),
        _ => String::new(),
    });
    out.push('\n');
    matrix(&mut out, "Optimality gap (%)", &|r| match (r.status, r.gap) {
        (RunStatus::Failed, _) => "err".into(),
        (_, Some(g)) => format!("{g:.2}"),
        _ => "-".into(),
    });
    let failed: Vec<&RunRecord> = records.iter().filter(|r| r.status == RunStatus::Failed).collect();
    if !failed.is_empty() {
        out.push('\n');
        for r in failed {
            let _ = writeln!(out, "{} {}: {}", r.case, r.kind, r.error.as_deref().unwrap_or("failed"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(case: &str, kind: RelaxationKind, exact: bool, gap: f64) -> RunRecord {
        RunRecord {
            case: case.into(),
            kind,
            status: RunStatus::Completed,
            solve_status: Some(SolveStatus::Optimal),
            objective: Some(100.0),
            reference: Some(100.0 / (1.0 - gap / 100.0)),
            gap: Some(gap),
            verdict: Some(if exact { Verdict::Exact } else { Verdict::NotCertified }),
            cert_path: Some(CertPath::SparseCompletion),
            cert_margin: Some(0.25),
            exact_at_default: Some(exact),
            wall_time_s: 0.01,
            iterations: Some(12),
            error: None,
        }
    }

    #[test]
    fn empty_spec_is_rejected() {
        assert!(matches!(RunSpec::new(vec![], RelaxationKind::ALL.to_vec()).validate(), Err(RunError::NoCases)));
        assert!(matches!(RunSpec::new(vec![CaseSource::parse("case9")], vec![]).validate(), Err(RunError::NoKinds)));
    }

    #[test]
    fn unknown_format() {
        assert!(matches!("xml".parse::<ReportFormat>(), Err(RunError::UnknownFormat(_))));
        assert_eq!("JSON".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
    }

    #[test]
    fn case_source_prefers_bundled_names() {
        assert_eq!(CaseSource::parse("case14"), CaseSource::Bundled("case14".into()));
        assert_eq!(CaseSource::parse("grid/case14.m").label(), "case14");
    }

    #[test]
    fn table_has_one_row_per_case_and_column_per_kind() {
        let mut recs = Vec::new();
        for c in ["a", "bb"] {
            for k in RelaxationKind::ALL {
                recs.push(record(c, k, k != RelaxationKind::Socr, if k == RelaxationKind::Socr { 0.08 } else { 0.0 }));
            }
        }
        let t = render(&recs, ReportFormat::Table).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 9);
        assert!(lines[1].contains("SDR") && lines[1].contains("STCR"));
        assert_eq!(lines[2].matches('✓').count(), 3);
        assert!(lines[7].contains("0.08"));
    }

    #[test]
    fn failed_pair_is_marked_and_explained() {
        let mut r = RunRecord::failed("x".into(), RelaxationKind::Tcr, "boom".into());
        r.wall_time_s = 0.5;
        let t = render(&[r.clone()], ReportFormat::Table).unwrap();
        assert!(t.contains("err") && t.contains("x TCR: boom"));
        assert!(any_failed(&[r]));
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            record("a", RelaxationKind::Sdr, true, 0.0),
            RunRecord::failed("b".into(), RelaxationKind::Stcr, "no file, really".into()),
        ];
        let text = render(&recs, ReportFormat::Csv).unwrap();
        assert_eq!(parse_csv(&text).unwrap(), recs);
    }

    #[test]
    fn nothing_to_render() {
        assert!(matches!(render(&[], ReportFormat::Json), Err(RunError::NoRecords)));
    }
}
