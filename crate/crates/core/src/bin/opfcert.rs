use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use opfcert::cases::{parse_reference_objectives, BUNDLED};
use opfcert::certifier::Tolerances;
use opfcert::cli::{any_failed, cases_in_dir, render, run, CaseSource, ReportFormat, RunSpec};
use opfcert::relaxation::RelaxationKind;
use opfcert::solver::{solve_cbf_file, BackendSelector, SolveStatus, SolverConfig};

/// Solve conic relaxations of AC-OPF and certify their exactness.
///
/// With no case given, runs the seven bundled benchmark cases.
#[derive(Parser)]
#[command(version, args_conflicts_with_subcommands = true)]
struct Args {
    #[command(subcommand)]
    command: Option<Command>,
    /// bundled case name or MATPOWER file, repeatable
    #[arg(long = "case")]
    cases: Vec<String>,
    /// directory whose *.m files are all run
    #[arg(long)]
    case_dir: Option<PathBuf>,
    /// SDR, SOCR, TCR or STCR, repeatable; all four by default
    #[arg(long = "relaxation")]
    kinds: Vec<RelaxationKind>,
    #[arg(long)]
    eps_rank: Option<f64>,
    #[arg(long)]
    eps_tight: Option<f64>,
    #[arg(long)]
    eps_cycle: Option<f64>,
    /// clarabel or external:<command>
    #[arg(long)]
    backend: Option<BackendSelector>,
    /// table, csv or json
    #[arg(long, default_value = "table")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML table of AC objectives used for gaps
    #[arg(long)]
    reference_objectives: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a CBF file natively and write a solution file, as an external
    /// backend would
    SolveCbf { problem: PathBuf, solution: PathBuf },
}

fn spec_from(args: Args) -> Result<RunSpec, String> {
    let mut cases: Vec<CaseSource> = args.cases.iter().map(|c| CaseSource::parse(c)).collect();
    if let Some(dir) = &args.case_dir {
        cases.extend(cases_in_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?);
    }
    if cases.is_empty() {
        cases = BUNDLED.iter().map(|c| CaseSource::Bundled(c.to_string())).collect();
    }
    let kinds = if args.kinds.is_empty() { RelaxationKind::ALL.to_vec() } else { args.kinds };
    let mut spec = RunSpec::new(cases, kinds);
    let d = Tolerances::default();
    spec.tolerances = Tolerances {
        eps_rank: args.eps_rank.unwrap_or(d.eps_rank),
        eps_tight: args.eps_tight.unwrap_or(d.eps_tight),
        eps_cycle: args.eps_cycle.unwrap_or(d.eps_cycle),
        ..d
    };
    spec.solver = SolverConfig::default().with_env_override()?;
    if let Some(b) = args.backend {
        spec.solver.backend = b;
    }
    spec.format = args.format.parse::<ReportFormat>().map_err(|e| e.to_string())?;
    spec.out = args.out;
    if let Some(p) = &args.reference_objectives {
        let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
        spec.references = Some(parse_reference_objectives(&text).map_err(|e| format!("{}: {e}", p.display()))?);
    }
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(Command::SolveCbf { problem, solution }) = &args.command {
        return match solve_cbf_file(problem, solution) {
            Ok(SolveStatus::NumericalFailure) => ExitCode::from(1),
            Ok(_) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        };
    }
    let spec = match spec_from(args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let records = match run(&spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let text = match render(&records, spec.format) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match &spec.out {
        Some(p) => {
            if let Err(e) = std::fs::write(p, &text) {
                eprintln!("error: {}: {e}", p.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{text}"),
    }
    if any_failed(&records) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
