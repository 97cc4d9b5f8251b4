//! Runs the fixtures through the batch driver and prints every format.

use opfcert::cli::{render, run, CaseSource, ReportFormat, RunSpec};
use opfcert::relaxation::RelaxationKind;

fn main() {
    let spec = RunSpec::new(vec![CaseSource::parse("twobus"), CaseSource::parse("triangle")], RelaxationKind::ALL.to_vec());
    let records = run(&spec).unwrap();
    print!("{}", render(&records, ReportFormat::Table).unwrap());
    println!();
    print!("{}", render(&records, ReportFormat::Csv).unwrap());
    println!();
    print!("{}", render(&records[..1], ReportFormat::Json).unwrap());
}
