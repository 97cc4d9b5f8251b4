//! Writes a relaxation in CBF, solves the file, and reads the solution back.

use opfcert::cases::two_bus;
use opfcert::relaxation::{build, RelaxationKind};
use opfcert::solver::solve_cbf_file;

fn main() {
    let case = two_bus();
    let built = build(RelaxationKind::Tcr, &case).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("twobus_tcr.cbf");
    let solution = dir.path().join("twobus_tcr.sol");
    std::fs::write(&problem, built.program.to_cbf()).unwrap();

    let status = solve_cbf_file(&problem, &solution).unwrap();
    let text = std::fs::read_to_string(&solution).unwrap();
    println!("{status}; {} variables", built.program.n_vars());
    for line in text.lines().take(3) {
        println!("  {line}");
    }
}
