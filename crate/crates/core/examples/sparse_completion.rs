//! Certifies a line-support solution and completes it to a rank-one matrix.

use opfcert::cases::bundled;
use opfcert::certifier::{complete_rank1, Tolerances};
use opfcert::cli::certify_pair;
use opfcert::graph::{spanning_tree, PowerGraph};
use opfcert::relaxation::{build, RelaxationKind};
use opfcert::solver::{solve, SolverConfig};

fn main() {
    let case = bundled("case14").unwrap();
    let tol = Tolerances::default();
    let sol = solve(&build(RelaxationKind::Stcr, &case).unwrap(), &case, &SolverConfig::default());
    println!("STCR carries {} of {} entries of W", sol.w.len(), case.n_buses() * (case.n_buses() + 1) / 2);

    let cert = certify_pair(&sol, &case, &tol).unwrap();
    let sparse = cert.sparse.as_ref().unwrap();
    println!(
        "support {}: tightness max {:.2e} (branch {:?}), cycle max {:.2e}",
        sparse.support, sparse.tightness.max, sparse.tightness.argmax, sparse.cycles.max
    );
    if let Some(row) = &sparse.slack_row {
        println!("slack row: {} entries, max minor {:.2e}", row.entries, row.max);
    }

    let tree = spanning_tree(&PowerGraph::from_case(&case)).unwrap();
    match complete_rank1(&sol, &case, &tree, &tol) {
        Ok(c) => println!("completed; largest deviation from a line entry {:.2e}", c.max_deviation),
        Err(e) => println!("no completion: {e}"),
    }
}
