//! Solves one case under every relaxation and prints the certificate.
//!
//! cargo run --example certify_case -- case14

use opfcert::cases::{bundled, reference_objectives};
use opfcert::certifier::{optimality_gap, Tolerances};
use opfcert::cli::certify_pair;
use opfcert::relaxation::{build, RelaxationKind};
use opfcert::solver::{solve, SolverConfig};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "case14".into());
    let case = bundled(&name).expect("bundled case");
    let reference = reference_objectives().get(&name).map(|r| r.objective);
    println!("{case}");
    for kind in RelaxationKind::ALL {
        let built = build(kind, &case).unwrap();
        let sol = solve(&built, &case, &SolverConfig::default());
        let gap = optimality_gap(sol.objective, reference).map_or("-".into(), |g| format!("{g:.4}%"));
        match certify_pair(&sol, &case, &Tolerances::default()) {
            Ok(cert) => println!(
                "{:>5}  {:>14.6}  gap {gap:>8}  {:?} via {:?}, margin {:.3}",
                kind.name(),
                sol.objective,
                cert.verdict,
                cert.path,
                cert.margin()
            ),
            Err(e) => println!("{:>5}  {e}", kind.name()),
        }
    }
}
