//! Recovers the AC operating point of a radial feeder from its SDR optimum.

use opfcert::cases::bundled;
use opfcert::certifier::{recover, Tolerances};
use opfcert::cli::certify_pair;
use opfcert::relaxation::{build, RelaxationKind};
use opfcert::solver::{solve, SolverConfig};

fn main() {
    let case = bundled("case33bw").unwrap();
    let sol = solve(&build(RelaxationKind::Sdr, &case).unwrap(), &case, &SolverConfig::default());
    let cert = certify_pair(&sol, &case, &Tolerances::default()).unwrap();
    let point = recover(&sol, &case, &cert).expect("certified");

    println!("bus      |V|    angle(deg)");
    for (bus, v) in case.buses.iter().zip(&point.v) {
        println!("{:>3}  {:>8.5}  {:>10.4}", bus.id, v.norm(), v.arg().to_degrees());
    }
    println!("max power-flow residual {:.2e} p.u.", point.max_residual);
    println!("worst limit violation   {:.2e} p.u.", point.violations.max());
    println!("cost {:.6} $/h (relaxation {:.6})", point.objective, sol.objective);
}
