//! Size of each relaxation on each bundled case.

use opfcert::cases::{bundled, BUNDLED};
use opfcert::relaxation::{build, RelaxationKind};

fn main() {
    println!("{:<9} {:>5} {:>6} {:>5} {:>5} {:>5} {:>4}  psd dims", "case", "kind", "vars", "eq", "ineq", "soc", "psd");
    for name in BUNDLED {
        let case = bundled(name).unwrap();
        for kind in RelaxationKind::ALL {
            let c = build(kind, &case).unwrap().report.counts;
            let mut dims = c.psd_dims.clone();
            dims.sort_unstable();
            dims.dedup();
            println!(
                "{name:<9} {:>5} {:>6} {:>5} {:>5} {:>5} {:>4}  {dims:?}",
                kind.name(),
                c.variables,
                c.eq_rows,
                c.ineq_rows,
                c.soc + c.rotated_soc,
                c.psd
            );
        }
    }
}
