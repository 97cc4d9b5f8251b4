//! Spanning tree and fundamental cycles of the meshed bundled cases.

use opfcert::cases::bundled;
use opfcert::graph::{fundamental_cycles, spanning_tree, PowerGraph};

fn main() {
    for name in ["case9", "case14", "case39"] {
        let case = bundled(name).unwrap();
        let g = PowerGraph::from_case(&case);
        let tree = spanning_tree(&g).unwrap();
        let basis = fundamental_cycles(&g, &tree);
        println!("{name}: {} buses, {} edges, {} tree edges, {} cycles", g.n(), g.edges().len(), tree.edges.len(), basis.cycles.len());
        for c in &basis.cycles {
            let ids: Vec<u32> = c.vertices().iter().map(|&i| case.buses[i].id).collect();
            println!("  {ids:?}");
        }
    }
}
