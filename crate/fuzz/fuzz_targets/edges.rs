#![no_main]

use libfuzzer_sys::fuzz_target;
use resprop::dataset::read_edges;
use resprop::SparseGraph;

fuzz_target!(|data: &[u8]| {
    let Ok(edges) = read_edges(data, "edges.tsv") else {
        return;
    };
    // Bound the node count so huge indices do not exhaust memory.
    let n = edges
        .iter()
        .map(|&(i, j, _)| i.max(j) + 1)
        .max()
        .unwrap_or(0);
    if n > 1 << 16 {
        return;
    }
    if let Ok(g) = SparseGraph::from_edges(n, edges, true) {
        let _ = g.normalize();
    }
});
