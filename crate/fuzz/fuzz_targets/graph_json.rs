#![no_main]

use libfuzzer_sys::fuzz_target;
use vpe_core::flowgraph::{topo_order, validate_graph, GraphJson};

fuzz_target!(|data: &[u8]| {
    let Ok(json) = serde_json::from_slice::<GraphJson>(data) else {
        return;
    };
    let Ok(graph) = json.to_graph() else {
        return;
    };
    let report = validate_graph(&graph, &[]);
    if report.ok {
        let order = topo_order(&graph).expect("valid graph has an order");
        assert_eq!(order.len(), graph.nodes.len());
    }
});
