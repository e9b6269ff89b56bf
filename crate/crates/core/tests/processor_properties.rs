use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use vpe_core::flowgraph::{FlowNode, Payload, Producer};
use vpe_core::processors::{
    check_outputs, AttributeRecord, Inputs, ProcessorRegistry, RankRecord, ATTRIBUTE_SLOTS,
};
use vpe_core::{DataType, ModuleId};

fn attr_string() -> impl Strategy<Value = String> {
    ATTRIBUTE_SLOTS
        .iter()
        .map(|slot| proptest::sample::select(slot.to_vec()))
        .collect::<Vec<_>>()
        .prop_map(|parts| parts.join("|"))
}

fn inputs(datatype: &str, records: Vec<Vec<u8>>) -> Inputs {
    BTreeMap::from([(
        Producer::Node(0),
        Payload::new(DataType::new(datatype).unwrap(), records, Producer::Node(0)),
    )])
}

/// Brute force: score every candidate, then repeatedly pick the best remaining.
fn oracle_rank(target: &str, cands: &[(u32, String)]) -> Vec<u32> {
    let t: BTreeSet<&str> = target.split('|').collect();
    let mut left: Vec<(u32, usize)> = cands
        .iter()
        .map(|(id, a)| (*id, a.split('|').filter(|x| t.contains(x)).count()))
        .collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (id, s) = left[i];
            let (bid, bs) = left[best];
            if s > bs || (s == bs && id < bid) {
                best = i;
            }
        }
        out.push(left.remove(best).0);
    }
    out
}

proptest! {
    #[test]
    fn ranker_matches_brute_force(
        target in attr_string(),
        cands in proptest::collection::btree_map(0u32..1000, attr_string(), 10..=10),
    ) {
        let cands: Vec<(u32, String)> = cands.into_iter().collect();
        let records: Vec<Vec<u8>> = cands
            .iter()
            .map(|(id, a)| serde_json::to_vec(&AttributeRecord { object_id: *id, attributes: a.clone() }).unwrap())
            .collect();
        let reg = ProcessorRegistry::builtin();
        let node = FlowNode::new(4, ModuleId::new("Rank").unwrap()).with_param("target", target.clone());
        let out = reg.get("reid-ranker").unwrap().process(&node, &inputs("Pedestrian-Attribute", records)).unwrap();
        let got: Vec<u32> = out[0]
            .records
            .iter()
            .map(|r| serde_json::from_slice::<RankRecord>(r).unwrap().object_id)
            .collect();
        prop_assert_eq!(got, oracle_rank(&target, &cands));
    }

    #[test]
    fn pipeline_stages_are_pure_and_declared(count in 0u32..12, seed in any::<u64>()) {
        let reg = ProcessorRegistry::builtin();
        let mut payload = inputs("Video", vec![]);
        let chain = [
            ("frame-source", vec![("count", count.to_string()), ("seed", seed.to_string())]),
            ("detector", vec![]),
            ("tracker", vec![]),
            ("attr-recognizer", vec![]),
            ("reid-ranker", vec![("target", "male|backpack".to_string())]),
        ];
        for (i, (id, params)) in chain.iter().enumerate() {
            let p = reg.get(id).unwrap();
            let mut node = FlowNode::new(i as u32, ModuleId::new("M").unwrap());
            for (k, v) in params {
                node = node.with_param(*k, v.clone());
            }
            let a = p.process(&node, &payload).unwrap();
            let b = p.process(&node, &payload).unwrap();
            prop_assert_eq!(&a, &b);
            check_outputs(p.contract(), &a).unwrap();
            prop_assert_eq!(a.len(), 1);
            payload = inputs(a[0].datatype.as_str(), a[0].records.clone());
        }
    }
}
