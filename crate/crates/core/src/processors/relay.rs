use crate::flowgraph::FlowNode;

use super::{
    datatypes, output, records_of, Inputs, Output, Processor, ProcessorContract, ProcessorError,
};

/// `relay`: forwards every input record (producer order) and appends one
/// record `node:<id>` marking its own execution.
#[derive(Debug)]
pub struct Relay {
    contract: ProcessorContract,
}

impl Relay {
    pub fn new() -> Self {
        Self {
            contract: ProcessorContract::new("relay", &[datatypes::BLOB], &[datatypes::BLOB]),
        }
    }
}

impl Default for Relay {
    fn default() -> Self {
        Self::new()
    }
}

impl Processor for Relay {
    fn contract(&self) -> &ProcessorContract {
        &self.contract
    }

    fn process(&self, node: &FlowNode, inputs: &Inputs) -> Result<Vec<Output>, ProcessorError> {
        let mut records: Vec<Vec<u8>> = records_of(inputs, datatypes::BLOB)?
            .into_iter()
            .map(<[u8]>::to_vec)
            .collect();
        records.push(format!("node:{}", node.id).into_bytes());
        Ok(vec![output(datatypes::BLOB, records)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowgraph::{Payload, Producer};
    use crate::token::{DataType, ModuleId};
    use std::collections::BTreeMap;

    #[test]
    fn merges_inputs_in_producer_order() {
        let blob = DataType::new("Blob").unwrap();
        let inputs = BTreeMap::from([
            (
                Producer::Node(1),
                Payload::new(blob.clone(), vec![b"b".to_vec()], Producer::Node(1)),
            ),
            (
                Producer::Node(0),
                Payload::new(blob, vec![b"a".to_vec()], Producer::Node(0)),
            ),
        ]);
        let out = Relay::new()
            .process(&FlowNode::new(2, ModuleId::new("R").unwrap()), &inputs)
            .unwrap();
        assert_eq!(
            out[0].records,
            vec![b"a".to_vec(), b"b".to_vec(), b"node:2".to_vec()]
        );
    }
}
