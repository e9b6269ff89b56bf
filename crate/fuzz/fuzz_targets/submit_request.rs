#![no_main]

use libfuzzer_sys::fuzz_target;
use uuid::Uuid;
use vpe_core::{DataType, ModuleDescriptor, ModuleId};
use vpe_gateway::api::SubmitRequest;
use vpe_gateway::plan_submission;
use vpe_runtime::launcher::ModuleStatus;

fn module(id: &str, accepts: &str, produces: &str) -> ModuleStatus {
    ModuleStatus {
        descriptor: ModuleDescriptor::new(
            ModuleId::new(id).unwrap(),
            [DataType::new(accepts).unwrap()],
            "relay",
        ),
        produces: vec![produces.to_owned()],
        running: true,
        pid: None,
        restarts: 0,
        armed_fault: None,
    }
}

fuzz_target!(|data: &[u8]| {
    let Ok(req) = serde_json::from_slice::<SubmitRequest>(data) else {
        return;
    };
    let modules = [
        module("A", "Blob", "Blob"),
        module("B", "Blob", "Blob"),
        module("F", "Frame", "Pedestrian-BBox"),
    ];
    if let Ok(plan) = plan_submission(&req, &modules, Uuid::nil()) {
        for (_, td) in plan {
            td.check().expect("planned envelopes are well formed");
        }
    }
});
