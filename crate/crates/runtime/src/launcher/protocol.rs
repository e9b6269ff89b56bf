use serde::{Deserialize, Serialize};
use vpe_core::ModuleDescriptor;

pub const OP_LAUNCH: u8 = 1;
pub const OP_TERMINATE: u8 = 2;
pub const OP_LIST: u8 = 3;
pub const OP_FAULT: u8 = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchRequest {
    pub descriptor: ModuleDescriptor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminateRequest {
    pub module_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminateReply {
    pub module_id: String,
    /// The module missed the deadline and was killed.
    pub forced: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultRequest {
    pub module_id: String,
    /// Stage boundary to crash at; absent means kill now.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleStatus {
    pub descriptor: ModuleDescriptor,
    /// Datatypes the module's processor emits.
    pub produces: Vec<String>,
    pub running: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pid: Option<u32>,
    pub restarts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub armed_fault: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ListReply {
    pub modules: Vec<ModuleStatus>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Empty {}

pub fn check_request(opcode: u8, body: &[u8]) -> Result<(), String> {
    fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<(), String> {
        serde_json::from_slice::<T>(body)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
    match opcode {
        OP_LAUNCH => parse::<LaunchRequest>(body),
        OP_TERMINATE => parse::<TerminateRequest>(body),
        OP_LIST => parse::<Empty>(body),
        OP_FAULT => parse::<FaultRequest>(body),
        other => Err(format!("unknown opcode {other}")),
    }
}
