#![no_main]

use libfuzzer_sys::fuzz_target;
use vpe_runtime::ModuleConfig;

fuzz_target!(|text: &str| {
    let _ = ModuleConfig::parse(text);
});
