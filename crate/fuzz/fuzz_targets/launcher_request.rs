#![no_main]

use libfuzzer_sys::fuzz_target;
use vpe_runtime::launcher::protocol::check_request;

fuzz_target!(|data: &[u8]| {
    if let Some((&opcode, body)) = data.split_first() {
        let _ = check_request(opcode, body);
    }
});
