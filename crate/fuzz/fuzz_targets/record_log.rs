#![no_main]

use libfuzzer_sys::fuzz_target;
use vpe_core::recordlog::scan_records;
use vpe_msgbus::decode_log_record;

fuzz_target!(|data: &[u8]| {
    let (records, valid) = scan_records(data);
    assert!(valid <= data.len());
    for r in records {
        let _ = decode_log_record(r);
    }
});
