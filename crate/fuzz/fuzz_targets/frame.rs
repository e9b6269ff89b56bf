#![no_main]

use libfuzzer_sys::fuzz_target;
use vpe_core::wire::{encode_frame, parse_frame, read_frame};

fuzz_target!(|data: &[u8]| {
    if let Ok((opcode, body, used)) = parse_frame(data) {
        assert!(used <= data.len());
        assert_eq!(encode_frame(opcode, body), &data[..used]);
    }
    let _ = read_frame(&mut &data[..]);
});
