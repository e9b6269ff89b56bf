#![no_main]

use libfuzzer_sys::fuzz_target;
use vpe_core::flowgraph::{decode_taskdata, encode_taskdata};

fuzz_target!(|data: &[u8]| {
    if let Ok(td) = decode_taskdata(data) {
        let bytes = encode_taskdata(&td).expect("accepted envelope re-encodes");
        assert_eq!(decode_taskdata(&bytes).expect("re-encoding decodes"), td);
    }
});
