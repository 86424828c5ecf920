#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ct) = mxlink::wire::deserialize(data) {
        let _ = mxlink::codec::decompress_tensor(&ct);
    }
});
