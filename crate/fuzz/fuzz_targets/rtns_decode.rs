#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = mxlink::rtns::decode(data) {
        assert_eq!(mxlink::rtns::encode(&t), data);
    }
});
