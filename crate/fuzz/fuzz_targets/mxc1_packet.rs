#![no_main]

use libfuzzer_sys::fuzz_target;
use mxlink::compressor::Packet;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = Packet::from_mxc1(data) {
        let _ = p.decompress();
        let again = Packet::from_mxc1(&p.to_bytes().unwrap()).unwrap();
        assert_eq!(again, p);
    }
});
