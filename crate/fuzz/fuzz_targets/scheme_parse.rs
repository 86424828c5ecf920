#![no_main]

use libfuzzer_sys::fuzz_target;
use mxlink::compressor::Compressor;
use mxlink::formats::SchemeDescriptor;

fuzz_target!(|s: &str| {
    if let Ok(d) = s.parse::<SchemeDescriptor>() {
        assert_eq!(d.to_string().parse::<SchemeDescriptor>().unwrap(), d);
    }
    if let Ok(c) = s.parse::<Compressor>() {
        assert_eq!(c.to_string().parse::<Compressor>().unwrap(), c);
    }
});
