#![no_main]

use libfuzzer_sys::fuzz_target;
use mxlink::formats::ScaleFormat;
use mxlink::search::{self, MetricTable};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = MetricTable::from_reader(data, ScaleFormat::E5M0) {
        if t.candidates().is_empty() {
            return;
        }
        let results = search::run_grid(&search::SearchConfig::new(t.candidates(), 3.0).unwrap(), &t).unwrap();
        let _ = search::select_scheme(&results, 3.0);
    }
});
