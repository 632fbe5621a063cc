#![no_main]

use libfuzzer_sys::fuzz_target;
use prefrank::dataio::{kcore_filter, parse_interactions, InputFormat};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for format in [InputFormat::Pairs, InputFormat::Adjacency] {
        if let Ok(raw) = parse_interactions(text, format) {
            for k in 1..4 {
                let _ = kcore_filter(&raw, k);
            }
        }
    }
});
