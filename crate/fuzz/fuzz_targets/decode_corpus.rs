//! Any corpus that decodes must re-encode to a file that decodes the same.

#![no_main]

use libfuzzer_sys::fuzz_target;
use prefrank::dataio::{decode_corpus, encode_corpus};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(split) = decode_corpus(text) {
        let encoded = encode_corpus(&split);
        let again = decode_corpus(&encoded).expect("re-encoded corpus decodes");
        assert_eq!(encode_corpus(&again), encoded);
    }
});
