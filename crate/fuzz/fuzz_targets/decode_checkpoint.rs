#![no_main]

use libfuzzer_sys::fuzz_target;
use prefrank::compute::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    // The encoding is canonical, so a successful decode must reproduce the input.
    if let Ok(ck) = Checkpoint::decode(data) {
        assert_eq!(ck.encode(), data);
    }
});
