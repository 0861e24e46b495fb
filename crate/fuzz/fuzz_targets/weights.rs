#![no_main]

use libfuzzer_sys::fuzz_target;
use proxnn::io::WeightsFile;
use proxnn::pnn::{deserialize_weights, serialize_weights};

fuzz_target!(|data: &[u8]| {
    let _ = WeightsFile::from_bytes(data);
    // anything accepted must survive a round trip
    if let Ok(m) = deserialize_weights(data) {
        let bytes = serialize_weights(&m).expect("re-serialize");
        deserialize_weights(&bytes).expect("round trip");
    }
});
