#![no_main]

use flowwatch::ingest::netflow::{decode_netflow_v5, encode_netflow_v5};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(dgram) = decode_netflow_v5(data) else {
        return;
    };
    // Anything that decodes and re-encodes must decode to the same flows.
    if let Ok(bytes) = encode_netflow_v5(&dgram.header, &dgram.records) {
        let again = decode_netflow_v5(&bytes).expect("re-encoded datagram decodes");
        assert_eq!(again.records, dgram.records);
    }
});
