#![no_main]

use flowwatch::ingest::netflow::decode_netflow_v5;
use flowwatch::ingest::read_replay;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for dgram in read_replay(data) {
        match dgram {
            Ok(d) => {
                let _ = decode_netflow_v5(d);
            }
            Err(_) => break,
        }
    }
});
