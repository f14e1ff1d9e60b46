#![no_main]

use flowwatch::ingest::read_flow_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for rec in read_flow_csv(data) {
        let _ = rec;
    }
});
