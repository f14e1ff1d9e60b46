#![no_main]

use flowwatch::TrafficModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = TrafficModel::from_document(text) {
        let back = TrafficModel::from_document(&model.to_document()).expect("round trip");
        assert_eq!(back.b.to_bits(), model.b.to_bits());
        assert_eq!(back.k.to_bits(), model.k.to_bits());
        let _ = model.band(1000);
    }
});
