#![no_main]

use flowwatch::simulate::ScenarioSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(spec) = toml::from_str::<ScenarioSpec>(text) else {
        return;
    };
    if spec.validate().is_ok() {
        let _ = spec.window_count();
        let _ = spec.attackers();
    }
});
