#![no_main]

use flowwatch::mitigate::{emit_firewall_rules, replay_journal, Blacklist, Dialect};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(replay) = replay_journal(data, Blacklist::default(), None) {
        let _ = emit_firewall_rules(&replay.blacklist, Dialect::LinuxPacketFilter);
    }
});
