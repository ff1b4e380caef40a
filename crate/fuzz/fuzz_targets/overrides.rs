#![no_main]

use bmtd::config::apply_override;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let mut table = toml::Table::new();
    for line in text.lines() {
        let _ = apply_override(&mut table, line);
    }
});
