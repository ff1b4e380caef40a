#![no_main]

use bmtd::RoundLog;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(log) = RoundLog::from_json_line(line) {
        let again = RoundLog::from_json_line(&log.to_json_line()).expect("re-parse");
        assert_eq!(again.to_json_line(), log.to_json_line());
    }
});
