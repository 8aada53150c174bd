#![no_main]

use libfuzzer_sys::fuzz_target;
use spiseg::measurement_io::{parse_recording, recording_to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(rec) = parse_recording(text) else { return };
    assert!(!rec.values.is_empty());
    assert!(rec.values.iter().all(|v| v.is_finite()));
    if let Ok(canonical) = recording_to_string(&rec) {
        assert_eq!(parse_recording(&canonical).unwrap(), rec);
    }
});
