#![no_main]

use libfuzzer_sys::fuzz_target;
use spiseg::evaluation::{rows_from_csv, rows_to_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = rows_from_csv(text) {
        let canonical = rows_to_csv(&rows, true).unwrap();
        assert_eq!(rows_to_csv(&rows_from_csv(&canonical).unwrap(), true).unwrap(), canonical);
    }
});
