#![no_main]

use libfuzzer_sys::fuzz_target;
use spiseg::sensing::export::BankManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = BankManifest::from_json(text);
    }
});
