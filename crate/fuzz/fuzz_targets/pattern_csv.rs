#![no_main]

use libfuzzer_sys::fuzz_target;
use spiseg::sensing::export::{bank_from_csv, bank_to_csv, BankManifest};

// Input is `<manifest json>\0<csv>`.
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else { return };
    let (Ok(json), Ok(csv)) = (std::str::from_utf8(&data[..split]), std::str::from_utf8(&data[split + 1..])) else {
        return;
    };
    let Ok(manifest) = BankManifest::from_json(json) else { return };
    let Ok(bank) = bank_from_csv(csv, &manifest) else { return };
    assert_eq!(bank.len(), manifest.count);
    assert_eq!(bank.dims(), manifest.dims);
    assert_eq!(bank_from_csv(&bank_to_csv(&bank), &manifest).unwrap(), bank);
});
