#![no_main]

use libfuzzer_sys::fuzz_target;
use spiseg::container::reseal;
use spiseg::datasets::PreparedDataset;

fuzz_target!(|data: &[u8]| {
    // mutated bodies get a valid trailer so the decoder itself is reached
    for bytes in [data.to_vec(), reseal(data)] {
        let data = bytes.as_slice();
        if let Ok(ds) = PreparedDataset::from_bytes(data) {
            let bytes = ds.to_bytes().unwrap();
            assert_eq!(PreparedDataset::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
        }
    }
});
