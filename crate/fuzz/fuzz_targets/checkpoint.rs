#![no_main]

use libfuzzer_sys::fuzz_target;
use spiseg::container::reseal;
use spiseg::training::{checkpoint_from_bytes, checkpoint_to_bytes};

fuzz_target!(|data: &[u8]| {
    // mutated bodies get a valid trailer so the decoder itself is reached
    for bytes in [data.to_vec(), reseal(data)] {
        let data = bytes.as_slice();
        if let Ok(model) = checkpoint_from_bytes(data) {
            let bytes = checkpoint_to_bytes(&model).unwrap();
            assert!(checkpoint_from_bytes(&bytes).is_ok());
        }
    }
});
