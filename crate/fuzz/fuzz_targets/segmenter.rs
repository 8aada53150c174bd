#![no_main]

use libfuzzer_sys::fuzz_target;
use spiseg::container::reseal;
use spiseg::baselines::ImageSegmenter;

fuzz_target!(|data: &[u8]| {
    // mutated bodies get a valid trailer so the decoder itself is reached
    for bytes in [data.to_vec(), reseal(data)] {
        let data = bytes.as_slice();
        if let Ok(seg) = ImageSegmenter::from_bytes(data) {
            assert!(ImageSegmenter::from_bytes(&seg.to_bytes().unwrap()).is_ok());
        }
    }
});
