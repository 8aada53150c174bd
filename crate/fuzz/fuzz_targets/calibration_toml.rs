#![no_main]

use libfuzzer_sys::fuzz_target;
use spiseg::measurement_io::Calibration;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cal) = Calibration::from_toml(text) {
        assert!(cal.validate().is_ok());
        assert_eq!(Calibration::from_toml(&cal.to_toml().unwrap()).unwrap(), cal);
    }
});
