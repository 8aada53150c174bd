#![no_main]

use libfuzzer_sys::fuzz_target;
use spiseg::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_toml(text) {
        let _ = cfg.resolved().validate();
        if let Ok(back) = cfg.to_toml() {
            assert_eq!(ExperimentConfig::from_toml(&back).unwrap().digest(), cfg.digest());
        }
    }
});
