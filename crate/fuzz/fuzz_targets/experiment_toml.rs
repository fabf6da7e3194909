#![no_main]

use ctxgate::eval::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::parse(text) {
            let again = ExperimentConfig::parse(&cfg.render()).expect("rendered config parses");
            assert_eq!(again.digest(), cfg.digest());
        }
    }
});
