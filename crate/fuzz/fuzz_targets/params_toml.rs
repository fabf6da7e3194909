#![no_main]

use ctxgate::hydro::ParamsFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(params) = ParamsFile::parse(text) {
            let again = ParamsFile::parse(&ParamsFile::render(&params)).expect("rendered file parses");
            assert_eq!(again, params);
        }
    }
});
