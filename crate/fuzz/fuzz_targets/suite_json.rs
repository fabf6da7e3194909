#![no_main]

use ctxgate::eval::SuiteReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = SuiteReport::from_json(text) {
            let again = SuiteReport::from_json(&report.to_json()).expect("rendered report parses");
            assert_eq!(again.reports.len(), report.reports.len());
        }
    }
});
