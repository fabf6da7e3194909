#![no_main]

use ctxgate::dataset::SeriesDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = SeriesDataset::decode(data) {
        assert_eq!(ds.encode(), data);
    }
});
