#![no_main]

use ctxgate::forest::ForestModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = ForestModel::decode(data) {
        assert_eq!(model.encode(), data);
    }
});
