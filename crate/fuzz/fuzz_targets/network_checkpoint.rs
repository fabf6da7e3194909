#![no_main]

use ctxgate::nnet::ClassifierModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = ClassifierModel::decode(data) {
        assert_eq!(model.encode(), data);
    }
});
