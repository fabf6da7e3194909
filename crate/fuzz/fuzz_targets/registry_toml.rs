#![no_main]

use ctxgate::contexts::ContextRegistry;
use ctxgate::hydro::VehicleParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(registry) = ContextRegistry::parse(text) {
            let nominal = VehicleParams::nominal();
            if let Ok(exported) = registry.export(&nominal) {
                ContextRegistry::parse(&exported).expect("exported registry parses");
            }
        }
    }
});
