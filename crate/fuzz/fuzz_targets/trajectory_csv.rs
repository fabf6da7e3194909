#![no_main]

use ctxgate::simgen::{read_csv, write_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(traj) = read_csv(data) {
        let mut out = Vec::new();
        write_csv(&traj, &mut out).expect("write to memory");
        let again = read_csv(out.as_slice()).expect("written trajectory parses");
        assert_eq!(again.len(), traj.len());
    }
});
