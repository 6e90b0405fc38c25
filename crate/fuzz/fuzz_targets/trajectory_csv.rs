#![no_main]

use libfuzzer_sys::fuzz_target;
use secure_consensus::dynamics::{read_contributions_csv, read_trajectory_csv};

fuzz_target!(|data: &[u8]| {
    let _ = read_trajectory_csv(data);
    let _ = read_contributions_csv(data);
});
