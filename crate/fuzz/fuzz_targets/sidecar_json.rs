#![no_main]

use libfuzzer_sys::fuzz_target;
use shieldnav::policy::checkpoint::CheckpointMeta;

fuzz_target!(|s: &str| {
    let _ = CheckpointMeta::from_json(s);
});
