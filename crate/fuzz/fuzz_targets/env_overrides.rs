#![no_main]

use libfuzzer_sys::fuzz_target;
use shieldnav::config::Config;

// One KEY=VALUE pair per line.
fuzz_target!(|s: &str| {
    let vars = s.lines().filter_map(|l| l.split_once('='));
    let _ = Config::from_json_with_overrides("{}", vars);
});
