#![no_main]

use libfuzzer_sys::fuzz_target;
use shieldnav::config::Config;

fuzz_target!(|s: &str| {
    if let Ok(config) = Config::from_json(s) {
        let again = Config::from_json(&config.to_json_pretty()).expect("re-parse");
        assert_eq!(again.hash(), config.hash());
    }
});
