#![no_main]

use libfuzzer_sys::fuzz_target;
use shieldnav::world::Scenario;

fuzz_target!(|s: &str| {
    if let Ok(scenario) = Scenario::from_json(s) {
        let again = Scenario::from_json(&scenario.to_json()).expect("re-parse");
        assert_eq!(again, scenario);
    }
});
