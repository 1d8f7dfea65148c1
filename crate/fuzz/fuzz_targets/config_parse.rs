#![no_main]

use libfuzzer_sys::fuzz_target;
use traj_analogy::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = Config::parse(text) {
        let again = Config::parse(&config.to_text()).expect("printed config must parse");
        assert_eq!(again.to_text(), config.to_text());
    }
});
