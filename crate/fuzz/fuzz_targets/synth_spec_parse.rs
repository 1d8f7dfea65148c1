#![no_main]

use libfuzzer_sys::fuzz_target;
use traj_analogy::synth::SynthSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = SynthSpec::parse(text) {
        spec.validate().expect("parsed spec must validate");
    }
});
