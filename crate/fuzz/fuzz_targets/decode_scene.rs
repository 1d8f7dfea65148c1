#![no_main]

use libfuzzer_sys::fuzz_target;
use traj_analogy::scene_io::{decode_scene, encode_scene};

fuzz_target!(|data: &[u8]| {
    if let Ok(scene) = decode_scene(data) {
        let bytes = encode_scene(&scene);
        let again = decode_scene(&bytes).expect("re-encoded scene must decode");
        assert_eq!(encode_scene(&again), bytes);
    }
});
