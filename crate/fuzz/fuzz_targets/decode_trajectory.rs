#![no_main]

use libfuzzer_sys::fuzz_target;
use traj_analogy::scene_io::{decode_trajectory, encode_trajectory};

fuzz_target!(|data: &[u8]| {
    if let Ok(traj) = decode_trajectory(data) {
        let bytes = encode_trajectory(&traj);
        let again = decode_trajectory(&bytes).expect("re-encoded trajectory must decode");
        assert_eq!(again, traj);
    }
});
