#![no_main]

use libfuzzer_sys::fuzz_target;
use rflab::formats::{parse_space_json, space_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(spec) = parse_space_json(text) else {
        return;
    };
    // Anything accepted must survive a write and re-read.
    let again = parse_space_json(&space_to_json(&spec)).expect("re-parse of written space");
    assert_eq!(space_to_json(&again), space_to_json(&spec));
});
