#![no_main]

use libfuzzer_sys::fuzz_target;

// The run-config parser must never panic on arbitrary input.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = pgm_core::io::parse_config(text);
    }
});
