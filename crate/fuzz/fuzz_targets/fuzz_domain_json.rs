#![no_main]

use libfuzzer_sys::fuzz_target;

// The domain parser must never panic on arbitrary input; any malformed file
// is a structured parse error.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = pgm_core::io::parse_domain(text);
    }
});
