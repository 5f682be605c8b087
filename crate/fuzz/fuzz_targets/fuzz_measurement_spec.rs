#![no_main]

use libfuzzer_sys::fuzz_target;

// Input layout: domain JSON, a 0 byte, then the measurement spec. When the
// domain half does not parse, the spec half is tried against a fixed domain
// so the spec grammar still gets coverage.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(0);
    let (domain_part, spec_part) = data.split_at(split);
    let spec_part = spec_part.get(1..).unwrap_or(&[]);

    let domain = std::str::from_utf8(domain_part)
        .ok()
        .and_then(|t| pgm_core::io::parse_domain(t).ok())
        .map(|d| d.domain)
        // keep the harness fast: dense query blocks are quadratic in the
        // cardinality, so huge fuzzed domains would only exhaust memory
        .filter(|d| d.len() <= 12 && (0..d.len()).all(|i| d.cardinality(i) <= 256))
        .unwrap_or_else(|| {
            pgm_core::io::parse_domain(r#"{"a": 2, "b": 3, "c": 4}"#)
                .unwrap()
                .domain
        });

    if let Ok(text) = std::str::from_utf8(spec_part) {
        let _ = pgm_core::io::parse_measurement_spec(text, &domain);
    }
});
