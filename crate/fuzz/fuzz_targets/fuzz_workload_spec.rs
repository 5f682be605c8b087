#![no_main]

use libfuzzer_sys::fuzz_target;

// Input layout: domain JSON, a 0 byte, then the workload spec; falls back
// to a fixed domain when the domain half does not parse.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(0);
    let (domain_part, spec_part) = data.split_at(split);
    let spec_part = spec_part.get(1..).unwrap_or(&[]);

    let domain = std::str::from_utf8(domain_part)
        .ok()
        .and_then(|t| pgm_core::io::parse_domain(t).ok())
        .map(|d| d.domain)
        .filter(|d| d.len() <= 12 && (0..d.len()).all(|i| d.cardinality(i) <= 256))
        .unwrap_or_else(|| {
            pgm_core::io::parse_domain(r#"{"a": 2, "b": 3, "c": 4}"#)
                .unwrap()
                .domain
        });

    if let Ok(text) = std::str::from_utf8(spec_part) {
        let _ = pgm_core::io::parse_workload_spec(text, &domain);
    }
});
