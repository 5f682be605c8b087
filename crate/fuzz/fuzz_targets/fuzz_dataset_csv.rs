#![no_main]

use std::collections::HashMap;

use libfuzzer_sys::fuzz_target;
use pgm_core::io::BinRule;

// Input layout: domain JSON, a 0 byte, then raw CSV bytes (the CSV half is
// deliberately not required to be UTF-8). Falls back to a fixed mixed
// categorical/numeric domain when the domain half does not parse.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(0);
    let (domain_part, csv_part) = data.split_at(split);
    let csv_part = csv_part.get(1..).unwrap_or(&[]);

    let spec = std::str::from_utf8(domain_part)
        .ok()
        .and_then(|t| pgm_core::io::parse_domain(t).ok())
        .filter(|s| {
            s.domain.len() <= 12 && (0..s.domain.len()).all(|i| s.domain.cardinality(i) <= 4096)
        })
        .unwrap_or_else(|| {
            pgm_core::io::parse_domain(r#"{"color": ["red", "blue"], "score": 4, "tag": 3}"#)
                .unwrap()
        });

    let mut bins = HashMap::new();
    if spec.domain.index_of("score").is_ok() {
        bins.insert(
            "score".to_string(),
            BinRule {
                min: 0.0,
                max: 100.0,
                count: 4,
            },
        );
    }
    let _ = pgm_core::io::parse_dataset_csv(csv_part, &spec, &bins);
});
