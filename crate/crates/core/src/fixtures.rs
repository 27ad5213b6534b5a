//! Deterministic record fixtures for demos and tests.
//!
//! All generation is seeded, so the same seed always reproduces the same
//! record files byte for byte. Patient identifiers embed the station label,
//! which keeps every record line globally unique — a property the
//! isolation checks rely on when scanning for cross-station leakage.

use crate::query::{FieldType, RecordSchema};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

/// Allele values used as histogram noise; the demo's target value is kept
/// out of this pool so match counts stay exact.
pub const NOISE_ALLELES: [&str; 8] = [
    "A*01:01", "A*02:01", "B*07:02", "B*08:01", "C*04:01", "C*07:01", "DRB1*15:01", "DQB1*06:02",
];

/// The allele the scripted demo counts occurrences of.
pub const TARGET_ALLELE: &str = "B*35:01";

/// Schema shared by all generated fixtures.
pub fn fixture_schema() -> RecordSchema {
    RecordSchema {
        fields: BTreeMap::from([
            ("patient_id".to_string(), FieldType::String),
            ("hla_allele".to_string(), FieldType::String),
            ("age".to_string(), FieldType::Number),
            ("site".to_string(), FieldType::String),
        ]),
    }
}

/// Generate `total` patient records for `station_label`, exactly
/// `matching` of which carry `TARGET_ALLELE`. Positions are shuffled.
pub fn generate_allele_records(
    station_label: &str,
    seed: u64,
    total: usize,
    matching: usize,
) -> Vec<String> {
    assert!(matching <= total, "cannot match more records than exist");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alleles: Vec<&str> = Vec::with_capacity(total);
    alleles.extend(std::iter::repeat_n(TARGET_ALLELE, matching));
    for _ in matching..total {
        alleles.push(NOISE_ALLELES[rng.gen_range(0..NOISE_ALLELES.len())]);
    }
    alleles.shuffle(&mut rng);

    alleles
        .iter()
        .enumerate()
        .map(|(i, allele)| {
            let record = serde_json::json!({
                "patient_id": format!("{station_label}-p{i:04}"),
                "hla_allele": allele,
                "age": rng.gen_range(1..=99),
                "site": format!("site-{station_label}"),
            });
            serde_json::to_string(&record).expect("fixture records always serialize")
        })
        .collect()
}

/// Generate a fully randomized fixture (record count, allele mix, and ages
/// all drawn from the seed) for distributed-versus-centralized comparisons.
pub fn generate_random_records(station_label: &str, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = rng.gen_range(5..=40);
    let matching = rng.gen_range(0..=total);
    generate_allele_records(station_label, rng.gen(), total, matching)
}

/// Write record lines and the sidecar schema into `dir`, returning the
/// record file path. The file is named `records.ndjson`.
pub fn write_record_store(dir: &Path, lines: &[String]) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let data_path = dir.join("records.ndjson");
    let mut body = lines.join("\n");
    body.push('\n');
    std::fs::write(&data_path, body)?;
    let schema_bytes = serde_json::to_vec_pretty(&fixture_schema())?;
    std::fs::write(crate::query::schema_path(&data_path), schema_bytes)?;
    Ok(data_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::load_records;

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = generate_allele_records("st-a", 42, 20, 9);
        let b = generate_allele_records("st-a", 42, 20, 9);
        assert_eq!(a, b);
        let c = generate_allele_records("st-a", 43, 20, 9);
        assert_ne!(a, c);
    }

    #[test]
    fn match_counts_are_exact() {
        let lines = generate_allele_records("st-a", 7, 50, 13);
        let hits = lines
            .iter()
            .filter(|l| l.contains(&format!("\"{TARGET_ALLELE}\"")))
            .count();
        assert_eq!(hits, 13);
        assert_eq!(lines.len(), 50);
    }

    #[test]
    fn record_lines_are_unique_across_stations() {
        let a = generate_allele_records("st-a", 1, 30, 10);
        let b = generate_allele_records("st-b", 1, 30, 10);
        for line in &a {
            assert!(!b.contains(line));
        }
    }

    #[test]
    fn written_stores_load_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let lines = generate_allele_records("st-a", 3, 25, 8);
        let path = write_record_store(dir.path(), &lines).unwrap();
        let set = load_records(&path, 1000).unwrap();
        assert_eq!(set.len(), 25);
        assert_eq!(set.schema(), &fixture_schema());
    }

    #[test]
    fn random_fixtures_stay_within_bounds() {
        for seed in 0..20 {
            let lines = generate_random_records("st-x", seed);
            assert!((5..=40).contains(&lines.len()));
        }
    }
}
