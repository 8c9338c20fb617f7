//! Synthetic workloads shared by the benchmarks.

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

use partsynth::index::{PartRecord, RecordSource};
use partsynth::{FieldClaim, Phase};

const KINDS: [&str; 8] = [
    "hex bolt", "ball bearing", "hydraulic hose", "relay", "gear motor", "o-ring", "flange", "valve",
];
const MATERIALS: [&str; 6] = ["steel", "stainless steel", "brass", "nylon", "aluminum", "epdm"];
const MAKERS: [&str; 5] = ["Acme", "Borg", "Norden", "Kessler", "Ito"];

/// `n` catalog-like records with distinct ids, reproducible from `seed`.
pub fn synthetic_records(n: usize, seed: u64) -> Vec<PartRecord> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kind = KINDS.choose(&mut rng).expect("non-empty");
            let material = MATERIALS.choose(&mut rng).expect("non-empty");
            let maker = MAKERS.choose(&mut rng).expect("non-empty");
            let size: u32 = rng.random_range(2..200);
            let flat_text = format!(
                "manufacturer: {maker} | material: {material} | name: {kind} {size} mm | part_number: {}-{i:05}",
                maker[..2].to_uppercase()
            );
            PartRecord {
                record_id: format!("R{i:05}"),
                flat_text,
                source: RecordSource {
                    file: "synthetic".into(),
                    locator: format!("element {i}"),
                },
                raw_fields: Default::default(),
            }
        })
        .collect()
}

/// Claims for one field from `models` models choosing among `values`
/// candidate values.
pub fn synthetic_claims(models: usize, values: usize, seed: u64) -> Vec<FieldClaim> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..models)
        .map(|m| {
            let v = rng.random_range(0..values.max(1));
            let confidence: f64 = rng.random_range(0.0..=1.0);
            FieldClaim::new("material", format!("value {v}"), confidence, format!("m{m}"), Phase::Extraction)
        })
        .collect()
}

/// Model ids `m0..m{n-1}` in roster order.
pub fn roster(n: usize) -> Vec<String> {
    (0..n).map(|m| format!("m{m}")).collect()
}
