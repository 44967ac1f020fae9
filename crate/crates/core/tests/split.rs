mod common;

use std::collections::BTreeSet;

use common::manifest;
use melc_core::data::{bucket_sizes, load_cell_table, make_split, save_cell_table, Bucket, Diagnosis, SampleManifest, Split};
use melc_core::simgen::{generate_dataset, SimConfig};
use proptest::prelude::*;

/// Largest remainder on integer percentages, exact.
fn sizes_from_percent(n: usize, pct: [usize; 3]) -> [usize; 3] {
    let mut sizes = [0; 3];
    let mut rems = [0; 3];
    for i in 0..3 {
        sizes[i] = pct[i] * n / 100;
        rems[i] = pct[i] * n % 100;
    }
    let left = n - sizes.iter().sum::<usize>();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &i in order.iter().take(left) {
        sizes[i] += 1;
    }
    sizes
}

fn need(size: usize, d: Diagnosis) -> usize {
    match (size, d) {
        (0, _) => 0,
        (1, Diagnosis::Melanoma) => 1,
        (1, Diagnosis::Healthy) => 0,
        _ => 1,
    }
}

fn feasible(m: &SampleManifest, sizes: [usize; 3]) -> bool {
    let mel = m.samples.iter().filter(|s| s.diagnosis == Diagnosis::Melanoma).count();
    let healthy = m.samples.len() - mel;
    if mel == 0 || healthy == 0 {
        return true;
    }
    let nm: usize = sizes.iter().map(|&s| need(s, Diagnosis::Melanoma)).sum();
    let nh: usize = sizes.iter().map(|&s| need(s, Diagnosis::Healthy)).sum();
    mel >= nm && healthy >= nh
}

fn check_split(m: &SampleManifest, split: &Split, sizes: [usize; 3]) -> Result<(), TestCaseError> {
    let ids: BTreeSet<&str> = m.samples.iter().map(|s| s.sample_id.as_str()).collect();
    let assigned: BTreeSet<&str> = split.assignment.keys().map(String::as_str).collect();
    prop_assert_eq!(ids, assigned);
    let both = m.samples.iter().any(|s| s.diagnosis == Diagnosis::Melanoma)
        && m.samples.iter().any(|s| s.diagnosis == Diagnosis::Healthy);
    for (k, b) in Bucket::ALL.iter().enumerate() {
        let members = split.samples_in(*b);
        prop_assert_eq!(members.len(), sizes[k]);
        if both {
            let diag = |d: Diagnosis| {
                members
                    .iter()
                    .filter(|id| m.samples.iter().any(|s| s.sample_id == **id && s.diagnosis == d))
                    .count()
            };
            prop_assert!(diag(Diagnosis::Melanoma) >= need(sizes[k], Diagnosis::Melanoma));
            prop_assert!(diag(Diagnosis::Healthy) >= need(sizes[k], Diagnosis::Healthy));
        }
    }
    Ok(())
}

fn diagnoses() -> impl Strategy<Value = Vec<Diagnosis>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { Diagnosis::Melanoma } else { Diagnosis::Healthy }), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn splits_partition_and_cover(diag in diagnoses(), seed in any::<u64>()) {
        let m = manifest(&diag);
        let sizes = sizes_from_percent(diag.len(), [70, 10, 20]);
        prop_assert_eq!(bucket_sizes(diag.len(), (0.7, 0.1, 0.2)), sizes);
        match make_split(&m, (0.7, 0.1, 0.2), seed) {
            Ok(split) => {
                prop_assert!(feasible(&m, sizes));
                check_split(&m, &split, sizes)?;
                prop_assert_eq!(make_split(&m, (0.7, 0.1, 0.2), seed).unwrap(), split);
            }
            Err(_) => prop_assert!(!feasible(&m, sizes)),
        }
    }

    #[test]
    fn bucket_sizes_are_largest_remainder(n in 0usize..500, a in 1usize..98, b in 1usize..98) {
        prop_assume!(a + b < 100);
        let pct = [a, b, 100 - a - b];
        let ratios = (a as f64 / 100.0, b as f64 / 100.0, pct[2] as f64 / 100.0);
        prop_assert_eq!(bucket_sizes(n, ratios), sizes_from_percent(n, pct));
    }
}

#[test]
fn documented_sizes() {
    assert_eq!(bucket_sizes(27, (0.7, 0.1, 0.2)), [19, 3, 5]);
    assert_eq!(bucket_sizes(10, (0.7, 0.1, 0.2)), [7, 1, 2]);
}

#[test]
fn single_melanoma_sample_cannot_cover_three_buckets() {
    let m = manifest(&[Diagnosis::Melanoma, Diagnosis::Healthy, Diagnosis::Healthy, Diagnosis::Healthy, Diagnosis::Healthy, Diagnosis::Healthy, Diagnosis::Healthy, Diagnosis::Healthy, Diagnosis::Healthy, Diagnosis::Healthy]);
    assert!(make_split(&m, (0.7, 0.1, 0.2), 0).is_err());
}

#[test]
fn bad_ratios_rejected() {
    let m = manifest(&[Diagnosis::Melanoma; 5]);
    assert!(make_split(&m, (0.5, 0.5, 0.5), 0).is_err());
    assert!(make_split(&m, (1.0, 0.0, 0.0), 0).is_err());
}

#[test]
fn cell_table_round_trip() {
    let config = SimConfig {
        n_samples: 3,
        cells_per_sample: 40,
        n_channels: 6,
        ..SimConfig::default()
    };
    let (table, _) = generate_dataset(&config, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cells.csv");
    save_cell_table(&table, &path).unwrap();
    let back = load_cell_table(&path).unwrap();
    assert_eq!(back.len(), table.len());
    for (a, b) in back.cells().iter().zip(table.cells()) {
        assert_eq!((a.cell_id, &a.sample_id, a.label), (b.cell_id, &b.sample_id, b.label));
        for (u, v) in a.features.iter().chain([&a.x, &a.y]).zip(b.features.iter().chain([&b.x, &b.y])) {
            assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }
}
