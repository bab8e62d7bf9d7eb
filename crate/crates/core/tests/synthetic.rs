use std::collections::HashSet;

use leaprec_core::synthetic::{DriftProfile, SyntheticSpec};

#[test]
fn stationary_group_counts_stay_within_three_sigma() {
    for allow_repeats in [true, false] {
        let spec = SyntheticSpec {
            profile: DriftProfile::Stationary,
            allow_repeats,
            ..SyntheticSpec::default()
        };
        let data = spec.generate().unwrap();
        let months = spec.total_months();
        let counts = data.group_counts(months, spec.num_groups);
        let n = spec.interactions_per_slice as f64;
        let mut sizes = vec![0usize; spec.num_groups];
        for &g in &data.item_group {
            sizes[g] += 1;
        }
        for (t, row) in counts.iter().enumerate() {
            for (g, &c) in row.iter().enumerate() {
                let p = 1.0 / spec.num_groups as f64;
                let (mean, sd) = (n * p, (n * p * (1.0 - p)).sqrt());
                assert!(
                    (c as f64 - mean).abs() <= 3.0 * sd,
                    "repeats={allow_repeats} month {t} group {g}: {c} vs {mean:.1} +- {sd:.1}"
                );
            }
        }
    }
}

#[test]
fn trend_group_is_silent_before_its_onset() {
    let spec = SyntheticSpec {
        num_groups: 3,
        onsets: Some(vec![0, 4]),
        ..SyntheticSpec::default()
    };
    let data = spec.generate().unwrap();
    let counts = data.group_counts(spec.total_months(), 3);
    for (t, row) in counts.iter().enumerate() {
        assert_eq!(row[2] == 0, t < 4, "month {t}: {row:?}");
    }
}

#[test]
fn same_seed_writes_identical_files() {
    let spec = SyntheticSpec {
        interactions_per_slice: 200,
        ..SyntheticSpec::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    spec.generate().unwrap().write(a.path()).unwrap();
    spec.generate().unwrap().write(b.path()).unwrap();
    for f in ["interactions.tsv", "item_groups.tsv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
}

#[test]
fn no_pair_repeats_by_default() {
    let data = SyntheticSpec::default().generate().unwrap();
    let mut seen = HashSet::new();
    for x in data.log.interactions() {
        assert!(seen.insert((x.user, x.item)), "repeat {x:?}");
    }
}

#[test]
fn preference_concentrates_on_the_user_cluster() {
    let spec = SyntheticSpec {
        preference: 1.0,
        allow_repeats: true,
        ..SyntheticSpec::default()
    };
    let data = spec.generate().unwrap();
    for x in data.log.interactions() {
        assert_eq!(data.user_cluster[x.user], data.item_cluster[x.item]);
    }
}

#[test]
fn exhausted_catalogue_is_an_error() {
    let spec = SyntheticSpec {
        num_users: 2,
        num_items: 7,
        interactions_per_slice: 20,
        ..SyntheticSpec::default()
    };
    assert!(spec.generate().is_err());
}
