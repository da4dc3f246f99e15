mod common;

use std::fmt::Write as _;

use brise::data::{Group, MultiSourceDataset, SourceSchema};
use brise::error::Error;
use brise::exec::Exec;
use brise::io::{ingest, ingest_with, SchemaFile, SourceSpec};
use brise::permutation::{permute_labels, Scheme};
use brise::pipeline::{dataset_from_array, prepare, run_test, run_test_on_array, TestOptions};
use brise::rng;
use brise::sim::{generate, SimulationConfig};
use brise::stats::{brise_c, brise_v, Inference, Method, TestResult};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn spec(sources: &[(&str, &[&str])]) -> SchemaFile {
    SchemaFile {
        sources: sources
            .iter()
            .map(|(name, cols)| SourceSpec {
                name: name.to_string(),
                columns: cols.iter().map(|c| c.to_string()).collect(),
            })
            .collect(),
    }
}

/// Three sources, three patterns, each missing one source.
fn sepsis_like_csv(rng: &mut ChaCha8Rng) -> String {
    let mut csv = String::from("id,group,crp,pct,hr,map,sofa\n");
    let masks = [
        [true, true, false],
        [false, true, true],
        [true, false, true],
    ];
    for i in 0..90 {
        let group = if i % 2 == 0 { "X" } else { "Y" };
        let mask = masks[i % 3];
        let shift = if group == "X" { 0.0 } else { 0.3 };
        let mut cell = |obs: bool| {
            if obs {
                format!("{:.4}", shift + normal(rng))
            } else {
                "NA".to_string()
            }
        };
        let crp = cell(mask[0]);
        let pct = cell(mask[0]);
        let hr = cell(mask[1]);
        let map = cell(mask[1]);
        let sofa = cell(mask[2]);
        writeln!(csv, "{i},{group},{crp},{pct},{hr},{map},{sofa}").unwrap();
    }
    csv
}

fn sepsis_spec() -> SchemaFile {
    spec(&[
        ("lab", &["crp", "pct"]),
        ("vitals", &["hr", "map"]),
        ("score", &["sofa"]),
    ])
}

#[test]
fn sepsis_shaped_csv_without_complete_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = sepsis_spec();
    let csv = sepsis_like_csv(&mut rng);
    let err = ingest_with(csv.as_bytes(), &spec);
    // The extra `id` column is not declared in the schema.
    assert!(matches!(err, Err(Error::SchemaMismatch(_))));

    let csv: String = csv
        .lines()
        .map(|l| l.split_once(',').unwrap().1.to_string() + "\n")
        .collect();
    let data = ingest_with(csv.as_bytes(), &spec).unwrap();
    assert!(data
        .rows()
        .iter()
        .all(|r| r.pattern().mask().contains(&false)));
    for method in [Method::BriseC, Method::BriseV] {
        let out = run_test(
            &data,
            &TestOptions {
                method,
                ..TestOptions::default()
            },
        )
        .unwrap();
        let res = out.result;
        assert_eq!(res.n_patterns, 3);
        assert_eq!(res.pattern_counts.valid_pairs.len(), 6);
        assert_eq!(res.df, if method == Method::BriseC { 2 } else { 12 });
        assert!(res.statistic.is_finite() && res.statistic >= 0.0);
        assert!((0.0..=1.0).contains(&res.p_value));
    }
}

#[test]
fn fully_observed_file_gives_two_degrees_of_freedom() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = (dir.path().join("toy.csv"), dir.path().join("toy.json"));
    let mut text = String::from("group,a,b\n");
    for i in 0..24 {
        let g = if i < 12 { "X" } else { "Y" };
        writeln!(
            text,
            "{g},{},{}",
            (i * 7 % 11) as f64 / 3.0,
            (i * 5 % 13) as f64
        )
        .unwrap();
    }
    std::fs::write(&csv, text).unwrap();
    std::fs::write(
        &schema,
        r#"{"sources": [{"name": "s", "columns": ["a", "b"]}]}"#,
    )
    .unwrap();
    let data = ingest(&csv, &schema).unwrap();
    let res = run_test(
        &data,
        &TestOptions {
            k: 3,
            ..TestOptions::default()
        },
    )
    .unwrap()
    .result;
    assert_eq!((res.n_patterns, res.df), (1, 2));
    assert!(((-res.statistic / 2.0).exp() - res.p_value).abs() < 1e-15);
}

#[test]
fn result_json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = ingest_with(
        sepsis_like_csv(&mut rng)
            .lines()
            .map(|l| l.split_once(',').unwrap().1.to_string() + "\n")
            .collect::<String>()
            .as_bytes(),
        &sepsis_spec(),
    )
    .unwrap();
    let opts = TestOptions {
        inference: Inference::PatternPermutation,
        replicates: 50,
        seed: 9,
        ..TestOptions::default()
    };
    let res = run_test(&data, &opts).unwrap().result;
    let text = serde_json::to_string(&res).unwrap();
    let back: TestResult = serde_json::from_str(&text).unwrap();
    assert_eq!(back, res);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["method"], "BRISE-c");
    assert_eq!(v["inference"], "pattern-permutation");
}

fn array_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Group>) {
    let mut values = Vec::new();
    let mut groups = Vec::new();
    for i in 0..40 {
        groups.push(if i % 2 == 0 { Group::X } else { Group::Y });
        let a: Vec<f64> = (0..2).map(|_| normal(rng)).collect();
        let b = if i % 3 == 0 { f64::NAN } else { normal(rng) };
        values.extend(a);
        values.push(b);
    }
    (values, groups)
}

#[test]
fn array_entry_point_matches_file_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (values, groups) = array_instance(&mut rng);
    let mut csv = String::from("group,a1,a2,b\n");
    for (row, g) in values.chunks(3).zip(&groups) {
        let cell = |v: f64| {
            if v.is_nan() {
                String::new()
            } else {
                format!("{v:e}")
            }
        };
        writeln!(
            csv,
            "{},{},{},{}",
            if *g == Group::X { "X" } else { "Y" },
            cell(row[0]),
            cell(row[1]),
            cell(row[2])
        )
        .unwrap();
    }
    let spec = spec(&[("s1", &["a1", "a2"]), ("s2", &["b"])]);
    for inference in [
        Inference::Asymptotic,
        Inference::PatternPermutation,
        Inference::StandardPermutation,
    ] {
        for method in [Method::BriseC, Method::BriseV] {
            let opts = TestOptions {
                method,
                inference,
                k: 4,
                replicates: 99,
                seed: 17,
                ..TestOptions::default()
            };
            let from_array = run_test_on_array(&values, 3, &groups, &[2, 1], &opts).unwrap();
            let from_csv = run_test(&ingest_with(csv.as_bytes(), &spec).unwrap(), &opts)
                .unwrap()
                .result;
            assert_eq!(from_array, from_csv, "{method} {inference}");
        }
    }
}

#[test]
fn array_with_partial_block_is_rejected() {
    let mut values = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    values[1] = f64::NAN;
    let err = dataset_from_array(&values, 3, &[Group::X, Group::Y], &[2, 1]).unwrap_err();
    assert!(matches!(err, Error::PartialBlock { .. }), "{err:?}");
}

#[test]
fn statistics_match_straightforward_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let schema = SourceSchema::uniform(2, 1).unwrap();
    for _ in 0..6 {
        let patterns = vec![
            (
                vec![true, true],
                rng.random_range(2..=3),
                rng.random_range(2..=3),
            ),
            (
                vec![true, false],
                rng.random_range(2..=3),
                rng.random_range(2..=3),
            ),
            (
                vec![false, true],
                rng.random_range(2..=3),
                rng.random_range(2..=3),
            ),
        ];
        let data = random_dataset(&mut rng, &schema, &patterns, false);
        let prep = prepare(&data, &tiny_opts(2)).unwrap();
        let part = &prep.partition;
        let nm = prep.null_moments().unwrap();
        let pairs = overlapping_pairs(part);
        let r = dense(&prep.ranks);
        let (mean, cov) = enumerate_moments(&r, part, &pairs);
        let u = u_vector(&r, part, &pairs, part.is_x());

        let dim = u.len();
        let agg = DMatrix::from_fn(2, dim, |i, j| if j % 2 == i { 1.0 } else { 0.0 });
        let du = &agg * (&u - &mean);
        let sc = &agg * &cov * agg.transpose();
        let want_c = (du.transpose() * sc.try_inverse().unwrap() * &du)[(0, 0)];
        let got_c = brise_c(&prep.ranks, part, &nm).unwrap().value;
        assert!(rel_dev(got_c, want_c) < 1e-10, "{got_c} vs {want_c}");

        let dv = &u - &mean;
        let want_v = (dv.transpose() * cov.try_inverse().unwrap() * &dv)[(0, 0)];
        let got_v = brise_v(&prep.ranks, part, &nm).unwrap();
        assert_eq!(got_v.df, dim);
        assert!(
            rel_dev(got_v.value, want_v) < 1e-8,
            "{} vs {want_v}",
            got_v.value
        );
    }
}

#[test]
fn swapping_group_labels_keeps_t_c() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let schema = SourceSchema::uniform(2, 2).unwrap();
    for _ in 0..10 {
        let patterns = vec![
            (
                vec![true, true],
                rng.random_range(3..=9),
                rng.random_range(3..=9),
            ),
            (
                vec![false, true],
                rng.random_range(3..=9),
                rng.random_range(3..=9),
            ),
        ];
        let data = random_dataset(&mut rng, &schema, &patterns, false);
        let opts = tiny_opts(3);
        let a = run_test(&data, &opts).unwrap().result;
        let b = run_test(&data.relabeled(), &opts).unwrap().result;
        assert_eq!(a.statistic.to_bits(), b.statistic.to_bits());
        let opts_v = TestOptions {
            method: Method::BriseV,
            ..opts
        };
        let a = run_test(&data, &opts_v).unwrap().result;
        let b = run_test(&data.relabeled(), &opts_v).unwrap().result;
        assert!(rel_dev(a.statistic, b.statistic) < 1e-9);
    }
}

#[test]
fn sequential_and_parallel_paths_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let schema = SourceSchema::uniform(3, 2).unwrap();
    let patterns = vec![
        (vec![true, true, true], 10, 12),
        (vec![true, true, false], 8, 9),
        (vec![false, false, true], 9, 7),
    ];
    let data = random_dataset(&mut rng, &schema, &patterns, false);
    for inference in [
        Inference::Asymptotic,
        Inference::PatternPermutation,
        Inference::StandardPermutation,
    ] {
        for method in [Method::BriseC, Method::BriseV] {
            let base = TestOptions {
                method,
                inference,
                k: 5,
                replicates: 200,
                seed: 3,
                ..TestOptions::default()
            };
            let seq = run_test(
                &data,
                &TestOptions {
                    exec: Exec::Sequential,
                    ..base.clone()
                },
            )
            .unwrap();
            let par = run_test(
                &data,
                &TestOptions {
                    exec: Exec::Parallel,
                    ..base
                },
            )
            .unwrap();
            assert_eq!(seq.result, par.result);
            assert_eq!(seq.prepared.ranks, par.prepared.ranks);
        }
    }
}

#[test]
fn single_pattern_shuffles_coincide() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let schema = SourceSchema::uniform(1, 2).unwrap();
    let data = random_dataset(&mut rng, &schema, &[(vec![true], 7, 11)], false);
    let part = data.partition();
    for b in 0..20 {
        let a = permute_labels(&part, Scheme::PatternWise, &mut rng::stream(5, b));
        let s = permute_labels(&part, Scheme::Standard, &mut rng::stream(5, b));
        assert_eq!(a, s);
    }
}

#[test]
fn gaussian_instances_satisfy_conditions_comfortably() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let schema = SourceSchema::uniform(2, 5).unwrap();
    let patterns = vec![(vec![true, true], 60, 60), (vec![true, false], 60, 60)];
    let data = random_dataset(&mut rng, &schema, &patterns, false);
    let prep = prepare(&data, &TestOptions::default()).unwrap();
    let diag = prep.diagnostics();
    // Condition (2) bounds an order of magnitude; the others should be small.
    for c in 1..=6 {
        let worst = diag.max_ratio(c).unwrap();
        let limit = if c == 2 { 5.0 } else { 0.5 };
        assert!(worst < limit, "condition {c}: {worst}");
    }
    assert_eq!(diag.cross_pattern.len(), 2);
    for check in &diag.cross_pattern {
        assert!(check.min_eigenvalue.unwrap() > 0.0);
    }

    let single = random_dataset(&mut rng, &schema, &[(vec![true, true], 30, 30)], false);
    let diag = prepare(&single, &TestOptions::default())
        .unwrap()
        .diagnostics();
    assert!(diag
        .cross_pattern
        .iter()
        .all(|c| c.min_eigenvalue.is_none()));
    assert!(!diag.warnings.is_empty());
}

#[test]
fn constant_ranks_leave_centered_conditions_undefined() {
    // Every row at the same point: all distances tie, so every rank is
    // k(k+1) / (2(N - 1)), the centered ranks vanish and V1 = 0.
    let schema = SourceSchema::uniform(1, 1).unwrap();
    let rows = (0..8)
        .map(|i| {
            (
                if i < 4 { Group::X } else { Group::Y },
                vec![Some(vec![1.0])],
            )
        })
        .collect();
    let data = MultiSourceDataset::from_blocks(schema, rows).unwrap();
    let diag = prepare(&data, &tiny_opts(2)).unwrap().diagnostics();
    for r in &diag.ratios {
        assert_eq!(r.ratio.is_nan(), (3..=5).contains(&r.condition), "{r:?}");
    }
    assert!(diag.warnings.iter().any(|w| w.contains("0/0")));
}

#[test]
fn pattern_permutation_agrees_with_asymptotic_calibration() {
    let cfg = SimulationConfig {
        d: 100,
        m: 50,
        n: 50,
        seed: 21,
        ..SimulationConfig::default()
    };
    let reps = 200;
    let mut rejections = [0usize; 2];
    for rep in 0..reps {
        let data = generate(&cfg, rep).unwrap();
        let asym = TestOptions {
            k: cfg.k,
            ..TestOptions::default()
        };
        let perm = TestOptions {
            inference: Inference::PatternPermutation,
            replicates: 500,
            seed: rep as u64,
            ..asym.clone()
        };
        let prep = prepare(&data, &asym).unwrap();
        for (slot, opts) in [asym, perm].iter().enumerate() {
            let res = brise::pipeline::run_prepared(&prep, opts).unwrap();
            rejections[slot] += usize::from(res.p_value <= 0.05);
        }
    }
    let rates = rejections.map(|r| r as f64 / reps as f64);
    assert!((rates[0] - rates[1]).abs() <= 0.03, "{rates:?}");
}
