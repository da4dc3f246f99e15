//! Test-side oracles shared by the integration suites. Nothing here calls
//! the library's moment or rank-sum code.
#![allow(dead_code)]

use brise::data::{Group, MultiSourceDataset, PatternPartition, SourceSchema};
use brise::exec::Exec;
use brise::graph::RankMatrix;
use brise::pipeline::TestOptions;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn dense(r: &RankMatrix) -> Vec<Vec<f64>> {
    (0..r.len()).map(|i| r.row(i).to_vec()).collect()
}

pub fn overlapping_pairs(part: &PatternPartition) -> Vec<(usize, usize)> {
    let np = part.n_patterns();
    let mut out = Vec::new();
    for a in 0..np {
        for b in a..np {
            if part
                .pattern(a)
                .mask()
                .iter()
                .zip(part.pattern(b).mask())
                .any(|(p, q)| *p && *q)
            {
                out.push((a, b));
            }
        }
    }
    out
}

/// `[Ux(p0), Uy(p0), ...]` from ordered-pair sums over distinct rows.
pub fn u_vector(
    r: &[Vec<f64>],
    part: &PatternPartition,
    pairs: &[(usize, usize)],
    is_x: &[bool],
) -> DVector<f64> {
    let mut u = DVector::zeros(2 * pairs.len());
    for (p, &(a, b)) in pairs.iter().enumerate() {
        for i in part.range(a) {
            for j in part.range(b) {
                if i == j || is_x[i] != is_x[j] {
                    continue;
                }
                u[2 * p + usize::from(!is_x[i])] += r[i][j];
            }
        }
    }
    u
}

pub fn rel_dev(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

pub fn max_moment_dev(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    want_mean: &DVector<f64>,
    want_cov: &DMatrix<f64>,
) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..mean.len() {
        dev = dev.max(rel_dev(mean[i], want_mean[i]));
        for j in 0..mean.len() {
            dev = dev.max(rel_dev(cov[(i, j)], want_cov[(i, j)]));
        }
    }
    dev
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random dataset: for each `(mask, x_count, y_count)` rows with Gaussian
/// (or, with `ties`, small-integer) blocks.
pub fn random_dataset(
    rng: &mut ChaCha8Rng,
    schema: &SourceSchema,
    patterns: &[(Vec<bool>, usize, usize)],
    ties: bool,
) -> MultiSourceDataset {
    let mut rows = Vec::new();
    for (mask, m, n) in patterns {
        for t in 0..(m + n) {
            let group = if t < *m { Group::X } else { Group::Y };
            let blocks = mask
                .iter()
                .enumerate()
                .map(|(l, &obs)| {
                    obs.then(|| {
                        (0..schema.range(l).len())
                            .map(|_| {
                                if ties {
                                    rng.random_range(0..3) as f64
                                } else {
                                    normal(rng)
                                }
                            })
                            .collect()
                    })
                })
                .collect();
            rows.push((group, blocks));
        }
    }
    rows.shuffle(rng);
    MultiSourceDataset::from_blocks(schema.clone(), rows).unwrap()
}

pub fn tiny_opts(k: usize) -> TestOptions {
    TestOptions {
        k,
        n_thres: 2,
        p_thres: 0.0,
        exec: Exec::Sequential,
        ..TestOptions::default()
    }
}

/// All `m`-subsets of `0..n` as label vectors.
pub fn subsets(n: usize, m: usize) -> Vec<Vec<bool>> {
    let mut out = Vec::new();
    let mut pick = vec![false; n];
    fn rec(start: usize, left: usize, pick: &mut Vec<bool>, out: &mut Vec<Vec<bool>>) {
        if left == 0 {
            out.push(pick.clone());
            return;
        }
        for i in start..=(pick.len() - left) {
            pick[i] = true;
            rec(i + 1, left - 1, pick, out);
            pick[i] = false;
        }
    }
    rec(0, m, &mut pick, &mut out);
    out
}

pub fn enumerate_moments(
    r: &[Vec<f64>],
    part: &PatternPartition,
    pairs: &[(usize, usize)],
) -> (DVector<f64>, DMatrix<f64>) {
    let per_pattern: Vec<Vec<Vec<bool>>> = (0..part.n_patterns())
        .map(|a| subsets(part.size(a), part.m(a)))
        .collect();
    let mut draws = Vec::new();
    let mut idx = vec![0usize; per_pattern.len()];
    loop {
        let mut is_x = vec![false; part.len()];
        for (a, &c) in idx.iter().enumerate() {
            let start = part.range(a).start;
            for (t, &x) in per_pattern[a][c].iter().enumerate() {
                is_x[start + t] = x;
            }
        }
        draws.push(u_vector(r, part, pairs, &is_x));
        let mut a = 0;
        loop {
            if a == idx.len() {
                return population_moments(&draws);
            }
            idx[a] += 1;
            if idx[a] < per_pattern[a].len() {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

pub fn population_moments(draws: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let dim = draws[0].len();
    let l = draws.len() as f64;
    let mean = draws.iter().fold(DVector::zeros(dim), |acc, d| acc + d) / l;
    let mut cov = DMatrix::zeros(dim, dim);
    for d in draws {
        let c = d - &mean;
        cov += &c * c.transpose();
    }
    (mean, cov / l)
}
