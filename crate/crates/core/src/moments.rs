//! Exact null moments of the pattern-pair rank sums under pattern-wise
//! permutation.
//!
//! For each overlapping pattern pair `(α, β)`, `α <= β`:
//!
//! ```text
//! U_x^(αβ) = Σ_{i ∈ X^(α), j ∈ X^(β)} R_ij      U_y^(αβ) analogous over Y
//! ```
//!
//! (for `α = β` the sum runs over ordered pairs `i != j`). Shuffling labels
//! independently within each pattern makes these sums depend only on per-row
//! rank averages, so their means and covariances have closed forms in terms
//! of the block quantities `r0`, `r1²`, `r2²`, `V1`, `V2` computed by
//! [`BlockMoments`]. [`enumeration_oracle`] recomputes the same moments by
//! brute force for tiny instances.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::data::PatternPartition;
use crate::error::{Error, Result};
use crate::graph::RankMatrix;
use crate::numeric::compensated_sum;

/// First- and second-order summaries of every overlapping rank block.
#[derive(Debug, Clone)]
pub struct BlockMoments {
    np: usize,
    row_means: Vec<Option<Vec<f64>>>,
    r0: Vec<f64>,
    r2sq: Vec<f64>,
    r1sq: Vec<f64>,
}

fn delta(a: usize, b: usize) -> usize {
    usize::from(a == b)
}

impl BlockMoments {
    pub fn compute(r: &RankMatrix, part: &PatternPartition) -> Result<Self> {
        if !r.is_symmetrized() {
            return Err(Error::InvalidConfig(
                "block moments need the symmetrized rank matrix".into(),
            ));
        }
        let np = part.n_patterns();
        let mut row_means = vec![None; np * np];
        let mut r0 = vec![f64::NAN; np * np];
        let mut r2sq = vec![f64::NAN; np * np];
        for a in 0..np {
            for b in 0..np {
                if !part.overlaps(a, b) {
                    continue;
                }
                let denom = part.size(b) - delta(a, b);
                if denom == 0 {
                    return Err(Error::DegeneratePattern { pattern: b });
                }
                let block = r.block(a, b);
                let means: Vec<f64> = (0..block.n_rows())
                    .map(|i| compensated_sum(block.row(i).iter().copied()) / denom as f64)
                    .collect();
                let na = part.size(a) as f64;
                r0[a * np + b] = compensated_sum(means.iter().copied()) / na;
                let sq = compensated_sum(
                    (0..block.n_rows()).flat_map(|i| block.row(i).iter().map(|v| v * v)),
                );
                r2sq[a * np + b] = sq / (na * denom as f64);
                row_means[a * np + b] = Some(means);
            }
        }
        let mut r1sq = vec![f64::NAN; np * np * np];
        for a in 0..np {
            for b in 0..np {
                for c in 0..np {
                    if let (Some(mb), Some(mc)) = (&row_means[a * np + b], &row_means[a * np + c]) {
                        let s = compensated_sum(mb.iter().zip(mc).map(|(x, y)| x * y));
                        r1sq[(a * np + b) * np + c] = s / part.size(a) as f64;
                    }
                }
            }
        }
        Ok(BlockMoments {
            np,
            row_means,
            r0,
            r2sq,
            r1sq,
        })
    }

    pub fn n_patterns(&self) -> usize {
        self.np
    }

    /// Per-row averages `R̄_i·^(ab)`; `None` if the patterns do not overlap.
    pub fn row_means(&self, a: usize, b: usize) -> Option<&[f64]> {
        self.row_means[a * self.np + b].as_deref()
    }

    /// Centered row averages `R̃_i·^(ab) = R̄_i·^(ab) - r0^(ab)`.
    pub fn centered_rows(&self, a: usize, b: usize) -> Option<Vec<f64>> {
        let r0 = self.r0(a, b);
        self.row_means(a, b)
            .map(|m| m.iter().map(|v| v - r0).collect())
    }

    pub fn r0(&self, a: usize, b: usize) -> f64 {
        self.r0[a * self.np + b]
    }

    pub fn r2sq(&self, a: usize, b: usize) -> f64 {
        self.r2sq[a * self.np + b]
    }

    pub fn r1sq(&self, a: usize, b: usize, c: usize) -> f64 {
        self.r1sq[(a * self.np + b) * self.np + c]
    }

    pub fn v1(&self, a: usize, b: usize, c: usize) -> f64 {
        self.r1sq(a, b, c) - self.r0(a, b) * self.r0(a, c)
    }

    pub fn v2(&self, a: usize, b: usize) -> f64 {
        self.r2sq(a, b) - self.r0(a, b) * self.r0(a, b)
    }
}

/// Intermediate variance terms of one pattern pair.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PairTerms {
    pub tx_ab: f64,
    pub tx_ba: f64,
    pub ty_ab: f64,
    pub ty_ba: f64,
    pub t_ab: f64,
    pub t_ba: f64,
}

/// Null means and covariances of `(U_x^(p), U_y^(p))` for every valid pair `p`.
///
/// Components are ordered `[x(p0), y(p0), x(p1), y(p1), ...]` with pairs in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct NullMomentSet {
    pub pairs: Vec<(usize, usize)>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub terms: Vec<PairTerms>,
}

impl NullMomentSet {
    pub fn mu_x(&self, p: usize) -> f64 {
        self.mean[2 * p]
    }

    pub fn mu_y(&self, p: usize) -> f64 {
        self.mean[2 * p + 1]
    }

    pub fn var_x(&self, p: usize) -> f64 {
        self.cov[(2 * p, 2 * p)]
    }

    pub fn var_y(&self, p: usize) -> f64 {
        self.cov[(2 * p + 1, 2 * p + 1)]
    }

    pub fn cov_xy(&self, p: usize) -> f64 {
        self.cov[(2 * p, 2 * p + 1)]
    }
}

/// Relationship between two unordered pattern pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairRelation {
    Same,
    /// Shared pattern and the two remaining indices.
    SharesOne {
        shared: usize,
        first: usize,
        second: usize,
    },
    Disjoint,
}

fn relation(p: (usize, usize), q: (usize, usize)) -> PairRelation {
    if p == q {
        return PairRelation::Same;
    }
    // U^(ab) = U^(ba), so rotate the shared index into the first slot.
    let other = |pair: (usize, usize), s: usize| if pair.0 == s { pair.1 } else { pair.0 };
    for s in [p.0, p.1] {
        if q.0 == s || q.1 == s {
            let (first, second) = (other(p, s), other(q, s));
            debug_assert_ne!(first, second);
            return PairRelation::SharesOne {
                shared: s,
                first,
                second,
            };
        }
    }
    PairRelation::Disjoint
}

/// Closed-form null moments. Every pattern needs `m_α >= 2` and `n_α >= 2`.
pub fn null_moments(bm: &BlockMoments, part: &PatternPartition) -> Result<NullMomentSet> {
    for a in 0..part.n_patterns() {
        if part.m(a) < 2 || part.n(a) < 2 {
            return Err(Error::InsufficientPatternSize {
                pattern: a,
                m: part.m(a),
                n: part.n(a),
            });
        }
    }
    let pairs = part.valid_pairs().to_vec();
    let np = pairs.len();
    let m = |a: usize| part.m(a) as f64;
    let n = |a: usize| part.n(a) as f64;
    let big_n = |a: usize| part.size(a) as f64;
    let dl = |a: usize, b: usize| delta(a, b) as f64;

    let tx = |a: usize, b: usize| {
        n(a) * (m(b) - 1.0 - dl(a, b)) * (big_n(b) - dl(a, b)) * bm.v1(a, b, b)
    };
    let ty = |a: usize, b: usize| {
        m(a) * (n(b) - 1.0 - dl(a, b)) * (big_n(b) - dl(a, b)) * bm.v1(a, b, b)
    };
    let t = |a: usize, b: usize| (big_n(b) - dl(a, b)) * bm.v1(a, b, b);

    let mut mean = DVector::zeros(2 * np);
    let mut cov = DMatrix::zeros(2 * np, 2 * np);
    let mut terms = Vec::with_capacity(np);

    for (p, &(a, b)) in pairs.iter().enumerate() {
        let d = dl(a, b);
        let r0 = bm.r0(a, b);
        mean[2 * p] = m(a) * (m(b) - d) * r0;
        mean[2 * p + 1] = n(a) * (n(b) - d) * r0;

        let pt = PairTerms {
            tx_ab: tx(a, b),
            tx_ba: tx(b, a),
            ty_ab: ty(a, b),
            ty_ba: ty(b, a),
            t_ab: t(a, b),
            t_ba: t(b, a),
        };
        let den = (big_n(a) - 1.0 - d) * (big_n(b) - 1.0 - 2.0 * d);
        let v2 = bm.v2(a, b);
        let var_x =
            (1.0 + d) * m(a) * (m(b) - d) / den * (n(a) * (n(b) - d) * v2 + pt.tx_ab + pt.tx_ba);
        let var_y =
            (1.0 + d) * n(a) * (n(b) - d) / den * (m(a) * (m(b) - d) * v2 + pt.ty_ab + pt.ty_ba);
        let cov_xy =
            (1.0 + d) * m(a) * n(a) * (m(b) - d) * (n(b) - d) / den * (v2 - pt.t_ab - pt.t_ba);
        cov[(2 * p, 2 * p)] = var_x;
        cov[(2 * p + 1, 2 * p + 1)] = var_y;
        cov[(2 * p, 2 * p + 1)] = cov_xy;
        cov[(2 * p + 1, 2 * p)] = cov_xy;
        terms.push(pt);

        for (q, &pair_q) in pairs.iter().enumerate() {
            match relation((a, b), pair_q) {
                PairRelation::Same | PairRelation::Disjoint => {}
                PairRelation::SharesOne {
                    shared: s,
                    first: u,
                    second: w,
                } => {
                    let (du, dw) = (dl(s, u), dl(s, w));
                    let f =
                        (1.0 + du + dw) * m(s) * n(s) / (big_n(s) - 1.0 - du - dw) * bm.v1(s, u, w);
                    cov[(2 * p, 2 * q)] = f * (m(u) - du) * (m(w) - dw);
                    cov[(2 * p + 1, 2 * q + 1)] = f * (n(u) - du) * (n(w) - dw);
                    cov[(2 * p, 2 * q + 1)] = -f * (m(u) - du) * (n(w) - dw);
                    cov[(2 * p + 1, 2 * q)] = -f * (n(u) - du) * (m(w) - dw);
                }
            }
        }
    }
    Ok(NullMomentSet {
        pairs,
        mean,
        cov,
        terms,
    })
}

/// Mean vector and covariance of the per-pair components (length `2|I|`).
pub fn sigma_v(nm: &NullMomentSet) -> (DVector<f64>, DMatrix<f64>) {
    (nm.mean.clone(), nm.cov.clone())
}

/// Mean and covariance of the aggregated `(U_x, U_y) = Σ_p (U_x^(p), U_y^(p))`.
pub fn sigma_c(nm: &NullMomentSet) -> (Vector2<f64>, Matrix2<f64>) {
    let np = nm.pairs.len();
    let c = |p: usize, g: usize, q: usize, h: usize| nm.cov[(2 * p + g, 2 * q + h)];
    let mut mean = Vector2::zeros();
    let mut cov = Matrix2::zeros();
    // Each unordered (p, q) is added as one symmetric term, so swapping the
    // x and y roles reproduces the same sums term by term.
    let entry = |g: usize, h: usize| {
        let mut total = 0.0;
        for p in 0..np {
            total += c(p, g, p, h);
            for q in (p + 1)..np {
                total += c(p, g, q, h) + c(q, g, p, h);
            }
        }
        total
    };
    for g in 0..2 {
        mean[g] = (0..np).map(|p| nm.mean[2 * p + g]).sum();
    }
    cov[(0, 0)] = entry(0, 0);
    cov[(1, 1)] = entry(1, 1);
    cov[(0, 1)] = entry(0, 1);
    cov[(1, 0)] = cov[(0, 1)];
    (mean, cov)
}

/// Upper bound on the number of label assignments the oracle will enumerate.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Brute-force moments: enumerates every label assignment that keeps each
/// pattern's `(m_α, n_α)` and averages the rank sums uniformly.
///
/// Rank sums are computed with plain loops over the dense matrix, sharing no
/// code with the closed forms.
pub fn enumeration_oracle(r: &RankMatrix, part: &PatternPartition) -> Result<NullMomentSet> {
    let total: f64 = (0..part.n_patterns())
        .map(|a| binomial(part.size(a), part.m(a)))
        .product();
    if total > ENUMERATION_LIMIT as f64 {
        return Err(Error::TooLarge {
            assignments: total,
            limit: ENUMERATION_LIMIT,
        });
    }
    let pairs = part.valid_pairs().to_vec();
    let dim = 2 * pairs.len();
    let choices: Vec<Vec<Vec<usize>>> = (0..part.n_patterns())
        .map(|a| combinations(part.size(a), part.m(a)))
        .collect();
    let mut counter = vec![0usize; choices.len()];
    let mut count = 0.0;
    let mut mean = DVector::<f64>::zeros(dim);
    let mut m2 = DMatrix::<f64>::zeros(dim, dim);
    let mut is_x = vec![false; part.len()];
    loop {
        is_x.iter_mut().for_each(|v| *v = false);
        for (a, &c) in counter.iter().enumerate() {
            let start = part.range(a).start;
            for &i in &choices[a][c] {
                is_x[start + i] = true;
            }
        }
        let mut u = DVector::<f64>::zeros(dim);
        for (p, &(a, b)) in pairs.iter().enumerate() {
            let (mut ux, mut uy) = (0.0, 0.0);
            for i in part.range(a) {
                for j in part.range(b) {
                    if i == j {
                        continue;
                    }
                    if is_x[i] && is_x[j] {
                        ux += r.get(i, j);
                    } else if !is_x[i] && !is_x[j] {
                        uy += r.get(i, j);
                    }
                }
            }
            u[2 * p] = ux;
            u[2 * p + 1] = uy;
        }
        // Welford update.
        count += 1.0;
        let d1 = &u - &mean;
        mean += &d1 / count;
        let d2 = &u - &mean;
        m2 += &d1 * d2.transpose();

        // Odometer over per-pattern choices.
        let mut a = 0;
        loop {
            if a == counter.len() {
                let cov = (&m2 + m2.transpose()) / (2.0 * count);
                return Ok(NullMomentSet {
                    pairs,
                    mean,
                    cov,
                    terms: Vec::new(),
                });
            }
            counter[a] += 1;
            if counter[a] < choices[a].len() {
                break;
            }
            counter[a] = 0;
            a += 1;
        }
    }
}
