//! Quadratic-form statistics, asymptotic p-values and condition diagnostics.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{PartitionSummary, PatternPartition};
use crate::error::{Error, Result};
use crate::graph::RankMatrix;
use crate::moments::{sigma_c, BlockMoments, NullMomentSet};
use crate::numeric::{chi2_sf, compensated_sum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Method {
    #[serde(rename = "BRISE-v")]
    BriseV,
    #[default]
    #[serde(rename = "BRISE-c")]
    BriseC,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::BriseV => "BRISE-v",
            Method::BriseC => "BRISE-c",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "brise-v" | "v" => Ok(Method::BriseV),
            "brise-c" | "c" => Ok(Method::BriseC),
            _ => Err(Error::InvalidConfig(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Inference {
    #[default]
    Asymptotic,
    PatternPermutation,
    StandardPermutation,
}

impl fmt::Display for Inference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Inference::Asymptotic => "asymptotic",
            Inference::PatternPermutation => "pattern-permutation",
            Inference::StandardPermutation => "standard-permutation",
        })
    }
}

impl FromStr for Inference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asymptotic" => Ok(Inference::Asymptotic),
            "pattern-perm" | "pattern-permutation" => Ok(Inference::PatternPermutation),
            "standard-perm" | "standard-permutation" => Ok(Inference::StandardPermutation),
            _ => Err(Error::InvalidConfig(format!(
                "unknown inference mode `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub inference: Inference,
    pub k: usize,
    pub n_patterns: usize,
    pub pattern_counts: PartitionSummary,
    pub dropped_components: Vec<String>,
    pub warnings: Vec<String>,
}

/// Sparse rank sums per valid pattern pair.
///
/// `U_x^(ab)` for `a < b` sums `R_ij` over X rows `i` in `a` and `j` in `b`;
/// for `a = b` it sums over ordered pairs, stored here as `i < j` with
/// weight 2.
#[derive(Debug, Clone)]
pub struct RankSums {
    pairs: Vec<(usize, usize)>,
    entries: Vec<Vec<(u32, u32, f64)>>,
}

impl RankSums {
    pub fn new(r: &RankMatrix, part: &PatternPartition) -> Self {
        let pairs = part.valid_pairs().to_vec();
        let entries = pairs
            .iter()
            .map(|&(a, b)| {
                let mut out = Vec::new();
                for i in part.range(a) {
                    let cols = if a == b {
                        (i + 1)..part.range(b).end
                    } else {
                        part.range(b)
                    };
                    for j in cols {
                        let v = r.get(i, j);
                        if v != 0.0 {
                            let w = if a == b { 2.0 * v } else { v };
                            out.push((i as u32, j as u32, w));
                        }
                    }
                }
                out
            })
            .collect();
        RankSums { pairs, entries }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// `[U_x^(p0), U_y^(p0), U_x^(p1), ...]` for labels in local order.
    pub fn evaluate(&self, is_x: &[bool]) -> DVector<f64> {
        let mut u = DVector::zeros(2 * self.pairs.len());
        for (p, entries) in self.entries.iter().enumerate() {
            let (mut ux, mut uy) = (0.0, 0.0);
            for &(i, j, w) in entries {
                match (is_x[i as usize], is_x[j as usize]) {
                    (true, true) => ux += w,
                    (false, false) => uy += w,
                    _ => {}
                }
            }
            u[2 * p] = ux;
            u[2 * p + 1] = uy;
        }
        u
    }
}

/// `(Σ_p U_x^(p), Σ_p U_y^(p))`.
pub fn aggregate(u: &DVector<f64>) -> DVector<f64> {
    let np = u.len() / 2;
    DVector::from_vec(vec![
        (0..np).map(|p| u[2 * p]).sum(),
        (0..np).map(|p| u[2 * p + 1]).sum(),
    ])
}

/// Relative eigenvalue threshold of the invertibility policy.
pub const EIGEN_RTOL: f64 = 1e-10;

#[derive(Debug, Clone)]
enum Solver {
    /// Explicit inverse of a 2 x 2 matrix `[a b; b c]`. Symmetric in the
    /// two components, so swapping them gives bitwise the same value.
    Explicit2 {
        a: f64,
        b: f64,
        c: f64,
        det: f64,
    },
    Cholesky(Cholesky<f64, Dyn>),
    /// Retained eigenvectors (columns) and their eigenvalues.
    Eigen {
        vectors: DMatrix<f64>,
        values: DVector<f64>,
    },
}

/// `(u - μ)^T Σ^{-1} (u - μ)` with a fixed factorization.
#[derive(Debug, Clone)]
pub struct QuadForm {
    mean: DVector<f64>,
    solver: Solver,
    df: usize,
    dropped: Vec<String>,
}

impl QuadForm {
    /// Factorizes `cov`. Falls back to the eigen-truncated pseudo-inverse
    /// when Cholesky fails or a pivot is below `EIGEN_RTOL` of the largest
    /// diagonal entry. `labels` name the components for the drop report.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, labels: &[String]) -> Result<Self> {
        let dim = mean.len();
        assert_eq!(cov.nrows(), dim);
        if dim == 0 || !cov.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularCovariance);
        }
        let max_diag = cov.diagonal().max();
        if dim == 2 {
            let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
            let det = a * c - b * b;
            // λ_min >= det / (a + c) >= EIGEN_RTOL (a + c) >= EIGEN_RTOL λ_max.
            if a > 0.0 && c > 0.0 && det >= EIGEN_RTOL * (a + c) * (a + c) {
                return Ok(QuadForm {
                    mean,
                    solver: Solver::Explicit2 { a, b, c, det },
                    df: 2,
                    dropped: Vec::new(),
                });
            }
        }
        if let Some(ch) = cov.clone().cholesky() {
            let min_pivot = ch.l_dirty().diagonal().map(|v| v * v).min();
            if max_diag > 0.0 && min_pivot >= EIGEN_RTOL * max_diag {
                return Ok(QuadForm {
                    mean,
                    solver: Solver::Cholesky(ch),
                    df: dim,
                    dropped: Vec::new(),
                });
            }
        }
        let eig = SymmetricEigen::new(cov);
        let max = eig.eigenvalues.max();
        if max <= 0.0 {
            return Err(Error::SingularCovariance);
        }
        let mut keep = Vec::new();
        let mut dropped = Vec::new();
        for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda >= EIGEN_RTOL * max {
                keep.push(c);
            } else {
                let v = eig.eigenvectors.column(c);
                let lead = v.iamax();
                dropped.push(format!(
                    "eigendirection {c} (eigenvalue {lambda:.3e}, mostly {})",
                    labels.get(lead).map_or("?", |s| s.as_str())
                ));
            }
        }
        let vectors = eig.eigenvectors.select_columns(&keep);
        let values = DVector::from_iterator(keep.len(), keep.iter().map(|&c| eig.eigenvalues[c]));
        Ok(QuadForm {
            mean,
            df: keep.len(),
            solver: Solver::Eigen { vectors, values },
            dropped,
        })
    }

    pub fn df(&self) -> usize {
        self.df
    }

    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn is_rank_reduced(&self) -> bool {
        !self.dropped.is_empty()
    }

    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        let d = u - &self.mean;
        let t = match &self.solver {
            &Solver::Explicit2 { a, b, c, det } => {
                let (x, y) = (d[0], d[1]);
                (c * (x * x) + a * (y * y) - 2.0 * b * (x * y)) / det
            }
            Solver::Cholesky(ch) => d.dot(&ch.solve(&d)),
            Solver::Eigen { vectors, values } => {
                let z = vectors.tr_mul(&d);
                z.iter().zip(values.iter()).map(|(z, l)| z * z / l).sum()
            }
        };
        t.max(0.0)
    }
}

pub fn component_labels(pairs: &[(usize, usize)]) -> Vec<String> {
    pairs
        .iter()
        .flat_map(|&(a, b)| [format!("x({a},{b})"), format!("y({a},{b})")])
        .collect()
}

/// Quadratic form of BRISE-v over the `2|I|` per-pair components.
pub fn v_form(nm: &NullMomentSet) -> Result<QuadForm> {
    QuadForm::new(
        nm.mean.clone(),
        nm.cov.clone(),
        &component_labels(&nm.pairs),
    )
}

/// Quadratic form of BRISE-c over the aggregated pair.
pub fn c_form(nm: &NullMomentSet) -> Result<QuadForm> {
    let (mean, cov) = sigma_c(nm);
    QuadForm::new(
        DVector::from_column_slice(mean.as_slice()),
        DMatrix::from_column_slice(2, 2, cov.as_slice()),
        &["x".to_string(), "y".to_string()],
    )
}

pub fn form_for(method: Method, nm: &NullMomentSet) -> Result<QuadForm> {
    match method {
        Method::BriseV => v_form(nm),
        Method::BriseC => c_form(nm),
    }
}

/// Maps per-pair sums to the input of `method`'s quadratic form.
pub fn project(method: Method, u: &DVector<f64>) -> DVector<f64> {
    match method {
        Method::BriseV => u.clone(),
        Method::BriseC => aggregate(u),
    }
}

/// Statistic value with its degrees of freedom and dropped directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Statistic {
    pub method: Method,
    pub value: f64,
    pub df: usize,
    pub dropped: Vec<String>,
}

impl Statistic {
    pub fn asymptotic_p_value(&self) -> f64 {
        chi2_sf(self.value, self.df)
    }
}

fn statistic(
    method: Method,
    r: &RankMatrix,
    part: &PatternPartition,
    nm: &NullMomentSet,
) -> Result<Statistic> {
    let form = form_for(method, nm)?;
    let u = RankSums::new(r, part).evaluate(part.is_x());
    Ok(Statistic {
        method,
        value: form.eval(&project(method, &u)),
        df: form.df(),
        dropped: form.dropped().to_vec(),
    })
}

/// `T_v = V^T Σ_v^{-1} V`, compared to χ² with `2|I|` degrees of freedom.
pub fn brise_v(r: &RankMatrix, part: &PatternPartition, nm: &NullMomentSet) -> Result<Statistic> {
    statistic(Method::BriseV, r, part, nm)
}

/// `T_c = Ū^T Σ_c^{-1} Ū`, compared to χ²₂.
pub fn brise_c(r: &RankMatrix, part: &PatternPartition, nm: &NullMomentSet) -> Result<Statistic> {
    statistic(Method::BriseC, r, part, nm)
}

/// LHS/RHS ratio of one asymptotic condition at one index combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRatio {
    pub condition: u8,
    pub indices: Vec<usize>,
    pub ratio: f64,
}

/// Minimum eigenvalue of the cross-pattern matrix `E_α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPatternCheck {
    pub pattern: usize,
    pub size: usize,
    pub min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub ratios: Vec<ConditionRatio>,
    pub cross_pattern: Vec<CrossPatternCheck>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn max_ratio(&self, condition: u8) -> Option<f64> {
        self.ratios
            .iter()
            .filter(|c| c.condition == condition && c.ratio.is_finite())
            .map(|c| c.ratio)
            .reduce(f64::max)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 && den == 0.0 {
        f64::NAN
    } else {
        num / den
    }
}

/// Advisory check of the limiting-distribution conditions. Each entry is
/// LHS / RHS; small values mean the condition looks comfortable.
pub fn asymptotic_diagnostics(
    r: &RankMatrix,
    part: &PatternPartition,
    bm: &BlockMoments,
) -> Diagnostics {
    let np = part.n_patterns();
    let mut ratios = Vec::new();
    let mut warnings = Vec::new();
    let mut push = |condition: u8, indices: Vec<usize>, value: f64, warnings: &mut Vec<String>| {
        if value.is_nan() {
            warnings.push(format!("condition ({condition}) at {indices:?} is 0/0"));
        }
        ratios.push(ConditionRatio {
            condition,
            indices,
            ratio: value,
        });
    };
    for a in 0..np {
        for b in 0..np {
            if !part.overlaps(a, b) {
                continue;
            }
            let na = part.size(a) as f64;
            let nb = part.size(b) as f64;
            let block = r.block(a, b);
            let r2sq = bm.r2sq(a, b);
            let v1 = bm.v1(a, b, b);
            let tilde = bm.centered_rows(a, b).unwrap_or_default();

            push(
                1,
                vec![a, b, b],
                ratio(bm.r1sq(a, b, b).sqrt(), r2sq.sqrt()),
                &mut warnings,
            );

            let lhs2 = compensated_sum((0..block.n_rows()).map(|i| {
                let s: f64 = block.row(i).iter().map(|v| v * v).sum();
                s * s
            }));
            push(
                2,
                vec![a, b],
                ratio(lhs2, na * na * nb * r2sq * r2sq),
                &mut warnings,
            );

            let cube = compensated_sum(tilde.iter().map(|v| v.abs().powi(3)));
            push(
                3,
                vec![a, b],
                ratio(cube, (na * v1).max(0.0).powf(1.5)),
                &mut warnings,
            );
            push(
                4,
                vec![a, b],
                ratio(cube, na * r2sq.sqrt() * v1),
                &mut warnings,
            );

            for c in 0..np {
                if !part.overlaps(b, c) {
                    continue;
                }
                let tb = bm.centered_rows(b, c).unwrap_or_default();
                // Σ_{j != l} R_ij R_il R̃_j R̃_l = (Σ_j R_ij R̃_j)^2 - Σ_j R_ij^2 R̃_j^2.
                let lhs5 = compensated_sum((0..block.n_rows()).map(|i| {
                    let row = block.row(i);
                    let s: f64 = row.iter().zip(&tb).map(|(x, t)| x * t).sum();
                    let d: f64 = row.iter().zip(&tb).map(|(x, t)| x * x * t * t).sum();
                    s * s - d
                }))
                .abs();
                push(
                    5,
                    vec![a, b, c],
                    ratio(lhs5, na * nb * nb * r2sq * bm.v1(b, c, c)),
                    &mut warnings,
                );
            }

            // Σ_{i != l} [ (Σ_j R_ij R_lj)^2 - Σ_j R_ij^2 R_lj^2 ]. Within-pattern
            // blocks have a zero diagonal, which covers the extra exclusions.
            let rows = block.n_rows();
            let mut lhs6 = Vec::with_capacity(rows * rows);
            for i in 0..rows {
                for l in 0..rows {
                    if i == l {
                        continue;
                    }
                    let (ri, rl) = (block.row(i), block.row(l));
                    let g: f64 = ri.iter().zip(rl).map(|(x, y)| x * y).sum();
                    let d: f64 = ri.iter().zip(rl).map(|(x, y)| x * x * y * y).sum();
                    lhs6.push(g * g - d);
                }
            }
            push(
                6,
                vec![a, b],
                ratio(compensated_sum(lhs6), na * na * nb * nb * r2sq * r2sq),
                &mut warnings,
            );
        }
    }

    let mut cross_pattern = Vec::new();
    for a in 0..np {
        let others: Vec<usize> = (0..np).filter(|&b| b != a && part.overlaps(a, b)).collect();
        if others.is_empty() {
            cross_pattern.push(CrossPatternCheck {
                pattern: a,
                size: 0,
                min_eigenvalue: None,
            });
            continue;
        }
        let base = bm.r1sq(a, a, a);
        let e = DMatrix::from_fn(others.len(), others.len(), |i, j| {
            let (b, c) = (others[i], others[j]);
            bm.r1sq(a, b, c) - bm.r1sq(a, a, b) * bm.r1sq(a, a, c) / base
        });
        let min = if e.iter().all(|v| v.is_finite()) {
            Some(SymmetricEigen::new(e).eigenvalues.min())
        } else {
            warnings.push(format!("cross-pattern matrix of pattern {a} is undefined"));
            None
        };
        cross_pattern.push(CrossPatternCheck {
            pattern: a,
            size: others.len(),
            min_eigenvalue: min,
        });
    }
    if np == 1 {
        warnings.push("single pattern: the conditions reduce to the complete-data case".into());
    }
    Diagnostics {
        ratios,
        cross_pattern,
        warnings,
    }
}
