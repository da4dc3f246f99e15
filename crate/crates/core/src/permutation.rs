//! Permutation inference.
//!
//! Pattern-wise permutation shuffles labels within each pattern, keeping
//! every `(m_α, n_α)`; the closed-form null moments stay valid for every
//! replicate, so one factorization serves them all. Standard permutation
//! shuffles labels over the whole pooled sample. For BRISE-c its moments are
//! the single-pattern closed form on the pooled rank matrix; the per-pair
//! components of BRISE-v have no such form and are standardized with the
//! mean and covariance of the replicates themselves.
//!
//! Replicate `b` draws from its own RNG stream, so results do not depend on
//! the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::PatternPartition;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::RankMatrix;
use crate::moments::{null_moments, BlockMoments, NullMomentSet};
use crate::rng;
use crate::stats::{c_form, component_labels, form_for, project, Method, QuadForm, RankSums};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    PatternWise,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub scheme: Scheme,
    pub replicates: usize,
    pub seed: u64,
}

/// Draws one label vector in local order.
pub fn permute_labels<R: Rng + ?Sized>(
    part: &PatternPartition,
    scheme: Scheme,
    rng: &mut R,
) -> Vec<bool> {
    let mut is_x = vec![false; part.len()];
    match scheme {
        Scheme::PatternWise => {
            for a in 0..part.n_patterns() {
                let range = part.range(a);
                for i in sample(rng, range.len(), part.m(a)) {
                    is_x[range.start + i] = true;
                }
            }
        }
        Scheme::Standard => {
            for i in sample(rng, part.len(), part.m_total()) {
                is_x[i] = true;
            }
        }
    }
    is_x
}

/// `(1 + #{T* >= T_obs}) / (1 + B)`.
pub fn permutation_p_value(observed: f64, replicates: &[f64]) -> f64 {
    let exceed = replicates.iter().filter(|&&t| t >= observed).count();
    (1 + exceed) as f64 / (1 + replicates.len()) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationOutcome {
    pub observed: f64,
    pub replicates: Vec<f64>,
    pub p_value: f64,
    pub df: usize,
    pub dropped: Vec<String>,
}

/// Per-replicate rank sums for the plan's scheme, in replicate order.
pub fn replicate_sums(
    sums: &RankSums,
    part: &PatternPartition,
    plan: &PermutationPlan,
    exec: Exec,
) -> Vec<DVector<f64>> {
    exec.map(plan.replicates, |b| {
        let mut rng = rng::stream(plan.seed, b as u64);
        sums.evaluate(&permute_labels(part, plan.scheme, &mut rng))
    })
}

/// Sample mean and covariance (divisor B - 1) of replicate vectors.
pub fn empirical_moments(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let dim = samples[0].len();
    let b = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(dim), |acc, s| acc + s) / b;
    let mut cov = DMatrix::zeros(dim, dim);
    for s in samples {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    (mean, cov / (b - 1.0).max(1.0))
}

/// BRISE-c under unrestricted label shuffling: the statistic is built on
/// the pooled partition, where `U_x` sums over ordered pairs of every block.
#[derive(Debug, Clone)]
pub struct StandardC {
    sums: RankSums,
    form: QuadForm,
}

impl StandardC {
    pub fn new(r: &RankMatrix, part: &PatternPartition) -> Result<Self> {
        let pooled = part.pooled();
        let pooled_r =
            RankMatrix::from_values(&pooled, r.k(), r.values().to_vec(), r.is_symmetrized());
        let nm = null_moments(&BlockMoments::compute(&pooled_r, &pooled)?, &pooled)?;
        Ok(StandardC {
            sums: RankSums::new(&pooled_r, &pooled),
            form: c_form(&nm)?,
        })
    }

    pub fn form(&self) -> &QuadForm {
        &self.form
    }

    pub fn statistic(&self, is_x: &[bool]) -> f64 {
        self.form.eval(&self.sums.evaluate(is_x))
    }
}

/// Permutation test of `method`.
///
/// Pattern-wise replicates are scored with the closed-form moments `nm`.
/// Standard replicates use the pooled closed form for BRISE-c and the
/// replicate mean and covariance for BRISE-v.
pub fn permutation_test(
    r: &RankMatrix,
    part: &PatternPartition,
    nm: Option<&NullMomentSet>,
    method: Method,
    plan: &PermutationPlan,
    exec: Exec,
) -> Result<PermutationOutcome> {
    if plan.replicates == 0 {
        return Err(Error::InvalidConfig(
            "permutation inference needs B >= 1".into(),
        ));
    }
    if plan.scheme == Scheme::Standard && method == Method::BriseC {
        let sc = StandardC::new(r, part)?;
        let replicates = exec.map(plan.replicates, |b| {
            let mut rng = rng::stream(plan.seed, b as u64);
            sc.statistic(&permute_labels(part, plan.scheme, &mut rng))
        });
        let observed = sc.statistic(part.is_x());
        return Ok(PermutationOutcome {
            observed,
            p_value: permutation_p_value(observed, &replicates),
            replicates,
            df: sc.form().df(),
            dropped: sc.form().dropped().to_vec(),
        });
    }
    let sums = RankSums::new(r, part);
    let observed_u = project(method, &sums.evaluate(part.is_x()));
    let draws: Vec<DVector<f64>> = replicate_sums(&sums, part, plan, exec)
        .into_iter()
        .map(|u| project(method, &u))
        .collect();
    let form = match plan.scheme {
        Scheme::PatternWise => {
            let nm = nm.ok_or_else(|| {
                Error::InvalidConfig("pattern-wise permutation needs closed-form moments".into())
            })?;
            form_for(method, nm)?
        }
        Scheme::Standard => {
            if plan.replicates < 2 {
                return Err(Error::InvalidConfig(
                    "standard permutation needs B >= 2".into(),
                ));
            }
            let (mean, cov) = empirical_moments(&draws);
            QuadForm::new(mean, cov, &component_labels(sums.pairs()))?
        }
    };
    let observed = form.eval(&observed_u);
    let replicates: Vec<f64> = draws.iter().map(|u| form.eval(u)).collect();
    Ok(PermutationOutcome {
        observed,
        p_value: permutation_p_value(observed, &replicates),
        replicates,
        df: form.df(),
        dropped: form.dropped().to_vec(),
    })
}
