//! End-to-end test: canonicalize, partition, filter, distances, ranks,
//! moments, statistic, inference.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Group, MultiSourceDataset, PatternPartition, SourceSchema};
use crate::dissimilarity::{BlockDistanceMatrix, Metric, Norm};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::RankMatrix;
use crate::moments::{null_moments, BlockMoments, NullMomentSet};
use crate::numeric::chi2_sf;
use crate::permutation::{permutation_test, PermutationPlan, Scheme};
use crate::stats::{
    asymptotic_diagnostics, form_for, project, Diagnostics, Inference, Method, RankSums, TestResult,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestOptions {
    pub method: Method,
    pub k: usize,
    pub inference: Inference,
    /// Permutation replicates `B`.
    pub replicates: usize,
    pub seed: u64,
    pub n_thres: usize,
    pub p_thres: f64,
    pub norm: Norm,
    pub per_dimension: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            method: Method::BriseC,
            k: 10,
            inference: Inference::Asymptotic,
            replicates: 1000,
            seed: 0,
            n_thres: 2,
            p_thres: 0.1,
            norm: Norm::Sqrt,
            per_dimension: false,
            exec: Exec::default(),
        }
    }
}

/// Everything computed before the statistic.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Input rows in canonical order.
    pub data: MultiSourceDataset,
    /// Canonical position -> input row.
    pub input_rows: Vec<usize>,
    pub partition: PatternPartition,
    pub distances: BlockDistanceMatrix,
    pub ranks: RankMatrix,
    pub block_moments: BlockMoments,
}

impl Prepared {
    /// Closed-form null moments; fails if a pattern has fewer than two
    /// observations in either group.
    pub fn null_moments(&self) -> Result<NullMomentSet> {
        null_moments(&self.block_moments, &self.partition)
    }

    /// Input row index for each local position.
    pub fn local_to_input(&self) -> Vec<usize> {
        self.partition
            .order()
            .iter()
            .map(|&i| self.input_rows[i])
            .collect()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        asymptotic_diagnostics(&self.ranks, &self.partition, &self.block_moments)
    }

    pub fn write_distances(&self, path: &Path) -> Result<()> {
        write_by_input_row(path, &self.local_to_input(), |i, j| {
            self.distances.get(i, j)
        })
    }

    pub fn write_ranks(&self, path: &Path) -> Result<()> {
        write_by_input_row(path, &self.local_to_input(), |i, j| self.ranks.get(i, j))
    }
}

/// Writes an `n x n` matrix with rows and columns sorted by input row index.
/// The header and first column carry those indices.
fn write_by_input_row(
    path: &Path,
    input: &[usize],
    get: impl Fn(usize, usize) -> f64,
) -> Result<()> {
    let mut local: Vec<usize> = (0..input.len()).collect();
    local.sort_by_key(|&t| input[t]);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = local.iter().map(|&t| input[t].to_string()).collect();
    writeln!(f, "row,{}", header.join(","))?;
    for &i in &local {
        let line: Vec<String> = local.iter().map(|&j| get(i, j).to_string()).collect();
        writeln!(f, "{},{}", input[i], line.join(","))?;
    }
    f.flush()?;
    Ok(())
}

pub fn prepare(data: &MultiSourceDataset, opts: &TestOptions) -> Result<Prepared> {
    let (canonical, input_rows) = data.canonicalized();
    let partition = canonical.partition().filter(opts.n_thres, opts.p_thres)?;
    let metric = Metric::euclidean(canonical.schema())
        .with_norm(opts.norm)
        .per_dimension(opts.per_dimension);
    let distances = BlockDistanceMatrix::compute_with(&canonical, &partition, &metric, opts.exec)?;
    let ranks = RankMatrix::assemble_with(&distances, &partition, opts.k, opts.exec)?;
    let block_moments = BlockMoments::compute(&ranks, &partition)?;
    Ok(Prepared {
        data: canonical,
        input_rows,
        partition,
        distances,
        ranks,
        block_moments,
    })
}

#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub result: TestResult,
    pub prepared: Prepared,
}

/// Runs the configured test on a prepared instance.
pub fn run_prepared(prep: &Prepared, opts: &TestOptions) -> Result<TestResult> {
    let part = &prep.partition;
    let mut warnings: Vec<String> = prep.ranks.warnings().to_vec();
    if !part.dropped_rows().is_empty() {
        warnings.push(format!(
            "{} rows in rare patterns were removed before testing",
            part.dropped_rows().len()
        ));
    }
    let (statistic, df, p_value, dropped) = match opts.inference {
        Inference::Asymptotic => {
            let nm = prep.null_moments()?;
            let form = form_for(opts.method, &nm)?;
            let u = RankSums::new(&prep.ranks, part).evaluate(part.is_x());
            let t = form.eval(&project(opts.method, &u));
            (t, form.df(), chi2_sf(t, form.df()), form.dropped().to_vec())
        }
        Inference::PatternPermutation | Inference::StandardPermutation => {
            let scheme = if opts.inference == Inference::PatternPermutation {
                Scheme::PatternWise
            } else {
                Scheme::Standard
            };
            let nm = match scheme {
                Scheme::PatternWise => Some(prep.null_moments()?),
                Scheme::Standard => None,
            };
            let plan = PermutationPlan {
                scheme,
                replicates: opts.replicates,
                seed: opts.seed,
            };
            let out = permutation_test(
                &prep.ranks,
                part,
                nm.as_ref(),
                opts.method,
                &plan,
                opts.exec,
            )?;
            (out.observed, out.df, out.p_value, out.dropped)
        }
    };
    if !dropped.is_empty() {
        warnings.push(format!("covariance is rank deficient; df reduced to {df}"));
    }
    Ok(TestResult {
        method: opts.method,
        statistic,
        df,
        p_value,
        inference: opts.inference,
        k: opts.k,
        n_patterns: part.n_patterns(),
        pattern_counts: part.summary(),
        dropped_components: dropped,
        warnings,
    })
}

pub fn run_test(data: &MultiSourceDataset, opts: &TestOptions) -> Result<TestOutcome> {
    let prepared = prepare(data, opts)?;
    let result = run_prepared(&prepared, opts)?;
    Ok(TestOutcome { result, prepared })
}

/// Builds a dataset from a row-major `values` array with `NaN` marking
/// missing entries. `source_dims` gives the width of each source in column
/// order; sources are named `s1`, `s2`, ...
pub fn dataset_from_array(
    values: &[f64],
    n_cols: usize,
    groups: &[Group],
    source_dims: &[usize],
) -> Result<MultiSourceDataset> {
    if n_cols == 0 || values.len() != n_cols * groups.len() {
        return Err(Error::SchemaMismatch(format!(
            "{} values do not form {} rows of {n_cols} columns",
            values.len(),
            groups.len()
        )));
    }
    if source_dims.iter().sum::<usize>() != n_cols {
        return Err(Error::SchemaMismatch(format!(
            "source widths {source_dims:?} do not add up to {n_cols} columns"
        )));
    }
    let schema = SourceSchema::new(
        source_dims
            .iter()
            .enumerate()
            .map(|(l, &d)| (format!("s{}", l + 1), d)),
    )?;
    let rows: Vec<Vec<f64>> = values.chunks(n_cols).map(<[f64]>::to_vec).collect();
    MultiSourceDataset::from_nan_rows(schema, groups, &rows)
}

/// Array-in, result-out entry point for language bindings.
pub fn run_test_on_array(
    values: &[f64],
    n_cols: usize,
    groups: &[Group],
    source_dims: &[usize],
    opts: &TestOptions,
) -> Result<TestResult> {
    let data = dataset_from_array(values, n_cols, groups, source_dims)?;
    Ok(run_test(&data, opts)?.result)
}
