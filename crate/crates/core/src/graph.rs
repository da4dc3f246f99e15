//! k-nearest-neighbor graph ranks per pattern pair.
//!
//! For a row `i` in pattern α and candidates in pattern β (excluding `i`
//! itself when α = β), the k'-th nearest candidate gets rank `k + 1 - k'`
//! for `k' <= k` and 0 beyond. Tied distances share the average of the ranks
//! their positions would hold, including zero ranks when a tied group
//! crosses the k-th position, so every row with at least `k` candidates sums
//! to exactly `k(k+1)/2`.

use std::path::Path;

use crate::data::PatternPartition;
use crate::dissimilarity::{write_square_csv, BlockDistanceMatrix};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Ranks for one row of candidate distances. `exclude` marks the row's own
/// position (within-pattern blocks); it receives rank 0 and is not a candidate.
pub fn directed_rank_row(dists: &[f64], k: usize, exclude: Option<usize>) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidK(k));
    }
    let mut cand: Vec<usize> = (0..dists.len()).filter(|&j| Some(j) != exclude).collect();
    if cand.is_empty() {
        return Err(Error::EmptyCandidates {
            row: exclude.unwrap_or(0),
        });
    }
    cand.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; dists.len()];
    let position_rank = |p: usize| k.saturating_sub(p) as f64;
    let mut p = 0;
    while p < cand.len() {
        let mut q = p;
        while q + 1 < cand.len() && dists[cand[q + 1]] == dists[cand[p]] {
            q += 1;
        }
        if p < k {
            let total: f64 = (p..=q).map(position_rank).sum();
            let avg = total / (q - p + 1) as f64;
            for &j in &cand[p..=q] {
                out[j] = avg;
            }
        }
        p = q + 1;
    }
    Ok(out)
}

/// Directed ranks for a `rows x cols` distance block (row-major). With
/// `within_pattern` the block is square and each row skips its own column.
pub fn directed_rank_block(
    block: &[f64],
    rows: usize,
    cols: usize,
    k: usize,
    within_pattern: bool,
) -> Result<Vec<f64>> {
    assert_eq!(block.len(), rows * cols);
    if within_pattern {
        assert_eq!(rows, cols, "within-pattern blocks are square");
    }
    let mut out = Vec::with_capacity(block.len());
    for i in 0..rows {
        let exclude = within_pattern.then_some(i);
        out.extend(directed_rank_row(
            &block[i * cols..(i + 1) * cols],
            k,
            exclude,
        )?);
    }
    Ok(out)
}

/// Dense N x N rank matrix in the partition's local order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    n: usize,
    k: usize,
    values: Vec<f64>,
    offsets: Vec<usize>,
    symmetrized: bool,
    warnings: Vec<String>,
}

impl RankMatrix {
    /// Directed ranks for every ordered overlapping pattern pair, then
    /// `R <- (R + R^T) / 2`.
    pub fn assemble(dist: &BlockDistanceMatrix, part: &PatternPartition, k: usize) -> Result<Self> {
        Self::assemble_with(dist, part, k, Exec::default())
    }

    pub fn assemble_with(
        dist: &BlockDistanceMatrix,
        part: &PatternPartition,
        k: usize,
        exec: Exec,
    ) -> Result<Self> {
        Ok(Self::directed_with(dist, part, k, exec)?.symmetrize())
    }

    /// Directed (unsymmetrized) rank matrix.
    pub fn directed_with(
        dist: &BlockDistanceMatrix,
        part: &PatternPartition,
        k: usize,
        exec: Exec,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidK(k));
        }
        let n = part.len();
        let np = part.n_patterns();
        let rows: Vec<Result<Vec<f64>>> = exec.map(n, |i| {
            let a = part.pattern_of(i);
            let mut row = vec![0.0; n];
            for b in 0..np {
                if !part.overlaps(a, b) {
                    continue;
                }
                let cols = part.range(b);
                let exclude = (a == b).then(|| i - cols.start);
                let ranks =
                    directed_rank_row(dist.row_block(i, b), k, exclude).map_err(|e| match e {
                        Error::EmptyCandidates { .. } => Error::EmptyCandidates {
                            row: part.order()[i],
                        },
                        other => other,
                    })?;
                row[cols].copy_from_slice(&ranks);
            }
            Ok(row)
        });
        let mut values = Vec::with_capacity(n * n);
        for r in rows {
            values.extend(r?);
        }
        let mut warnings = Vec::new();
        for a in 0..np {
            for b in 0..np {
                let cand = part.size(b) - usize::from(a == b);
                if part.overlaps(a, b) && cand < k {
                    warnings.push(format!(
                        "pattern pair ({a},{b}) has {cand} neighbor candidates for k = {k}; ranks truncated"
                    ));
                }
            }
        }
        let offsets = (0..np).map(|a| part.range(a).start).chain([n]).collect();
        Ok(RankMatrix {
            n,
            k,
            values,
            offsets,
            symmetrized: false,
            warnings,
        })
    }

    pub fn symmetrize(mut self) -> Self {
        let n = self.n;
        for i in 0..n {
            for j in (i + 1)..n {
                let s = (self.values[i * n + j] + self.values[j * n + i]) * 0.5;
                self.values[i * n + j] = s;
                self.values[j * n + i] = s;
            }
        }
        self.symmetrized = true;
        self
    }

    /// Builds a rank matrix from explicit values (local order), e.g. for
    /// oracle checks on hand-built matrices. Values are used as given.
    pub fn from_values(
        part: &PatternPartition,
        k: usize,
        values: Vec<f64>,
        symmetrized: bool,
    ) -> Self {
        let n = part.len();
        assert_eq!(values.len(), n * n);
        let np = part.n_patterns();
        RankMatrix {
            n,
            k,
            values,
            offsets: (0..np).map(|a| part.range(a).start).chain([n]).collect(),
            symmetrized,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_symmetrized(&self) -> bool {
        self.symmetrized
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entries of block `R^(ab)`: rows of pattern `a`, columns of pattern `b`.
    pub fn block(&self, a: usize, b: usize) -> BlockView<'_> {
        BlockView {
            matrix: self,
            rows: self.offsets[a]..self.offsets[a + 1],
            cols: self.offsets[b]..self.offsets[b + 1],
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_square_csv(path, self.n, &self.values)
    }
}

/// Read-only view of one pattern-pair block.
#[derive(Debug, Clone)]
pub struct BlockView<'a> {
    matrix: &'a RankMatrix,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
}

impl BlockView<'_> {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    /// Entry `(i, j)` in block-local indices.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(self.rows.start + i, self.cols.start + j)
    }

    /// Row `i` of the block.
    pub fn row(&self, i: usize) -> &[f64] {
        let r = self.matrix.row(self.rows.start + i);
        &r[self.cols.clone()]
    }
}
