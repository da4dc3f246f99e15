//! Pairwise dissimilarities over shared observed sources.
//!
//! For rows `i` and `j` the dissimilarity is `Norm(Σ_l ρ_l(Z_i^l, Z_j^l))`
//! with the sum over sources observed in both rows. Rows with no shared
//! source get 0. The default is squared Euclidean per source with a square
//! root, i.e. the Euclidean distance over the concatenated shared columns.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::data::{MultiSourceDataset, PatternPartition, SourceSchema};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Per-source dissimilarity. Must be symmetric, non-negative and zero on
/// identical inputs.
pub trait SourceMetric: Send + Sync + std::fmt::Debug {
    fn dissimilarity(&self, u: &[f64], v: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredEuclidean;

impl SourceMetric for SquaredEuclidean {
    fn dissimilarity(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Outer normalization applied to the summed per-source dissimilarities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Sqrt,
    Identity,
}

impl Norm {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Norm::Sqrt => x.sqrt(),
            Norm::Identity => x,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Metric {
    per_source: Vec<Arc<dyn SourceMetric>>,
    norm: Norm,
    /// Divide the inner sum by the shared dimension before `norm`.
    per_dimension: bool,
}

impl Metric {
    /// Squared Euclidean on every source, square-root norm.
    pub fn euclidean(schema: &SourceSchema) -> Self {
        let shared: Arc<dyn SourceMetric> = Arc::new(SquaredEuclidean);
        Metric {
            per_source: vec![shared; schema.len()],
            norm: Norm::Sqrt,
            per_dimension: false,
        }
    }

    pub fn with_norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }

    pub fn per_dimension(mut self, on: bool) -> Self {
        self.per_dimension = on;
        self
    }

    /// Replaces the metric of the source called `name`.
    pub fn with_source_metric(
        mut self,
        schema: &SourceSchema,
        name: &str,
        metric: Arc<dyn SourceMetric>,
    ) -> Result<Self> {
        let l = schema
            .index_of(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown source `{name}`")))?;
        self.per_source[l] = metric;
        Ok(self)
    }
}

/// Dissimilarity between rows `i` and `j` of `data`; 0 when they share no source.
pub fn pair_dissimilarity(data: &MultiSourceDataset, i: usize, j: usize, metric: &Metric) -> f64 {
    let schema = data.schema();
    let (pi, pj) = (data.row(i).pattern(), data.row(j).pattern());
    let (vi, vj) = (data.row(i).values(), data.row(j).values());
    let mut inner = 0.0;
    let mut shared_dim = 0;
    for l in pi.shared(pj) {
        let r = schema.range(l);
        shared_dim += r.len();
        inner += metric.per_source[l].dissimilarity(&vi[r.clone()], &vj[r]);
    }
    if shared_dim == 0 {
        return 0.0;
    }
    if metric.per_dimension {
        inner /= shared_dim as f64;
    }
    metric.norm.apply(inner)
}

/// Dense symmetric dissimilarity matrix in the partition's local order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDistanceMatrix {
    n: usize,
    values: Vec<f64>,
    offsets: Vec<usize>,
    overlap_dims: Vec<usize>,
    n_patterns: usize,
}

impl BlockDistanceMatrix {
    pub fn compute(
        data: &MultiSourceDataset,
        part: &PatternPartition,
        metric: &Metric,
    ) -> Result<Self> {
        Self::compute_with(data, part, metric, Exec::default())
    }

    pub fn compute_with(
        data: &MultiSourceDataset,
        part: &PatternPartition,
        metric: &Metric,
        exec: Exec,
    ) -> Result<Self> {
        let n = part.len();
        let order = part.order();
        // Upper triangle, one row per task; entry (i, j) is computed once and mirrored.
        let rows: Vec<Vec<f64>> = exec.map(n, |i| {
            ((i + 1)..n)
                .map(|j| pair_dissimilarity(data, order[i], order[j], metric))
                .collect()
        });
        let mut values = vec![0.0; n * n];
        for (i, row) in rows.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                let j = i + 1 + off;
                if !v.is_finite() {
                    return Err(Error::NumericOverflow {
                        i: order[i],
                        j: order[j],
                    });
                }
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        let np = part.n_patterns();
        let schema = data.schema();
        let mut overlap_dims = vec![0; np * np];
        for a in 0..np {
            for b in 0..np {
                overlap_dims[a * np + b] = part
                    .pattern(a)
                    .shared(part.pattern(b))
                    .map(|l| schema.range(l).len())
                    .sum();
            }
        }
        let offsets = (0..np).map(|a| part.range(a).start).chain([n]).collect();
        Ok(BlockDistanceMatrix {
            n,
            values,
            offsets,
            overlap_dims,
            n_patterns: np,
        })
    }

    /// Applies `f` to every off-diagonal entry of overlapping blocks; zero
    /// fill and the diagonal are kept.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut out = self.clone();
        let np = self.n_patterns;
        for a in 0..np {
            for b in 0..np {
                if self.overlap_dim(a, b) == 0 {
                    continue;
                }
                for i in self.offsets[a]..self.offsets[a + 1] {
                    for j in self.offsets[b]..self.offsets[b + 1] {
                        if i != j {
                            let v = f(self.values[i * self.n + j]);
                            if !v.is_finite() {
                                return Err(Error::NumericOverflow { i, j });
                            }
                            out.values[i * self.n + j] = v;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Row `i` restricted to the columns of pattern `b`.
    pub fn row_block(&self, i: usize, b: usize) -> &[f64] {
        &self.values[i * self.n + self.offsets[b]..i * self.n + self.offsets[b + 1]]
    }

    /// Summed dimension of the sources shared by patterns `a` and `b`.
    pub fn overlap_dim(&self, a: usize, b: usize) -> usize {
        self.overlap_dims[a * self.n_patterns + b]
    }

    /// Writes the matrix as headerless CSV in local order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_square_csv(path, self.n, &self.values)
    }
}

pub(crate) fn write_square_csv(path: &Path, n: usize, values: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..n {
        let line: Vec<String> = values[i * n..(i + 1) * n]
            .iter()
            .map(|v| v.to_string())
            .collect();
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()?;
    Ok(())
}
