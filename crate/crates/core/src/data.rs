//! Multi-source observations, missingness patterns, and the pattern partition.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    X,
    Y,
}

impl Group {
    pub fn other(self) -> Group {
        match self {
            Group::X => Group::Y,
            Group::Y => Group::X,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::X => f.write_str("X"),
            Group::Y => f.write_str("Y"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub name: String,
    pub dim: usize,
}

/// Ordered list of sources and their dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSchema {
    sources: Vec<Source>,
    offsets: Vec<usize>,
}

impl SourceSchema {
    pub fn new<S: Into<String>>(sources: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let sources: Vec<Source> = sources
            .into_iter()
            .map(|(name, dim)| Source {
                name: name.into(),
                dim,
            })
            .collect();
        if sources.is_empty() {
            return Err(Error::InvalidSchema(
                "at least one source is required".into(),
            ));
        }
        let mut seen = HashSet::new();
        for s in &sources {
            if s.dim == 0 {
                return Err(Error::InvalidSchema(format!(
                    "source `{}` has dimension 0",
                    s.name
                )));
            }
            if !seen.insert(s.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate source name `{}`",
                    s.name
                )));
            }
        }
        let mut offsets = Vec::with_capacity(sources.len() + 1);
        offsets.push(0);
        for s in &sources {
            offsets.push(offsets.last().unwrap() + s.dim);
        }
        Ok(SourceSchema { sources, offsets })
    }

    /// `count` sources named `s1, s2, ...`, each of dimension `dim`.
    pub fn uniform(count: usize, dim: usize) -> Result<Self> {
        Self::new((1..=count).map(|l| (format!("s{l}"), dim)))
    }

    /// Sources defined by consecutive, non-overlapping column ranges covering `0..d`.
    pub fn from_boundaries(ranges: &[Range<usize>]) -> Result<Self> {
        let mut expected = 0;
        for r in ranges {
            if r.start != expected || r.end <= r.start {
                return Err(Error::InvalidSchema(format!(
                    "source column ranges must be contiguous and non-empty (bad range {r:?})"
                )));
            }
            expected = r.end;
        }
        Self::new(
            ranges
                .iter()
                .enumerate()
                .map(|(l, r)| (format!("s{}", l + 1), r.len())),
        )
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    /// Column range of source `l` within a full-length row.
    pub fn range(&self, l: usize) -> Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.sources.iter().position(|s| s.name == name)
    }
}

/// Which sources an observation has (true = observed).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MissingnessPattern(Vec<bool>);

impl MissingnessPattern {
    /// Returns `None` for the all-missing mask, which never enters a dataset.
    pub fn new(mask: Vec<bool>) -> Option<Self> {
        mask.iter().any(|&b| b).then_some(MissingnessPattern(mask))
    }

    pub fn mask(&self) -> &[bool] {
        &self.0
    }

    pub fn is_observed(&self, l: usize) -> bool {
        self.0[l]
    }

    pub fn overlaps(&self, other: &MissingnessPattern) -> bool {
        self.0.iter().zip(&other.0).any(|(&a, &b)| a && b)
    }

    /// Indices of sources observed in both patterns.
    pub fn shared<'a>(&'a self, other: &'a MissingnessPattern) -> impl Iterator<Item = usize> + 'a {
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .filter_map(|(l, (&a, &b))| (a && b).then_some(l))
    }

    /// Canonical order: lexicographic with observed sorting before missing.
    pub fn canonical_cmp(&self, other: &MissingnessPattern) -> Ordering {
        other.0.cmp(&self.0)
    }
}

impl fmt::Display for MissingnessPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// One pooled observation. Missing source blocks are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub group: Group,
    pattern: MissingnessPattern,
    values: Vec<f64>,
}

impl Observation {
    pub fn pattern(&self) -> &MissingnessPattern {
        &self.pattern
    }

    /// Full-length row (NaN on missing blocks).
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone)]
pub struct MultiSourceDataset {
    schema: SourceSchema,
    rows: Vec<Observation>,
}

impl MultiSourceDataset {
    /// Builds a dataset from per-source blocks (`None` = source missing).
    pub fn from_blocks(
        schema: SourceSchema,
        rows: Vec<(Group, Vec<Option<Vec<f64>>>)>,
    ) -> Result<Self> {
        let d = schema.total_dim();
        let mut out = Vec::with_capacity(rows.len());
        for (row, (group, blocks)) in rows.into_iter().enumerate() {
            if blocks.len() != schema.len() {
                return Err(Error::SchemaMismatch(format!(
                    "row {row} has {} source blocks, schema has {}",
                    blocks.len(),
                    schema.len()
                )));
            }
            let mut values = vec![f64::NAN; d];
            let mut mask = Vec::with_capacity(schema.len());
            for (l, block) in blocks.into_iter().enumerate() {
                match block {
                    Some(b) => {
                        let range = schema.range(l);
                        if b.len() != range.len() {
                            return Err(Error::SchemaMismatch(format!(
                                "row {row}: source `{}` has {} values, expected {}",
                                schema.sources[l].name,
                                b.len(),
                                range.len()
                            )));
                        }
                        if let Some(pos) = b.iter().position(|v| !v.is_finite()) {
                            return Err(Error::NonNumericValue {
                                row,
                                column: format!("{}[{pos}]", schema.sources[l].name),
                                value: b[pos].to_string(),
                            });
                        }
                        values[range].copy_from_slice(&b);
                        mask.push(true);
                    }
                    None => mask.push(false),
                }
            }
            let pattern = MissingnessPattern::new(mask).ok_or(Error::AllMissingRow { row })?;
            out.push(Observation {
                group,
                pattern,
                values,
            });
        }
        Self::from_observations(schema, out)
    }

    /// Builds a dataset from full-length rows with NaN marking missing entries.
    /// A source is missing when all of its entries are NaN; a mix of NaN and
    /// numbers within one source is rejected.
    pub fn from_nan_rows(
        schema: SourceSchema,
        groups: &[Group],
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        if groups.len() != rows.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} group labels for {} rows",
                groups.len(),
                rows.len()
            )));
        }
        let d = schema.total_dim();
        let mut blocks_rows = Vec::with_capacity(rows.len());
        for (row, (values, &group)) in rows.iter().zip(groups).enumerate() {
            if values.len() != d {
                return Err(Error::SchemaMismatch(format!(
                    "row {row} has {} columns, schema covers {d}",
                    values.len()
                )));
            }
            let mut blocks = Vec::with_capacity(schema.len());
            for l in 0..schema.len() {
                let block = &values[schema.range(l)];
                let missing = block.iter().filter(|v| v.is_nan()).count();
                if missing == block.len() {
                    blocks.push(None);
                } else if missing > 0 {
                    return Err(Error::PartialBlock {
                        row,
                        source_name: schema.sources[l].name.clone(),
                    });
                } else {
                    blocks.push(Some(block.to_vec()));
                }
            }
            blocks_rows.push((group, blocks));
        }
        Self::from_blocks(schema, blocks_rows)
    }

    fn from_observations(schema: SourceSchema, rows: Vec<Observation>) -> Result<Self> {
        for g in [Group::X, Group::Y] {
            if !rows.iter().any(|r| r.group == g) {
                return Err(Error::SchemaMismatch(format!(
                    "no observations in group {g}"
                )));
            }
        }
        Ok(MultiSourceDataset { schema, rows })
    }

    pub fn schema(&self) -> &SourceSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Observation {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Observed block of source `l` in row `i`.
    pub fn block(&self, i: usize, l: usize) -> Option<&[f64]> {
        let r = &self.rows[i];
        r.pattern
            .is_observed(l)
            .then(|| &r.values[self.schema.range(l)])
    }

    pub fn count(&self, g: Group) -> usize {
        self.rows.iter().filter(|r| r.group == g).count()
    }

    /// Same data with X and Y swapped.
    pub fn relabeled(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| Observation {
                group: r.group.other(),
                ..r.clone()
            })
            .collect();
        MultiSourceDataset {
            schema: self.schema.clone(),
            rows,
        }
    }

    /// Rows reordered by `order` (a permutation of `0..len`).
    pub fn reordered(&self, order: &[usize]) -> Self {
        MultiSourceDataset {
            schema: self.schema.clone(),
            rows: order.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Rows sorted by (pattern, values, group) in a total order that does
    /// not depend on input order. Returns the sorted dataset and, for each new
    /// position, the original row index. Statistics computed on the
    /// canonical form are bitwise invariant to row shuffling.
    pub fn canonicalized(&self) -> (Self, Vec<usize>) {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by(|&a, &b| {
            let (ra, rb) = (&self.rows[a], &self.rows[b]);
            ra.pattern
                .canonical_cmp(&rb.pattern)
                .then_with(|| {
                    ra.values
                        .iter()
                        .zip(&rb.values)
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(Ordering::Equal)
                })
                .then_with(|| ra.group.cmp(&rb.group))
        });
        (self.reordered(&idx), idx)
    }

    pub fn partition(&self) -> PatternPartition {
        PatternPartition::from_dataset(self)
    }
}

/// Rows grouped by missingness pattern.
///
/// Rows are laid out pattern-major in a *local* index space: pattern α
/// occupies the contiguous range [`PatternPartition::range`]`(α)`, and
/// `order()[t]` maps local index `t` back to the dataset row. All matrices
/// downstream are indexed by local position.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternPartition {
    patterns: Vec<MissingnessPattern>,
    order: Vec<usize>,
    offsets: Vec<usize>,
    is_x: Vec<bool>,
    m_counts: Vec<usize>,
    n_counts: Vec<usize>,
    valid_pairs: Vec<(usize, usize)>,
    dropped_rows: Vec<usize>,
}

impl PatternPartition {
    pub fn from_dataset(data: &MultiSourceDataset) -> Self {
        let mut patterns: Vec<MissingnessPattern> = Vec::new();
        let mut lookup: HashMap<&MissingnessPattern, usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (i, row) in data.rows.iter().enumerate() {
            let a = *lookup.entry(&row.pattern).or_insert_with(|| {
                patterns.push(row.pattern.clone());
                members.push(Vec::new());
                patterns.len() - 1
            });
            members[a].push(i);
        }
        let groups: Vec<Group> = data.rows.iter().map(|r| r.group).collect();
        Self::build(patterns, members, &groups, Vec::new())
    }

    fn build(
        patterns: Vec<MissingnessPattern>,
        members: Vec<Vec<usize>>,
        groups: &[Group],
        dropped_rows: Vec<usize>,
    ) -> Self {
        let mut order = Vec::new();
        let mut offsets = vec![0];
        let mut m_counts = Vec::new();
        let mut n_counts = Vec::new();
        for rows in &members {
            order.extend_from_slice(rows);
            offsets.push(order.len());
            let m = rows.iter().filter(|&&i| groups[i] == Group::X).count();
            m_counts.push(m);
            n_counts.push(rows.len() - m);
        }
        let is_x = order.iter().map(|&i| groups[i] == Group::X).collect();
        let mut valid_pairs = Vec::new();
        for a in 0..patterns.len() {
            for b in a..patterns.len() {
                if patterns[a].overlaps(&patterns[b]) {
                    valid_pairs.push((a, b));
                }
            }
        }
        PatternPartition {
            patterns,
            order,
            offsets,
            is_x,
            m_counts,
            n_counts,
            valid_pairs,
            dropped_rows,
        }
    }

    /// Drops patterns with `min(m_α, n_α) < n_thres` or
    /// `N_α < p_thres * max_β N_β`.
    pub fn filter(&self, n_thres: usize, p_thres: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p_thres) {
            return Err(Error::InvalidConfig(format!(
                "p_thres must be in [0, 1), got {p_thres}"
            )));
        }
        let max_size = (0..self.n_patterns())
            .map(|a| self.size(a))
            .max()
            .unwrap_or(0);
        let keep: Vec<bool> = (0..self.n_patterns())
            .map(|a| {
                self.m(a).min(self.n(a)) >= n_thres
                    && self.size(a) as f64 >= p_thres * max_size as f64
            })
            .collect();
        if !keep.iter().any(|&k| k) {
            return Err(Error::EmptyAfterFilter);
        }
        let mut patterns = Vec::new();
        let mut members = Vec::new();
        let mut dropped = self.dropped_rows.clone();
        // Group lookup keyed by original row index.
        let n_rows = self
            .order
            .iter()
            .chain(&self.dropped_rows)
            .max()
            .map_or(0, |&m| m + 1);
        let mut groups = vec![Group::Y; n_rows];
        for (t, &i) in self.order.iter().enumerate() {
            if self.is_x[t] {
                groups[i] = Group::X;
            }
        }
        for (a, &kept) in keep.iter().enumerate() {
            let rows = self.order[self.range(a)].to_vec();
            if kept {
                patterns.push(self.patterns[a].clone());
                members.push(rows);
            } else {
                dropped.extend(rows);
            }
        }
        dropped.sort_unstable();
        let out = Self::build(patterns, members, &groups, dropped);
        if out.m_total() == 0 {
            return Err(Error::GroupVanished(Group::X));
        }
        if out.n_total() == 0 {
            return Err(Error::GroupVanished(Group::Y));
        }
        Ok(out)
    }

    /// All rows merged into one pattern, keeping local order and labels.
    /// Null moments on this partition are those of unrestricted label
    /// shuffling.
    pub fn pooled(&self) -> Self {
        let n = self.len();
        let l = self.patterns.first().map_or(0, |p| p.mask().len());
        let m = self.m_total();
        PatternPartition {
            patterns: vec![MissingnessPattern(vec![true; l])],
            order: self.order.clone(),
            offsets: vec![0, n],
            is_x: self.is_x.clone(),
            m_counts: vec![m],
            n_counts: vec![n - m],
            valid_pairs: vec![(0, 0)],
            dropped_rows: self.dropped_rows.clone(),
        }
    }

    /// Same partition with new labels (local order), keeping the layout.
    /// Used by permutation inference.
    pub fn with_labels(&self, is_x: Vec<bool>) -> Self {
        assert_eq!(is_x.len(), self.len());
        let mut out = self.clone();
        for a in 0..self.n_patterns() {
            let m = is_x[self.range(a)].iter().filter(|&&x| x).count();
            out.m_counts[a] = m;
            out.n_counts[a] = self.size(a) - m;
        }
        out.is_x = is_x;
        out
    }

    pub fn n_patterns(&self) -> usize {
        self.patterns.len()
    }

    pub fn patterns(&self) -> &[MissingnessPattern] {
        &self.patterns
    }

    pub fn pattern(&self, a: usize) -> &MissingnessPattern {
        &self.patterns[a]
    }

    /// Surviving dataset row indices in local order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Local index range of pattern `a`.
    pub fn range(&self, a: usize) -> Range<usize> {
        self.offsets[a]..self.offsets[a + 1]
    }

    /// Dataset row indices belonging to pattern `a`.
    pub fn members(&self, a: usize) -> &[usize] {
        &self.order[self.range(a)]
    }

    /// Pattern index of local position `t`.
    pub fn pattern_of(&self, t: usize) -> usize {
        self.offsets.partition_point(|&o| o <= t) - 1
    }

    /// Group labels in local order (true = X).
    pub fn is_x(&self) -> &[bool] {
        &self.is_x
    }

    pub fn m(&self, a: usize) -> usize {
        self.m_counts[a]
    }

    pub fn n(&self, a: usize) -> usize {
        self.n_counts[a]
    }

    pub fn size(&self, a: usize) -> usize {
        self.offsets[a + 1] - self.offsets[a]
    }

    pub fn m_total(&self) -> usize {
        self.m_counts.iter().sum()
    }

    pub fn n_total(&self) -> usize {
        self.n_counts.iter().sum()
    }

    /// Number of surviving rows.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Unordered overlapping pattern pairs `(α, β)`, `α <= β`, lexicographic.
    pub fn valid_pairs(&self) -> &[(usize, usize)] {
        &self.valid_pairs
    }

    pub fn overlaps(&self, a: usize, b: usize) -> bool {
        self.patterns[a].overlaps(&self.patterns[b])
    }

    /// Dataset rows removed by filtering, ascending.
    pub fn dropped_rows(&self) -> &[usize] {
        &self.dropped_rows
    }

    pub fn summary(&self) -> PartitionSummary {
        PartitionSummary {
            patterns: (0..self.n_patterns())
                .map(|a| PatternCount {
                    pattern: self.patterns[a].to_string(),
                    m: self.m(a),
                    n: self.n(a),
                    total: self.size(a),
                })
                .collect(),
            valid_pairs: self.valid_pairs.clone(),
            dropped_rows: self.dropped_rows.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCount {
    /// Mask as a 0/1 string, one character per source.
    pub pattern: String,
    pub m: usize,
    pub n: usize,
    pub total: usize,
}

/// Per-pattern counts and filtering outcome, serialized as the validation report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub patterns: Vec<PatternCount>,
    pub valid_pairs: Vec<(usize, usize)>,
    pub dropped_rows: Vec<usize>,
}
