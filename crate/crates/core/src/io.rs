//! CSV ingestion with a JSON schema sidecar.
//!
//! The CSV has a header, one `group` column holding `X` or `Y`, and one
//! column per feature. Empty cells, `NA` and `NaN` are missing. The sidecar
//! lists sources and their columns:
//!
//! ```json
//! {"sources": [{"name": "lab", "columns": ["crp", "pct"]},
//!              {"name": "vitals", "columns": ["hr"]}]}
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Group, MultiSourceDataset, SourceSchema};
use crate::error::{Error, Result};

pub const GROUP_COLUMN: &str = "group";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub sources: Vec<SourceSpec>,
}

impl SchemaFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_schema(&self) -> Result<SourceSchema> {
        SourceSchema::new(
            self.sources
                .iter()
                .map(|s| (s.name.clone(), s.columns.len())),
        )
    }

    fn columns(&self) -> impl Iterator<Item = &str> {
        self.sources
            .iter()
            .flat_map(|s| s.columns.iter().map(String::as_str))
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "NaN" | "nan")
}

fn parse_group(cell: &str, row: usize) -> Result<Group> {
    match cell.trim() {
        "X" | "x" => Ok(Group::X),
        "Y" | "y" => Ok(Group::Y),
        other => Err(Error::NonNumericValue {
            row,
            column: GROUP_COLUMN.into(),
            value: other.into(),
        }),
    }
}

/// Reads `csv_path` using the sources declared in `schema_path`.
pub fn ingest(csv_path: &Path, schema_path: &Path) -> Result<MultiSourceDataset> {
    let spec = SchemaFile::read(schema_path)?;
    ingest_with(std::fs::File::open(csv_path)?, &spec)
}

/// Reads CSV from any reader.
pub fn ingest_with<R: std::io::Read>(reader: R, spec: &SchemaFile) -> Result<MultiSourceDataset> {
    let schema = spec.to_schema()?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let position: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    if position.len() != header.len() {
        return Err(Error::SchemaMismatch("duplicate CSV column names".into()));
    }
    let group_at = *position
        .get(GROUP_COLUMN)
        .ok_or_else(|| Error::SchemaMismatch(format!("missing `{GROUP_COLUMN}` column")))?;
    let mut cols = Vec::with_capacity(schema.total_dim());
    for c in spec.columns() {
        cols.push(
            *position
                .get(c)
                .ok_or_else(|| Error::SchemaMismatch(format!("schema column `{c}` not in CSV")))?,
        );
    }
    if header.len() != cols.len() + 1 {
        let known: Vec<&str> = spec.columns().chain([GROUP_COLUMN]).collect();
        let extra: Vec<&str> = header
            .iter()
            .map(String::as_str)
            .filter(|h| !known.contains(h))
            .collect();
        return Err(Error::SchemaMismatch(format!(
            "CSV columns not in schema: {extra:?}"
        )));
    }

    let mut groups = Vec::new();
    let mut rows = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        groups.push(parse_group(&record[group_at], row)?);
        let mut values = Vec::with_capacity(cols.len());
        for &c in &cols {
            let cell = &record[c];
            if is_missing(cell) {
                values.push(f64::NAN);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::NonNumericValue {
                        row,
                        column: header[c].clone(),
                        value: cell.into(),
                    })
                }
            }
        }
        rows.push(values);
    }
    MultiSourceDataset::from_nan_rows(schema, &groups, &rows)
}
