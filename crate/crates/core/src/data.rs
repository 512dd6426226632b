//! Categorical datasets with missing values.
//!
//! Features are stored as dense category indices; a missing slot is `None`.
//! Raw CSV tables with continuous columns go through [`discretize`], which
//! returns the [`BinningSpec`] needed to bin later tables identically.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on the number of bins a continuous column is cut into.
pub const MAX_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub cardinality: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<Feature>,
    target_name: String,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>, target_name: impl Into<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for f in &features {
            if f.cardinality < 2 {
                return Err(Error::Schema(format!(
                    "feature `{}` has cardinality {} (< 2)",
                    f.name, f.cardinality
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
        }
        Ok(Self {
            features,
            target_name: target_name.into(),
        })
    }

    /// Schema with features named `x0, x1, ...`.
    pub fn with_cardinalities(cards: &[u32], target_name: &str) -> Result<Self> {
        let features = cards
            .iter()
            .enumerate()
            .map(|(i, &c)| Feature {
                name: format!("x{i}"),
                cardinality: c,
            })
            .collect();
        Self::new(features, target_name)
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.features.iter().map(|f| f.cardinality).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Product of all cardinalities (saturating).
    pub fn joint_states(&self) -> u64 {
        self.features
            .iter()
            .fold(1u64, |acc, f| acc.saturating_mul(f.cardinality as u64))
    }
}

/// Per-feature observed category, or `None` for a missing slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartialAssignment(pub Vec<Option<u32>>);

impl PartialAssignment {
    pub fn new(values: Vec<Option<u32>>) -> Self {
        Self(values)
    }

    pub fn complete(values: &[u32]) -> Self {
        Self(values.iter().map(|&v| Some(v)).collect())
    }

    pub fn all_missing(n: usize) -> Self {
        Self(vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, feature: usize) -> Option<u32> {
        self.0[feature]
    }

    pub fn values(&self) -> &[Option<u32>] {
        &self.0
    }

    pub fn is_fully_observed(&self) -> bool {
        self.0.iter().all(Option::is_some)
    }

    pub fn missing_count(&self) -> usize {
        self.0.iter().filter(|v| v.is_none()).count()
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if self.len() != schema.len() {
            return Err(Error::DimensionMismatch {
                expected: schema.len(),
                got: self.len(),
            });
        }
        for (v, f) in self.0.iter().zip(schema.features()) {
            if let Some(v) = *v {
                if v >= f.cardinality {
                    return Err(Error::ValueOutOfRange {
                        feature: f.name.clone(),
                        value: v,
                        cardinality: f.cardinality,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub assignment: PartialAssignment,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: FeatureSchema,
    rows: Vec<Row>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, rows: Vec<Row>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            r.assignment.validate(&schema).map_err(|e| Error::Parse {
                row: i,
                message: e.to_string(),
            })?;
        }
        Ok(Self { schema, rows })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn targets(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.target).collect()
    }

    /// Drops rows whose target is missing, returning the kept dataset and
    /// the number of dropped rows.
    pub fn with_targets(&self) -> (Dataset, usize) {
        let rows: Vec<Row> = self
            .rows
            .iter()
            .filter(|r| r.target.is_some())
            .cloned()
            .collect();
        let dropped = self.rows.len() - rows.len();
        (
            Dataset {
                schema: self.schema.clone(),
                rows,
            },
            dropped,
        )
    }

    /// Same as [`Dataset::with_targets`], logging a warning when rows are dropped.
    pub fn labelled(&self) -> Dataset {
        let (ds, dropped) = self.with_targets();
        if dropped > 0 {
            log::warn!("dropped {dropped} rows with a missing target");
        }
        ds
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Fraction of feature slots that are missing.
    pub fn missing_fraction(&self) -> f64 {
        let slots = self.rows.len() * self.schema.len();
        if slots == 0 {
            return 0.0;
        }
        let missing: usize = self.rows.iter().map(|r| r.assignment.missing_count()).sum();
        missing as f64 / slots as f64
    }
}

/// Masks each feature slot independently with probability `pi`.
///
/// One uniform draw is consumed per slot, including slots that are already
/// missing, so the mask for a given seed does not depend on the input's
/// existing missingness. Targets are never masked.
pub fn inject_mcar(ds: &Dataset, pi: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::InvalidArgument(format!(
            "missingness probability {pi} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = ds
        .rows
        .iter()
        .map(|r| {
            let values = r
                .assignment
                .0
                .iter()
                .map(|&v| {
                    let u: f64 = rng.random();
                    if u < pi {
                        None
                    } else {
                        v
                    }
                })
                .collect();
            Row {
                assignment: PartialAssignment(values),
                target: r.target,
            }
        })
        .collect();
    Ok(Dataset {
        schema: ds.schema.clone(),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Raw tables and discretization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum RawValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl RawValues {
    fn len(&self) -> usize {
        match self {
            RawValues::Numeric(v) => v.len(),
            RawValues::Categorical(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub values: RawValues,
}

/// A table as read from CSV, before discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
    pub target_name: String,
    pub target: Vec<Option<f64>>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }
}

/// How CSV columns should be interpreted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaHints {
    pub target: String,
    /// Columns forced to be categorical. Other columns are numeric when every
    /// non-empty field parses as a number.
    #[serde(default)]
    pub categorical: Vec<String>,
}

impl SchemaHints {
    pub fn new(target: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            categorical: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoding {
    /// Equal-width bins. A value `v` falls in bin `#{c in cuts : c < v}`.
    Continuous { cuts: Vec<f64>, min: f64, max: f64 },
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnBinning {
    pub name: String,
    #[serde(flatten)]
    pub encoding: ColumnEncoding,
}

impl ColumnBinning {
    /// Bin count, clamped to at least 2 so a constant column still has a
    /// valid (if partly unused) categorical domain.
    pub fn cardinality(&self) -> u32 {
        let n = match &self.encoding {
            ColumnEncoding::Continuous { cuts, .. } => cuts.len() + 1,
            ColumnEncoding::Categorical { levels } => levels.len(),
        };
        n.max(2) as u32
    }

    pub fn bin(&self, v: f64) -> u32 {
        match &self.encoding {
            ColumnEncoding::Continuous { cuts, .. } => bin_index(cuts, v),
            ColumnEncoding::Categorical { .. } => v as u32,
        }
    }
}

fn bin_index(cuts: &[f64], v: f64) -> u32 {
    cuts.partition_point(|&c| c < v) as u32
}

/// Column encodings plus the target name; doubles as the schema sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub target_name: String,
    pub columns: Vec<ColumnBinning>,
}

impl BinningSpec {
    pub fn validate(&self) -> Result<()> {
        for c in &self.columns {
            if let ColumnEncoding::Continuous { cuts, .. } = &c.encoding {
                if cuts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Schema(format!(
                        "cut points of `{}` are not strictly increasing",
                        c.name
                    )));
                }
                if cuts.len() + 1 > MAX_BINS {
                    return Err(Error::Schema(format!(
                        "`{}` has {} bins, above the cap of {MAX_BINS}",
                        c.name,
                        cuts.len() + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        let features = self
            .columns
            .iter()
            .map(|c| Feature {
                name: c.name.clone(),
                cardinality: c.cardinality(),
            })
            .collect();
        FeatureSchema::new(features, self.target_name.clone())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnBinning> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Bins `raw` with these encodings. Categorical levels unseen when the
    /// spec was built become missing.
    pub fn apply(&self, raw: &RawTable) -> Result<Dataset> {
        let schema = self.schema()?;
        let n = raw.n_rows();
        let mut cols: Vec<Vec<Option<u32>>> = Vec::with_capacity(self.columns.len());
        for cb in &self.columns {
            let rc = raw
                .columns
                .iter()
                .find(|c| c.name == cb.name)
                .ok_or_else(|| Error::UnknownFeature(cb.name.clone()))?;
            let binned = match (&cb.encoding, &rc.values) {
                (ColumnEncoding::Continuous { cuts, .. }, RawValues::Numeric(vals)) => vals
                    .iter()
                    .map(|v| v.map(|x| bin_index(cuts, x)))
                    .collect(),
                (ColumnEncoding::Categorical { levels }, values) => {
                    let strings: Vec<Option<String>> = match values {
                        RawValues::Categorical(v) => v.clone(),
                        RawValues::Numeric(v) => {
                            v.iter().map(|x| x.map(|x| format!("{x}"))).collect()
                        }
                    };
                    let mut unseen = 0usize;
                    let out = strings
                        .iter()
                        .map(|s| {
                            s.as_ref().and_then(|s| {
                                let idx = levels.iter().position(|l| l == s).map(|i| i as u32);
                                if idx.is_none() {
                                    unseen += 1;
                                }
                                idx
                            })
                        })
                        .collect();
                    if unseen > 0 {
                        log::warn!(
                            "column `{}`: {unseen} unseen categories treated as missing",
                            cb.name
                        );
                    }
                    out
                }
                (ColumnEncoding::Continuous { .. }, RawValues::Categorical(_)) => {
                    return Err(Error::Schema(format!(
                        "column `{}` is continuous in the binning spec but not numeric",
                        cb.name
                    )))
                }
            };
            cols.push(binned);
        }
        let rows = (0..n)
            .map(|i| Row {
                assignment: PartialAssignment(cols.iter().map(|c| c[i]).collect()),
                target: raw.target[i],
            })
            .collect();
        Dataset::new(schema, rows)
    }
}

/// Equal-width binning of numeric columns and dense re-indexing of
/// categorical ones (levels in sorted order).
///
/// Cuts are `min + i * (max - min) / max_bins` for `i = 1..max_bins`,
/// computed over observed values. A constant column gets no cuts and a
/// cardinality of 2 whose second bin is never used.
pub fn discretize(raw: &RawTable, max_bins: usize) -> Result<(Dataset, BinningSpec)> {
    if !(2..=MAX_BINS).contains(&max_bins) {
        return Err(Error::InvalidArgument(format!(
            "max_bins must be in [2, {MAX_BINS}], got {max_bins}"
        )));
    }
    if raw.n_rows() == 0 {
        return Err(Error::InvalidArgument("empty table".into()));
    }
    let mut columns = Vec::with_capacity(raw.columns.len());
    for col in &raw.columns {
        if col.values.len() != raw.n_rows() {
            return Err(Error::Schema(format!("column `{}` has wrong length", col.name)));
        }
        let encoding = match &col.values {
            RawValues::Numeric(vals) => {
                let observed: Vec<f64> = vals.iter().flatten().copied().collect();
                if observed.is_empty() {
                    return Err(Error::ColumnFullyMissing(col.name.clone()));
                }
                let min = observed.iter().copied().fold(f64::INFINITY, f64::min);
                let max = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let cuts = if max > min {
                    let width = (max - min) / max_bins as f64;
                    (1..max_bins).map(|i| min + i as f64 * width).collect()
                } else {
                    Vec::new()
                };
                ColumnEncoding::Continuous { cuts, min, max }
            }
            RawValues::Categorical(vals) => {
                let levels: BTreeSet<&String> = vals.iter().flatten().collect();
                if levels.is_empty() {
                    return Err(Error::ColumnFullyMissing(col.name.clone()));
                }
                ColumnEncoding::Categorical {
                    levels: levels.into_iter().cloned().collect(),
                }
            }
        };
        columns.push(ColumnBinning {
            name: col.name.clone(),
            encoding,
        });
    }
    let spec = BinningSpec {
        target_name: raw.target_name.clone(),
        columns,
    };
    spec.validate()?;
    let ds = spec.apply(raw)?;
    Ok((ds, spec))
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

fn line_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

/// Reads a raw table. A header row is required and empty fields are missing.
pub fn read_raw_csv<R: Read>(reader: R, hints: &SchemaHints) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let target_idx = header
        .iter()
        .position(|h| *h == hints.target)
        .ok_or_else(|| Error::Schema(format!("target column `{}` not in header", hints.target)))?;

    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); header.len()];
    let mut target = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, i + 2);
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let field = field.trim();
            if j == target_idx {
                if field.is_empty() {
                    target.push(None);
                } else {
                    let y: f64 = field.parse().map_err(|_| Error::Parse {
                        row: line,
                        message: format!("non-numeric target `{field}`"),
                    })?;
                    target.push(Some(y));
                }
            } else {
                cells[j].push((!field.is_empty()).then(|| field.to_owned()));
            }
        }
    }

    let mut columns = Vec::new();
    for (j, name) in header.iter().enumerate() {
        if j == target_idx {
            continue;
        }
        let col = std::mem::take(&mut cells[j]);
        let forced = hints.categorical.iter().any(|c| c == name);
        let parsed: Option<Vec<Option<f64>>> = if forced {
            None
        } else {
            col.iter()
                .map(|c| match c {
                    None => Some(None),
                    Some(s) => s.parse::<f64>().ok().map(Some),
                })
                .collect()
        };
        let values = match parsed {
            Some(nums) => RawValues::Numeric(nums),
            None => RawValues::Categorical(col),
        };
        columns.push(RawColumn {
            name: name.clone(),
            values,
        });
    }
    Ok(RawTable {
        columns,
        target_name: hints.target.clone(),
        target,
    })
}

pub fn load_csv(path: impl AsRef<Path>, hints: &SchemaHints) -> Result<RawTable> {
    read_raw_csv(File::open(path)?, hints)
}

/// Reads a dataset of category indices under a known schema.
pub fn read_dataset_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut positions = Vec::with_capacity(schema.len());
    for f in schema.features() {
        let p = header
            .iter()
            .position(|h| *h == f.name)
            .ok_or_else(|| Error::Schema(format!("feature `{}` not in header", f.name)))?;
        positions.push(p);
    }
    let target_idx = header
        .iter()
        .position(|h| h == schema.target_name())
        .ok_or_else(|| {
            Error::Schema(format!("target column `{}` not in header", schema.target_name()))
        })?;

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, i + 2);
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let mut values = Vec::with_capacity(schema.len());
        for (f, &p) in schema.features().iter().zip(&positions) {
            let field = rec[p].trim();
            if field.is_empty() {
                values.push(None);
                continue;
            }
            let v: u32 = field.parse().map_err(|_| Error::Parse {
                row: line,
                message: format!("feature `{}`: `{field}` is not a category index", f.name),
            })?;
            if v >= f.cardinality {
                return Err(Error::Parse {
                    row: line,
                    message: format!(
                        "feature `{}`: index {v} out of range (cardinality {})",
                        f.name, f.cardinality
                    ),
                });
            }
            values.push(Some(v));
        }
        let field = rec[target_idx].trim();
        let target = if field.is_empty() {
            None
        } else {
            Some(field.parse::<f64>().map_err(|_| Error::Parse {
                row: line,
                message: format!("non-numeric target `{field}`"),
            })?)
        };
        rows.push(Row {
            assignment: PartialAssignment(values),
            target,
        });
    }
    Dataset::new(schema.clone(), rows)
}

pub fn load_dataset_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    read_dataset_csv(File::open(path)?, schema)
}

/// Writes category indices, with empty fields for missing slots and the
/// target in shortest round-trip float formatting.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.schema.features().iter().map(|f| f.name.as_str()).collect();
    header.push(ds.schema.target_name());
    w.write_record(&header)?;
    for r in &ds.rows {
        let mut rec: Vec<String> = r
            .assignment
            .0
            .iter()
            .map(|v| v.map(|v| v.to_string()).unwrap_or_default())
            .collect();
        rec.push(r.target.map(|y| format!("{y:?}")).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(ds, File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_table(values: Vec<Option<f64>>) -> RawTable {
        let n = values.len();
        RawTable {
            columns: vec![RawColumn {
                name: "a".into(),
                values: RawValues::Numeric(values),
            }],
            target_name: "y".into(),
            target: vec![Some(0.0); n],
        }
    }

    fn bins(ds: &Dataset) -> Vec<Option<u32>> {
        ds.rows().iter().map(|r| r.assignment.get(0)).collect()
    }

    #[test]
    fn two_bins_put_the_midpoint_low() {
        let (ds, spec) = discretize(&numeric_table(vec![Some(0.0), Some(5.0), Some(10.0)]), 2).unwrap();
        match &spec.columns[0].encoding {
            ColumnEncoding::Continuous { cuts, .. } => assert_eq!(cuts, &vec![5.0]),
            _ => panic!("expected continuous"),
        }
        assert_eq!(bins(&ds), vec![Some(0), Some(0), Some(1)]);
    }

    #[test]
    fn four_equal_width_bins() {
        let raw = numeric_table(vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)]);
        let (ds, spec) = discretize(&raw, 4).unwrap();
        // min + i * (max - min) / k with min=1, max=4, k=4
        let expected: Vec<f64> = (1..4).map(|i| 1.0 + i as f64 * 3.0 / 4.0).collect();
        assert_eq!(expected, vec![1.75, 2.5, 3.25]);
        match &spec.columns[0].encoding {
            ColumnEncoding::Continuous { cuts, .. } => assert_eq!(cuts, &expected),
            _ => panic!("expected continuous"),
        }
        assert_eq!(bins(&ds), vec![Some(0), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn categorical_levels_are_dense() {
        let raw = RawTable {
            columns: vec![RawColumn {
                name: "c".into(),
                values: RawValues::Categorical(vec![
                    Some("a".into()),
                    Some("b".into()),
                    Some("a".into()),
                ]),
            }],
            target_name: "y".into(),
            target: vec![Some(1.0); 3],
        };
        let (ds, _) = discretize(&raw, 10).unwrap();
        assert_eq!(bins(&ds), vec![Some(0), Some(1), Some(0)]);
        assert_eq!(ds.schema().features()[0].cardinality, 2);
    }

    #[test]
    fn missing_cells_survive_discretization() {
        let (ds, _) = discretize(&numeric_table(vec![Some(0.0), None, Some(10.0)]), 2).unwrap();
        assert_eq!(bins(&ds), vec![Some(0), None, Some(1)]);
    }

    #[test]
    fn fully_missing_column_is_an_error() {
        let err = discretize(&numeric_table(vec![None, None]), 4).unwrap_err();
        assert!(matches!(err, Error::ColumnFullyMissing(_)));
    }

    #[test]
    fn constant_column_gets_two_bins() {
        let (ds, spec) = discretize(&numeric_table(vec![Some(3.0), Some(3.0)]), 10).unwrap();
        assert_eq!(spec.columns[0].cardinality(), 2);
        assert_eq!(bins(&ds), vec![Some(0), Some(0)]);
    }

    #[test]
    fn bin_cap_is_enforced() {
        assert!(discretize(&numeric_table(vec![Some(1.0)]), 11).is_err());
        assert!(discretize(&numeric_table(vec![Some(1.0)]), 1).is_err());
    }

    fn small_dataset() -> Dataset {
        let schema = FeatureSchema::with_cardinalities(&[4, 4, 4], "y").unwrap();
        let rows = (0..50)
            .map(|i| Row {
                assignment: PartialAssignment::complete(&[i % 4, (i / 4) % 4, (i / 16) % 4]),
                target: Some(i as f64 * 0.5),
            })
            .collect();
        Dataset::new(schema, rows).unwrap()
    }

    #[test]
    fn mcar_extremes() {
        let ds = small_dataset();
        assert_eq!(inject_mcar(&ds, 0.0, 7).unwrap(), ds);
        let all = inject_mcar(&ds, 1.0, 7).unwrap();
        assert!(all.rows().iter().all(|r| r.assignment.missing_count() == 3));
        assert_eq!(all.targets(), ds.targets());
        assert!(inject_mcar(&ds, 1.5, 7).is_err());
    }

    #[test]
    fn mcar_rate_concentrates() {
        let schema = FeatureSchema::with_cardinalities(&[2; 10], "y").unwrap();
        let rows = (0..1000)
            .map(|_| Row {
                assignment: PartialAssignment::complete(&[1; 10]),
                target: Some(0.0),
            })
            .collect();
        let ds = Dataset::new(schema, rows).unwrap();
        let masked = inject_mcar(&ds, 0.5, 2024).unwrap();
        let frac = masked.missing_fraction();
        assert!((0.47..=0.53).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn csv_example_row() {
        let schema = FeatureSchema::with_cardinalities(&[4, 4, 4], "y").unwrap();
        let text = "x0,x1,x2,y\n1,,3,2.5\n";
        let ds = read_dataset_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(
            ds.rows()[0].assignment,
            PartialAssignment(vec![Some(1), None, Some(3)])
        );
        assert_eq!(ds.rows()[0].target, Some(2.5));
    }

    #[test]
    fn csv_short_row_names_the_row() {
        let schema = FeatureSchema::with_cardinalities(&[4, 4, 4], "y").unwrap();
        let text = "x0,x1,x2,y\n1,2,3,1.0\n1,2\n";
        match read_dataset_csv(text.as_bytes(), &schema).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn csv_bad_target_is_reported() {
        let hints = SchemaHints::new("y");
        let text = "a,y\n1.0,2\n2.0,abc\n";
        match read_raw_csv(text.as_bytes(), &hints).unwrap_err() {
            Error::Parse { row, message } => {
                assert_eq!(row, 3);
                assert!(message.contains("non-numeric target"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn raw_csv_detects_column_kinds() {
        let hints = SchemaHints::new("y");
        let text = "a,b,y\n1.5,red,1\n,blue,2\n3,red,\n";
        let raw = read_raw_csv(text.as_bytes(), &hints).unwrap();
        assert_eq!(raw.target, vec![Some(1.0), Some(2.0), None]);
        assert!(matches!(raw.columns[0].values, RawValues::Numeric(_)));
        assert!(matches!(raw.columns[1].values, RawValues::Categorical(_)));
    }

    #[test]
    fn missing_targets_are_dropped_and_counted() {
        let schema = FeatureSchema::with_cardinalities(&[2], "y").unwrap();
        let rows = vec![
            Row {
                assignment: PartialAssignment::complete(&[0]),
                target: Some(1.0),
            },
            Row {
                assignment: PartialAssignment::complete(&[1]),
                target: None,
            },
        ];
        let (kept, dropped) = Dataset::new(schema, rows).unwrap().with_targets();
        assert_eq!((kept.len(), dropped), (1, 1));
    }

    #[test]
    fn schema_rejects_bad_features() {
        assert!(FeatureSchema::with_cardinalities(&[1], "y").is_err());
        let dup = vec![
            Feature { name: "a".into(), cardinality: 2 },
            Feature { name: "a".into(), cardinality: 3 },
        ];
        assert!(FeatureSchema::new(dup, "y").is_err());
    }
}
