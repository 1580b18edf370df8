//! Datasets: benchmark generation, CSV ingestion, splits, noise, resampling.
//!
//! A [`Dataset`] is an immutable n-by-d input matrix with named variables, a
//! target vector, and disjoint train / in-distribution test /
//! out-of-distribution test index lists. Generated datasets ship as a CSV of
//! raw rows plus a JSON sidecar carrying names, units, split indices, seed,
//! and noise level, so a run directory is self-describing.
//!
//! Out-of-distribution protocol: trajectory benchmarks put the final 30% of
//! simulated time out of distribution; direct-evaluation benchmarks reserve
//! the outer 15% of each input variable's range (7.5% per edge), sampling
//! train/ID points from the inner box only.

mod benchmarks;
mod ode;

pub use benchmarks::{
    crk0_rhs, ecoli_rhs, generate, ground_truth_expression, oscillator1_rhs, oscillator2_rhs,
    oscillator_mode_temperature_rhs, wave_intensity_rhs, Benchmark, EcoliParams, GeneratorSpec,
    OdeSettings, OSCILLATOR_T_MAX,
};
pub use ode::{rk4, Trajectory};

use crate::expr::{is_valid_variable_name, InputMatrix};
use crate::seeding::mix_seed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("csv error at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("integration failed at t={time}: {message}")]
    Generation { time: f64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("metadata error: {0}")]
    Meta(#[from] serde_json::Error),
}

/// One input variable: grammar identifier, unit, free-text description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub description: String,
}

impl Variable {
    pub fn new(name: &str, unit: &str, description: &str) -> Self {
        Variable { name: name.into(), unit: unit.into(), description: description.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    IdTest,
    OodTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::IdTest, Split::OodTest];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::IdTest => "id_test",
            Split::OodTest => "ood_test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Disjoint row-index lists for the three splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub id_test: Vec<usize>,
    pub ood_test: Vec<usize>,
}

impl SplitIndices {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::IdTest => &self.id_test,
            Split::OodTest => &self.ood_test,
        }
    }
}

/// Sidecar metadata persisted next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    #[serde(default)]
    pub benchmark: Option<String>,
    pub variables: Vec<Variable>,
    pub target_name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Default relative-error threshold for tolerance accuracy on this task.
    pub default_tau: f64,
    pub splits: SplitIndices,
}

/// Immutable tabular dataset with named variables and split assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    x: InputMatrix,
    y: Vec<f64>,
}

impl Dataset {
    /// Validate and assemble a dataset. Checks: finite values, distinct
    /// grammar-valid variable names, disjoint in-range splits, non-empty
    /// train split.
    pub fn new(meta: DatasetMeta, x: InputMatrix, y: Vec<f64>) -> Result<Self, DataError> {
        let n = x.rows();
        if y.len() != n {
            return Err(DataError::Invalid(format!(
                "target vector has {} entries for {} rows",
                y.len(),
                n
            )));
        }
        if x.cols() != meta.variables.len() {
            return Err(DataError::Invalid(format!(
                "{} columns for {} declared variables",
                x.cols(),
                meta.variables.len()
            )));
        }
        for (i, v) in meta.variables.iter().enumerate() {
            if !is_valid_variable_name(&v.name) {
                return Err(DataError::Invalid(format!("variable `{}` is not a valid identifier", v.name)));
            }
            if meta.variables[..i].iter().any(|o| o.name == v.name) {
                return Err(DataError::Invalid(format!("duplicate variable `{}`", v.name)));
            }
        }
        if meta.target_name.is_empty() {
            return Err(DataError::Invalid("empty target name".into()));
        }
        if meta.variables.iter().any(|v| v.name == meta.target_name) {
            return Err(DataError::Invalid(format!(
                "target `{}` collides with an input variable",
                meta.target_name
            )));
        }
        for (i, target) in y.iter().enumerate() {
            if x.row(i).iter().any(|v| !v.is_finite()) {
                return Err(DataError::Invalid(format!("non-finite input at row {i}")));
            }
            if !target.is_finite() {
                return Err(DataError::Invalid(format!("non-finite target at row {i}")));
            }
        }
        if meta.splits.train.is_empty() {
            return Err(DataError::Invalid("train split is empty".into()));
        }
        let mut seen = vec![false; n];
        for split in Split::ALL {
            for &i in meta.splits.get(split) {
                if i >= n {
                    return Err(DataError::Invalid(format!("split index {i} out of range (n={n})")));
                }
                if seen[i] {
                    return Err(DataError::Invalid(format!("row {i} assigned to two splits")));
                }
                seen[i] = true;
            }
        }
        if meta.default_tau.is_nan() || meta.default_tau <= 0.0 {
            return Err(DataError::Invalid("default_tau must be positive".into()));
        }
        Ok(Dataset { meta, x, y })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }

    pub fn target_name(&self) -> &str {
        &self.meta.target_name
    }

    pub fn default_tau(&self) -> f64 {
        self.meta.default_tau
    }

    pub fn variables(&self) -> &[Variable] {
        &self.meta.variables
    }

    pub fn variable_names(&self) -> Vec<&str> {
        self.meta.variables.iter().map(|v| v.name.as_str()).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn n_vars(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &InputMatrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn split_indices(&self, split: Split) -> &[usize] {
        self.meta.splits.get(split)
    }

    /// Input rows of one split, in split order.
    pub fn inputs(&self, split: Split) -> InputMatrix {
        self.x.select_rows(self.meta.splits.get(split))
    }

    /// Target values of one split, in split order.
    pub fn targets(&self, split: Split) -> Vec<f64> {
        self.meta.splits.get(split).iter().map(|&i| self.y[i]).collect()
    }

    /// Write `<base>.csv` and `<base>.meta.json`.
    pub fn save(&self, csv_path: &Path, meta_path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        let mut header: Vec<&str> = self.meta.variables.iter().map(|v| v.name.as_str()).collect();
        header.push(&self.meta.target_name);
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.n_rows() {
            let mut fields: Vec<String> = self.x.row(i).iter().map(|v| format!("{v}")).collect();
            fields.push(format!("{}", self.y[i]));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        std::fs::write(csv_path, out)?;
        std::fs::write(meta_path, serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    /// Load a dataset previously written by [`Dataset::save`].
    pub fn load(csv_path: &Path, meta_path: &Path) -> Result<Self, DataError> {
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(meta_path)?)?;
        let (x, y) = read_csv(csv_path, &meta.variables, &meta.target_name)?;
        Dataset::new(meta, x, y)
    }
}

/// How [`load_csv`] assigns rows to splits.
#[derive(Debug, Clone)]
pub enum SplitPolicy {
    /// First `n_train` rows train, next `n_id` in-distribution, rest OOD.
    Sequential { n_train: usize, n_id: usize },
    /// Rows with any input variable in the outer 15% of its observed range
    /// form the OOD pool; the inner rows are shuffled (seeded) into train/ID.
    OuterBandOod { n_train: usize, n_id: usize, n_ood: usize, seed: u64 },
}

/// Parse a CSV whose header matches `schema` names followed by `target_name`,
/// and assign splits per `policy`.
pub fn load_csv(
    path: &Path,
    schema: &[Variable],
    target_name: &str,
    policy: &SplitPolicy,
    name: &str,
    default_tau: f64,
) -> Result<Dataset, DataError> {
    let (x, y) = read_csv(path, schema, target_name)?;
    let n = x.rows();
    let splits = match policy {
        SplitPolicy::Sequential { n_train, n_id } => {
            if n_train + n_id > n {
                return Err(DataError::Invalid(format!(
                    "split sizes {n_train}+{n_id} exceed {n} rows"
                )));
            }
            SplitIndices {
                train: (0..*n_train).collect(),
                id_test: (*n_train..n_train + n_id).collect(),
                ood_test: (n_train + n_id..n).collect(),
            }
        }
        SplitPolicy::OuterBandOod { n_train, n_id, n_ood, seed } => {
            outer_band_splits(&x, *n_train, *n_id, *n_ood, *seed)?
        }
    };
    let meta = DatasetMeta {
        name: name.to_string(),
        benchmark: None,
        variables: schema.to_vec(),
        target_name: target_name.to_string(),
        seed: None,
        noise_sigma: 0.0,
        default_tau,
        splits,
    };
    Dataset::new(meta, x, y)
}

fn read_csv(
    path: &Path,
    schema: &[Variable],
    target_name: &str,
) -> Result<(InputMatrix, Vec<f64>), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => DataError::Io(io),
            other => DataError::Csv { line: 1, message: format!("{other:?}") },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Csv { line: 1, message: e.to_string() })?
        .clone();
    let mut expected: Vec<&str> = schema.iter().map(|v| v.name.as_str()).collect();
    expected.push(target_name);
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(DataError::Schema(format!(
            "header is [{}], expected [{}]",
            got.join(","),
            expected.join(",")
        )));
    }
    let d = schema.len();
    let mut data = Vec::new();
    let mut y = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let line = rec_idx + 2; // one-based, after the header
        let record = record.map_err(|e| DataError::Csv { line, message: e.to_string() })?;
        if record.len() != d + 1 {
            return Err(DataError::Csv {
                line,
                message: format!("{} fields, expected {}", record.len(), d + 1),
            });
        }
        let mut row = Vec::with_capacity(d + 1);
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| DataError::Csv {
                line,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Csv { line, message: format!("non-finite value `{field}`") });
            }
            row.push(v);
        }
        y.push(row.pop().unwrap());
        data.extend_from_slice(&row);
    }
    let n = y.len();
    Ok((InputMatrix::new(n, d, data), y))
}

/// Classify rows by the outer 15% band (7.5% per edge) of every input
/// variable's observed range, then draw the requested split sizes.
fn outer_band_splits(
    x: &InputMatrix,
    n_train: usize,
    n_id: usize,
    n_ood: usize,
    seed: u64,
) -> Result<SplitIndices, DataError> {
    let n = x.rows();
    let d = x.cols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..n {
        for (j, &v) in x.row(i).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let mut inner = Vec::new();
    let mut outer = Vec::new();
    for i in 0..n {
        let is_outer = x.row(i).iter().enumerate().any(|(j, &v)| {
            let span = hi[j] - lo[j];
            span > 0.0 && (v < lo[j] + 0.075 * span || v > hi[j] - 0.075 * span)
        });
        if is_outer {
            outer.push(i);
        } else {
            inner.push(i);
        }
    }
    if n_train + n_id > inner.len() {
        return Err(DataError::Invalid(format!(
            "requested {} train/ID rows but only {} inner rows exist",
            n_train + n_id,
            inner.len()
        )));
    }
    if n_ood > outer.len() {
        return Err(DataError::Invalid(format!(
            "requested {} OOD rows but only {} outer-band rows exist",
            n_ood,
            outer.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "csv_split", &[]));
    let picked = rand::seq::index::sample(&mut rng, inner.len(), n_train + n_id);
    let mut train: Vec<usize> = picked.iter().take(n_train).map(|k| inner[k]).collect();
    let mut id: Vec<usize> = picked.iter().skip(n_train).map(|k| inner[k]).collect();
    let picked_ood = rand::seq::index::sample(&mut rng, outer.len(), n_ood);
    let mut ood: Vec<usize> = picked_ood.iter().map(|k| outer[k]).collect();
    train.sort_unstable();
    id.sort_unstable();
    ood.sort_unstable();
    Ok(SplitIndices { train, id_test: id, ood_test: ood })
}

/// One resampled observation; `residual` is present iff residuals were
/// supplied to [`resample`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledRow {
    pub x: Vec<f64>,
    pub y: f64,
    pub residual: Option<f64>,
}

/// A uniform i.i.d. (with replacement) sample of the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledView {
    pub rows: Vec<ResampledRow>,
    pub seed: u64,
}

/// Draw `size` rows i.i.d. uniformly (with replacement) from the train split.
///
/// `size` is clamped to the train-split length, so small datasets yield a
/// full-coverage view instead of failing. `residuals`, when given, must have
/// one entry per train row in split order.
pub fn resample(
    data: &Dataset,
    residuals: Option<&[f64]>,
    size: usize,
    seed: u64,
) -> Result<ResampledView, DataError> {
    if size == 0 {
        return Err(DataError::Invalid("resample size must be positive".into()));
    }
    let train = data.split_indices(Split::Train);
    if let Some(res) = residuals {
        assert_eq!(res.len(), train.len(), "residuals must cover the train split");
    }
    let size = size.min(train.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(size);
    for _ in 0..size {
        let k = rng.random_range(0..train.len());
        let i = train[k];
        rows.push(ResampledRow {
            x: data.x().row(i).to_vec(),
            y: data.y()[i],
            residual: residuals.map(|r| r[k]),
        });
    }
    Ok(ResampledView { rows, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_meta(n: usize) -> DatasetMeta {
        DatasetMeta {
            name: "toy".into(),
            benchmark: None,
            variables: vec![Variable::new("x", "1", "input")],
            target_name: "y".into(),
            seed: Some(0),
            noise_sigma: 0.0,
            default_tau: 0.1,
            splits: SplitIndices {
                train: (0..n - 2).collect(),
                id_test: vec![n - 2],
                ood_test: vec![n - 1],
            },
        }
    }

    fn small_dataset() -> Dataset {
        let n = 6;
        let x = InputMatrix::new(n, 1, (0..n).map(|i| i as f64).collect());
        let y: Vec<f64> = (0..n).map(|i| 2.0 * i as f64).collect();
        Dataset::new(small_meta(n), x, y).unwrap()
    }

    #[test]
    fn validation_rejects_overlapping_splits() {
        let mut meta = small_meta(6);
        meta.splits.id_test = vec![0];
        let x = InputMatrix::new(6, 1, (0..6).map(|i| i as f64).collect());
        let err = Dataset::new(meta, x, vec![0.0; 6]).unwrap_err();
        assert!(matches!(err, DataError::Invalid(_)));
    }

    #[test]
    fn validation_rejects_reserved_variable_names() {
        let mut meta = small_meta(3);
        meta.variables = vec![Variable::new("sin", "1", "")];
        let x = InputMatrix::new(3, 1, vec![0.0, 1.0, 2.0]);
        assert!(Dataset::new(meta, x, vec![0.0; 3]).is_err());
    }

    #[test]
    fn validation_rejects_non_finite() {
        let mut y = vec![0.0; 6];
        y[3] = f64::NAN;
        let x = InputMatrix::new(6, 1, (0..6).map(|i| i as f64).collect());
        assert!(Dataset::new(small_meta(6), x, y).is_err());
    }

    #[test]
    fn save_load_round_trips() {
        let dir = tempdir().unwrap();
        let csv = dir.path().join("toy.csv");
        let meta = dir.path().join("toy.meta.json");
        let d = small_dataset();
        d.save(&csv, &meta).unwrap();
        let back = Dataset::load(&csv, &meta).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn load_csv_sequential_policy() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "x,y\n1,2\n3,4\n5,6\n").unwrap();
        let schema = vec![Variable::new("x", "1", "")];
        let d = load_csv(&p, &schema, "y", &SplitPolicy::Sequential { n_train: 2, n_id: 1 }, "t", 0.1)
            .unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.targets(Split::Train), vec![2.0, 4.0]);
    }

    #[test]
    fn load_csv_reports_line_numbers() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "x,y\n1,2\n3,NaN\n").unwrap();
        let schema = vec![Variable::new("x", "1", "")];
        let err =
            load_csv(&p, &schema, "y", &SplitPolicy::Sequential { n_train: 1, n_id: 1 }, "t", 0.1)
                .unwrap_err();
        match err {
            DataError::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_header_mismatch() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "a,y\n1,2\n").unwrap();
        let schema = vec![Variable::new("x", "1", "")];
        let err =
            load_csv(&p, &schema, "y", &SplitPolicy::Sequential { n_train: 1, n_id: 0 }, "t", 0.1)
                .unwrap_err();
        assert!(matches!(err, DataError::Schema(_)));
    }

    #[test]
    fn resample_is_deterministic_and_clamped() {
        let d = small_dataset();
        let a = resample(&d, None, 100, 9).unwrap();
        let b = resample(&d, None, 100, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), d.split_indices(Split::Train).len()); // clamped to 4
        assert!(a.rows.iter().all(|r| r.residual.is_none()));
        assert!(resample(&d, None, 0, 9).is_err());
    }

    #[test]
    fn resample_carries_residuals() {
        let d = small_dataset();
        let res: Vec<f64> = d.targets(Split::Train); // residuals of f == 0
        let view = resample(&d, Some(&res), 3, 5).unwrap();
        for row in &view.rows {
            assert_eq!(row.residual.unwrap(), row.y);
        }
    }

    #[test]
    fn resample_draws_within_train_split() {
        let d = small_dataset();
        let view = resample(&d, None, 4, 123).unwrap();
        let train_xs: Vec<f64> =
            d.split_indices(Split::Train).iter().map(|&i| d.x().get(i, 0)).collect();
        for row in &view.rows {
            assert!(train_xs.contains(&row.x[0]));
        }
    }
}
