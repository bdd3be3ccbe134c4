//! Tabular datasets, CSV ingestion and stratified (repeated) k-fold splitting.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("target column `{0}` not found in header")]
    MissingTarget(String),
    #[error("categorical column `{0}` not found in header")]
    MissingColumn(String),
    #[error("cannot parse `{value}` as a number at row {row}, column `{column}`")]
    Unparsable { row: usize, column: String, value: String },
    #[error("dataset needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("class {0} has no rows")]
    EmptyClass(usize),
    #[error("class {class} has {count} rows, fewer than k = {k}")]
    ClassTooSmall { class: usize, count: usize, k: usize },
    #[error("k must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("repeats must be at least 1, got {0}")]
    BadRepeats(usize),
    #[error("invalid split file {path}: {reason}")]
    BadSplit { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    /// Missing cells hold NaN.
    Numeric(Vec<f64>),
    /// Dictionary-encoded levels; a missing cell is its own level.
    Categorical { codes: Vec<u32>, levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
    pub missing: Vec<bool>,
}

impl Column {
    pub fn numeric(name: &str, values: Vec<f64>) -> Self {
        let missing = values.iter().map(|v| v.is_nan()).collect();
        Column { name: name.to_string(), data: ColumnData::Numeric(values), missing }
    }

    pub fn categorical(name: &str, codes: Vec<u32>, levels: Vec<String>) -> Self {
        let missing = vec![false; codes.len()];
        Column { name: name.to_string(), data: ColumnData::Categorical { codes, levels }, missing }
    }

    pub fn len(&self) -> usize {
        self.missing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.data, ColumnData::Categorical { .. })
    }

    fn take(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical { codes, levels } => {
                ColumnData::Categorical { codes: rows.iter().map(|&r| codes[r]).collect(), levels: levels.clone() }
            }
        };
        Column { name: self.name.clone(), data, missing: rows.iter().map(|&r| self.missing[r]).collect() }
    }
}

/// A classification dataset with dense integer labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub columns: Vec<Column>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: &str,
        columns: Vec<Column>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if class_names.len() < 2 {
            return Err(DataError::TooFewClasses(class_names.len()));
        }
        assert!(columns.iter().all(|c| c.len() == labels.len()), "columns must match label count");
        assert!(labels.iter().all(|&l| l < class_names.len()), "label out of range");
        Ok(Dataset { name: name.to_string(), columns, labels, class_names })
    }

    /// Numeric-only dataset from row-major features; classes are named by index.
    pub fn from_rows(name: &str, rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self, DataError> {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let n_features = rows.first().map_or(0, Vec::len);
        let columns =
            (0..n_features).map(|j| Column::numeric(&format!("x{j}"), rows.iter().map(|r| r[j]).collect())).collect();
        Self::new(name, columns, labels, (0..n_classes).map(|c| c.to_string()).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.n_classes())
    }

    /// Rows in the given order (duplicates allowed).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn labels_of(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }
}

pub fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Reads a header-row CSV file. Columns listed in `categorical_columns` are
/// dictionary-encoded, all others parsed as numbers with empty cells missing.
/// Labels are factorized in first-appearance order.
pub fn load_csv(
    path: impl AsRef<Path>,
    target_column: &str,
    categorical_columns: &[String],
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    let name = path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    parse_csv(&name, &text, target_column, categorical_columns)
}

pub fn parse_csv(
    name: &str,
    text: &str,
    target_column: &str,
    categorical_columns: &[String],
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| DataError::MissingTarget(target_column.to_string()))?;
    for c in categorical_columns {
        if !headers.contains(c) {
            return Err(DataError::MissingColumn(c.clone()));
        }
    }

    enum Builder {
        Numeric(Vec<f64>),
        Categorical { codes: Vec<u32>, index: HashMap<String, u32>, levels: Vec<String> },
    }
    let mut builders: Vec<(usize, Builder, Vec<bool>)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(i, h)| {
            let b = if categorical_columns.contains(h) {
                Builder::Categorical { codes: vec![], index: HashMap::new(), levels: vec![] }
            } else {
                Builder::Numeric(vec![])
            };
            (i, b, vec![])
        })
        .collect();

    let mut labels = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let raw_label = record.get(target_idx).unwrap_or("").trim().to_string();
        let next = class_index.len();
        let label = *class_index.entry(raw_label.clone()).or_insert_with(|| {
            class_names.push(raw_label);
            next
        });
        labels.push(label);

        for (col, builder, missing) in builders.iter_mut() {
            let cell = record.get(*col).unwrap_or("").trim();
            let is_missing = cell.is_empty();
            missing.push(is_missing);
            match builder {
                Builder::Numeric(values) => {
                    if is_missing {
                        values.push(f64::NAN);
                    } else {
                        let v: f64 = cell.parse().map_err(|_| DataError::Unparsable {
                            row: row + 1,
                            column: headers[*col].clone(),
                            value: cell.to_string(),
                        })?;
                        values.push(v);
                    }
                }
                Builder::Categorical { codes, index, levels } => {
                    let next = index.len() as u32;
                    let code = *index.entry(cell.to_string()).or_insert_with(|| {
                        levels.push(cell.to_string());
                        next
                    });
                    codes.push(code);
                }
            }
        }
    }

    let columns = builders
        .into_iter()
        .map(|(col, b, missing)| {
            let data = match b {
                Builder::Numeric(v) => ColumnData::Numeric(v),
                Builder::Categorical { codes, levels, .. } => ColumnData::Categorical { codes, levels },
            };
            Column { name: headers[col].clone(), data, missing }
        })
        .collect();

    Dataset::new(name, columns, labels, class_names)
}

/// Grows every class with fewer than `k` rows up to exactly `k` rows.
///
/// Extra rows are drawn without replacement from the class while possible
/// and with replacement for the remainder. Returns the augmented dataset and
/// the indices of the appended rows.
pub fn augment_minority_classes<R: Rng + ?Sized>(
    dataset: &Dataset,
    k: usize,
    rng: &mut R,
) -> Result<(Dataset, Vec<usize>), DataError> {
    if k < 2 {
        return Err(DataError::BadFoldCount(k));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
    for (row, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(row);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(DataError::EmptyClass(empty));
    }

    let mut source_rows: Vec<usize> = Vec::new();
    for rows in &by_class {
        if rows.len() >= k {
            continue;
        }
        let needed = k - rows.len();
        let distinct = needed.min(rows.len());
        source_rows.extend(rows.choose_multiple(rng, distinct).copied());
        for _ in distinct..needed {
            source_rows.push(rows[rng.random_range(0..rows.len())]);
        }
    }
    if source_rows.is_empty() {
        return Ok((dataset.clone(), Vec::new()));
    }

    let n = dataset.n_rows();
    let all: Vec<usize> = (0..n).chain(source_rows.iter().copied()).collect();
    let augmented = dataset.subset(&all);
    Ok((augmented, (n..n + source_rows.len()).collect()))
}

/// One (repeat, fold) pair of the inner cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// The full inner cross-validation plan, flattened repeat-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub repeats: usize,
    pub folds: Vec<Fold>,
    pub augmented_rows: Vec<usize>,
}

impl FoldPlan {
    pub fn total_folds(&self) -> usize {
        self.k * self.repeats
    }
}

/// Stratified repeated k-fold over the dataset's labels.
pub fn stratified_kfold(dataset: &Dataset, k: usize, repeats: usize, seed: u64) -> Result<FoldPlan, DataError> {
    stratified_kfold_labels(&dataset.labels, dataset.n_classes(), k, repeats, seed)
}

/// Per repeat, each class is shuffled and dealt round-robin into `k`
/// validation buckets. The dealing position carries over between classes so
/// overall fold sizes also differ by at most one.
pub fn stratified_kfold_labels(
    labels: &[usize],
    n_classes: usize,
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<FoldPlan, DataError> {
    if k < 2 {
        return Err(DataError::BadFoldCount(k));
    }
    if repeats < 1 {
        return Err(DataError::BadRepeats(repeats));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (row, &l) in labels.iter().enumerate() {
        by_class[l].push(row);
    }
    for (class, rows) in by_class.iter().enumerate() {
        if rows.len() < k {
            return Err(DataError::ClassTooSmall { class, count: rows.len(), k });
        }
    }

    let mut folds = Vec::with_capacity(k * repeats);
    for repeat in 0..repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(repeat as u64);
        let mut bucket_of = vec![0usize; labels.len()];
        let mut position = 0usize;
        for rows in &by_class {
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rng);
            for row in shuffled {
                bucket_of[row] = position % k;
                position += 1;
            }
        }
        for fold in 0..k {
            let (validation, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&r| bucket_of[r] == fold);
            folds.push(Fold { repeat, fold, train, validation });
        }
    }
    Ok(FoldPlan { k, repeats, folds, augmented_rows: Vec::new() })
}

/// Augments minority classes to `k` rows and then splits.
pub fn plan_inner_cv(dataset: &Dataset, k: usize, repeats: usize, seed: u64) -> Result<(Dataset, FoldPlan), DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let (augmented, added) = augment_minority_classes(dataset, k, &mut rng)?;
    let mut plan = stratified_kfold(&augmented, k, repeats, seed)?;
    plan.augmented_rows = added;
    Ok((augmented, plan))
}

/// One outer train/test split, as stored in split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Reads a JSON array of `{"train": [...], "test": [...]}` objects.
pub fn load_outer_splits(path: impl AsRef<Path>, n_rows: usize) -> Result<Vec<OuterSplit>, DataError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: shown.clone(), source })?;
    let splits: Vec<OuterSplit> =
        serde_json::from_str(&text).map_err(|e| DataError::BadSplit { path: shown.clone(), reason: e.to_string() })?;
    for (i, s) in splits.iter().enumerate() {
        let bad = |reason: String| DataError::BadSplit { path: shown.clone(), reason: format!("fold {i}: {reason}") };
        if s.train.is_empty() || s.test.is_empty() {
            return Err(bad("empty partition".into()));
        }
        if let Some(&r) = s.train.iter().chain(&s.test).find(|&&r| r >= n_rows) {
            return Err(bad(format!("row index {r} out of range for {n_rows} rows")));
        }
        let train: std::collections::HashSet<_> = s.train.iter().collect();
        if s.test.iter().any(|r| train.contains(r)) {
            return Err(bad("train and test overlap".into()));
        }
    }
    Ok(splits)
}

/// Generates outer splits with the stratified procedure (single repeat).
pub fn generate_outer_splits(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<OuterSplit>, DataError> {
    let plan = stratified_kfold(dataset, k, 1, seed)?;
    Ok(plan.folds.into_iter().map(|f| OuterSplit { train: f.train, test: f.validation }).collect())
}
