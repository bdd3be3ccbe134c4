//! Feature preprocessing fitted on training rows only.
//!
//! Numeric columns are imputed (mean or median) and optionally standardized.
//! Categorical columns always go through an ordinal encoder with
//! min-frequency collapsing; with one-hot encoding the ordinal codes are then
//! expanded, capped at `max_categories` output columns with an infrequent
//! bucket that also receives unseen codes.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::data::{ColumnData, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImputeStrategy {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CategoricalEncoding {
    OneHot { max_categories: usize },
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    pub impute: ImputeStrategy,
    /// Levels rarer than this training fraction collapse into one code.
    pub ordinal_min_freq: Option<f64>,
    pub encoding: CategoricalEncoding,
    pub standardize_numeric: bool,
    pub unknown_value: f64,
    pub missing_value: f64,
}

impl Default for PreprocessPlan {
    fn default() -> Self {
        PreprocessPlan {
            impute: ImputeStrategy::Mean,
            ordinal_min_freq: None,
            encoding: CategoricalEncoding::Passthrough,
            standardize_numeric: false,
            unknown_value: -1.0,
            missing_value: -2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ColumnSchema {
    name: String,
    categorical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FittedColumn {
    Numeric {
        fill: f64,
        /// `(mean, std)` applied after imputation.
        scale: Option<(f64, f64)>,
    },
    Categorical {
        /// Dataset level code → ordinal code.
        ordinal: HashMap<u32, i64>,
        onehot: Option<OneHotState>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OneHotState {
    /// Ordinal codes with their own output column, in output order.
    kept: Vec<i64>,
    has_infrequent: bool,
}

impl OneHotState {
    fn width(&self) -> usize {
        self.kept.len() + usize::from(self.has_infrequent)
    }
}

/// Preprocessing statistics learned from a training partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPreprocessor {
    plan: PreprocessPlan,
    schema: Vec<ColumnSchema>,
    columns: Vec<FittedColumn>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl FittedPreprocessor {
    pub fn fit(plan: &PreprocessPlan, train: &Dataset) -> Self {
        let n = train.n_rows() as f64;
        let mut columns = Vec::with_capacity(train.n_features());
        let mut schema = Vec::with_capacity(train.n_features());
        for col in &train.columns {
            schema.push(ColumnSchema { name: col.name.clone(), categorical: col.is_categorical() });
            match &col.data {
                ColumnData::Numeric(values) => {
                    let mut present: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
                    let fill = if present.is_empty() {
                        0.0
                    } else {
                        match plan.impute {
                            ImputeStrategy::Mean => present.iter().sum::<f64>() / present.len() as f64,
                            ImputeStrategy::Median => median(&mut present),
                        }
                    };
                    let scale = plan.standardize_numeric.then(|| {
                        let filled: Vec<f64> = values.iter().map(|&v| if v.is_nan() { fill } else { v }).collect();
                        let mean = filled.iter().sum::<f64>() / n.max(1.0);
                        let var = filled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1.0);
                        let std = var.sqrt();
                        (mean, if std > 0.0 { std } else { 1.0 })
                    });
                    columns.push(FittedColumn::Numeric { fill, scale });
                }
                ColumnData::Categorical { codes, levels } => {
                    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
                    for (&c, &miss) in codes.iter().zip(&col.missing) {
                        if !miss {
                            *counts.entry(c).or_default() += 1;
                        }
                    }
                    let threshold = plan.ordinal_min_freq.map_or(0.0, |f| f * n);
                    let mut frequent: Vec<u32> =
                        counts.iter().filter(|(_, &cnt)| cnt as f64 >= threshold).map(|(&c, _)| c).collect();
                    frequent.sort_by(|a, b| levels[*a as usize].cmp(&levels[*b as usize]));
                    let mut ordinal: HashMap<u32, i64> =
                        frequent.iter().enumerate().map(|(i, &c)| (c, i as i64)).collect();
                    let infrequent_code = frequent.len() as i64;
                    for &c in counts.keys() {
                        ordinal.entry(c).or_insert(infrequent_code);
                    }

                    let onehot = match plan.encoding {
                        CategoricalEncoding::Passthrough => None,
                        CategoricalEncoding::OneHot { max_categories } => {
                            let missing_code = plan.missing_value as i64;
                            let mut code_counts: BTreeMap<i64, usize> = BTreeMap::new();
                            for (&c, &miss) in codes.iter().zip(&col.missing) {
                                let code = if miss { missing_code } else { ordinal[&c] };
                                *code_counts.entry(code).or_default() += 1;
                            }
                            let mut by_freq: Vec<(i64, usize)> = code_counts.into_iter().collect();
                            let max_categories = max_categories.max(1);
                            if by_freq.len() > max_categories {
                                by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                                let mut kept: Vec<i64> =
                                    by_freq[..max_categories - 1].iter().map(|(c, _)| *c).collect();
                                kept.sort_unstable();
                                Some(OneHotState { kept, has_infrequent: true })
                            } else {
                                Some(OneHotState {
                                    kept: by_freq.iter().map(|(c, _)| *c).collect(),
                                    has_infrequent: false,
                                })
                            }
                        }
                    };
                    columns.push(FittedColumn::Categorical { ordinal, onehot });
                }
            }
        }
        FittedPreprocessor { plan: plan.clone(), schema, columns }
    }

    pub fn output_width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                FittedColumn::Numeric { .. } => 1,
                FittedColumn::Categorical { onehot: None, .. } => 1,
                FittedColumn::Categorical { onehot: Some(h), .. } => h.width(),
            })
            .sum()
    }

    fn check_schema(&self, data: &Dataset) -> Result<(), LearnerError> {
        let same = data.columns.len() == self.schema.len()
            && data
                .columns
                .iter()
                .zip(&self.schema)
                .all(|(c, s)| c.name == s.name && c.is_categorical() == s.categorical);
        if same {
            Ok(())
        } else {
            Err(LearnerError::SchemaMismatch)
        }
    }

    pub fn transform(&self, data: &Dataset) -> Result<Array2<f64>, LearnerError> {
        self.check_schema(data)?;
        let n = data.n_rows();
        let mut out = Array2::<f64>::zeros((n, self.output_width()));
        let mut offset = 0;
        for (col, fitted) in data.columns.iter().zip(&self.columns) {
            match (&col.data, fitted) {
                (ColumnData::Numeric(values), FittedColumn::Numeric { fill, scale }) => {
                    for (r, &v) in values.iter().enumerate() {
                        let mut x = if v.is_nan() { *fill } else { v };
                        if let Some((mean, std)) = scale {
                            x = (x - mean) / std;
                        }
                        out[[r, offset]] = x;
                    }
                    offset += 1;
                }
                (ColumnData::Categorical { codes, .. }, FittedColumn::Categorical { ordinal, onehot }) => {
                    let missing_code = self.plan.missing_value as i64;
                    let unknown_code = self.plan.unknown_value as i64;
                    let encoded = codes.iter().zip(&col.missing).map(|(c, &miss)| {
                        if miss {
                            missing_code
                        } else {
                            ordinal.get(c).copied().unwrap_or(unknown_code)
                        }
                    });
                    match onehot {
                        None => {
                            for (r, code) in encoded.enumerate() {
                                out[[r, offset]] = code as f64;
                            }
                            offset += 1;
                        }
                        Some(h) => {
                            for (r, code) in encoded.enumerate() {
                                match h.kept.iter().position(|&k| k == code) {
                                    Some(j) => out[[r, offset + j]] = 1.0,
                                    None if h.has_infrequent => out[[r, offset + h.kept.len()]] = 1.0,
                                    None => {}
                                }
                            }
                            offset += h.width();
                        }
                    }
                }
                _ => return Err(LearnerError::SchemaMismatch),
            }
        }
        Ok(out)
    }
}
