//! Trainable pipelines: preprocessing followed by an MLP or a random forest.

pub mod mlp;
pub mod preprocess;
pub mod tree;

use std::sync::atomic::AtomicBool;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::searchspace::{names, Configuration, ParamValue, MLP_SPACE, RF_SPACE};
use mlp::{Activation, LearningRateSchedule, Mlp, MlpParams};
use preprocess::{CategoricalEncoding, FittedPreprocessor, ImputeStrategy, PreprocessPlan};
use tree::{ClassWeight, Criterion, ForestParams, RandomForestClassifier};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("configuration belongs to space `{found}`, expected `{expected}`")]
    SpaceMismatch { expected: String, found: String },
    #[error("unknown space `{0}`")]
    UnknownSpace(String),
    #[error("configuration parameter `{0}` is missing or has the wrong type")]
    BadParameter(String),
    #[error("training partition contains a single class")]
    SingleClass,
    #[error("training loss became non-finite")]
    NonFiniteLoss,
    #[error("feature schema does not match the fitted schema")]
    SchemaMismatch,
    #[error("training was cancelled")]
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Mlp(MlpParams),
    Forest(ForestParams),
}

/// An unfitted preprocessing + model pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub preprocess: PreprocessPlan,
    pub model: ModelSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedEstimator {
    Mlp(Mlp),
    Forest(RandomForestClassifier),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub preprocess: FittedPreprocessor,
    pub estimator: FittedEstimator,
    pub n_classes: usize,
}

struct Params<'a>(&'a Configuration);

impl Params<'_> {
    fn value(&self, name: &str) -> Result<&ParamValue, LearnerError> {
        self.0.get(name).ok_or_else(|| LearnerError::BadParameter(name.to_string()))
    }

    fn f64(&self, name: &str) -> Result<f64, LearnerError> {
        self.value(name)?.as_f64().ok_or_else(|| LearnerError::BadParameter(name.to_string()))
    }

    fn usize(&self, name: &str) -> Result<usize, LearnerError> {
        self.value(name)?
            .as_i64()
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| LearnerError::BadParameter(name.to_string()))
    }

    fn str(&self, name: &str) -> Result<&str, LearnerError> {
        self.value(name)?.as_str().ok_or_else(|| LearnerError::BadParameter(name.to_string()))
    }

    fn bool(&self, name: &str) -> Result<bool, LearnerError> {
        self.value(name)?.as_bool().ok_or_else(|| LearnerError::BadParameter(name.to_string()))
    }

    fn bad(name: &str) -> LearnerError {
        LearnerError::BadParameter(name.to_string())
    }

    fn preprocess(&self, standardize_numeric: bool) -> Result<PreprocessPlan, LearnerError> {
        let impute = match self.str(names::IMPUTER_STRATEGY)? {
            "mean" => ImputeStrategy::Mean,
            "median" => ImputeStrategy::Median,
            _ => return Err(Self::bad(names::IMPUTER_STRATEGY)),
        };
        let encoding = match self.str(names::CAT_CHOICE)? {
            "OneHot" => CategoricalEncoding::OneHot { max_categories: self.usize(names::ONEHOT_MAX_CATEGORIES)? },
            "passthrough" => CategoricalEncoding::Passthrough,
            _ => return Err(Self::bad(names::CAT_CHOICE)),
        };
        let ordinal_min_freq = match self.0.get(names::ORDINAL_MIN_FREQ) {
            Some(v) => Some(v.as_f64().ok_or_else(|| Self::bad(names::ORDINAL_MIN_FREQ))?),
            None => None,
        };
        Ok(PreprocessPlan {
            impute,
            ordinal_min_freq,
            encoding,
            standardize_numeric,
            unknown_value: self.f64(names::ORDINAL_UNKNOWN_VALUE)?,
            missing_value: self.f64(names::ORDINAL_MISSING_VALUE)?,
        })
    }
}

/// Resolves a configuration of the named built-in space into a pipeline.
pub fn instantiate(space_name: &str, config: &Configuration, model_seed: u64) -> Result<Pipeline, LearnerError> {
    if config.space != space_name {
        return Err(LearnerError::SpaceMismatch { expected: space_name.to_string(), found: config.space.clone() });
    }
    let p = Params(config);
    match space_name {
        MLP_SPACE => {
            let depth = p.usize("hidden_layer_depth")?;
            let width = p.usize("num_nodes_per_layer")?;
            let activation = match p.str("activation")? {
                "relu" => Activation::Relu,
                "tanh" => Activation::Tanh,
                _ => return Err(Params::bad("activation")),
            };
            let schedule = match p.str("learning_rate")? {
                "constant" => LearningRateSchedule::Constant,
                "invscaling" => LearningRateSchedule::InvScaling,
                "adaptive" => LearningRateSchedule::Adaptive,
                _ => return Err(Params::bad("learning_rate")),
            };
            let batch_size = match p.value("batch_size")? {
                ParamValue::Str(s) if s == "auto" => None,
                ParamValue::Int(b) if *b > 0 => Some(*b as usize),
                _ => return Err(Params::bad("batch_size")),
            };
            let params = MlpParams {
                hidden_layers: vec![width; depth],
                activation,
                alpha: p.f64("alpha")?,
                learning_rate_init: p.f64("learning_rate_init")?,
                schedule,
                early_stopping: p.bool("early_stopping")?,
                validation_fraction: p.f64("validation_fraction")?,
                n_iter_no_change: p.usize("n_iter_no_change")?,
                tol: p.f64("tol")?,
                max_iter: p.usize("max_iter")?,
                beta_1: p.f64("beta_1")?,
                beta_2: p.f64("beta_2")?,
                epsilon: p.f64("epsilon")?,
                shuffle: p.bool("shuffle")?,
                batch_size,
            };
            Ok(Pipeline { preprocess: p.preprocess(true)?, model: ModelSpec::Mlp(params), seed: model_seed })
        }
        RF_SPACE => {
            let class_weight = match p.str("class_weight")? {
                "balanced" => ClassWeight::Balanced,
                "balanced_subsample" => ClassWeight::BalancedSubsample,
                "None" => ClassWeight::Uniform,
                _ => return Err(Params::bad("class_weight")),
            };
            let criterion = match p.str("criterion")? {
                "gini" => Criterion::Gini,
                "entropy" => Criterion::Entropy,
                _ => return Err(Params::bad("criterion")),
            };
            let max_depth = match p.value("max_depth")? {
                ParamValue::Str(s) if s == "None" => None,
                ParamValue::Int(d) if *d > 0 => Some(*d as usize),
                _ => return Err(Params::bad("max_depth")),
            };
            let params = ForestParams {
                n_estimators: p.usize("n_estimators")?,
                bootstrap: p.bool("bootstrap")?,
                class_weight,
                criterion,
                max_features: p.f64("max_features")?,
                min_samples_split: p.usize("min_samples_split")?,
                min_samples_leaf: p.usize("min_samples_leaf")?,
                min_impurity_decrease: p.f64("min_impurity_decrease")?,
                max_depth,
            };
            Ok(Pipeline { preprocess: p.preprocess(false)?, model: ModelSpec::Forest(params), seed: model_seed })
        }
        other => Err(LearnerError::UnknownSpace(other.to_string())),
    }
}

/// Fits preprocessing and model on `train`. Deterministic given the pipeline seed.
pub fn fit(pipeline: &Pipeline, train: &Dataset, cancel: Option<&AtomicBool>) -> Result<FittedModel, LearnerError> {
    let n_classes = train.n_classes();
    if train.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(LearnerError::SingleClass);
    }
    let preprocess = FittedPreprocessor::fit(&pipeline.preprocess, train);
    let x = preprocess.transform(train)?;
    let estimator = match &pipeline.model {
        ModelSpec::Mlp(params) => {
            FittedEstimator::Mlp(mlp::train(&x, &train.labels, n_classes, params, pipeline.seed, cancel)?)
        }
        ModelSpec::Forest(params) => FittedEstimator::Forest(RandomForestClassifier::fit(
            &x,
            &train.labels,
            n_classes,
            params,
            pipeline.seed,
            cancel,
        )?),
    };
    Ok(FittedModel { preprocess, estimator, n_classes })
}

/// Class probabilities, one row per input row, `n_classes` columns.
pub fn predict_proba(model: &FittedModel, data: &Dataset) -> Result<Array2<f64>, LearnerError> {
    let x = model.preprocess.transform(data)?;
    Ok(match &model.estimator {
        FittedEstimator::Mlp(net) => net.predict_proba(&x),
        FittedEstimator::Forest(forest) => forest.predict_proba(&x),
    })
}
