//! Conditional hyperparameter spaces and seeded sampling.
//!
//! A [`SearchSpace`] is an ordered list of [`ParamSpec`]s. A parameter may be
//! conditional on an earlier parameter taking a specific value; inactive
//! parameters are simply absent from a sampled [`Configuration`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while building or validating a search space.
#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("parameter `{name}`: {reason}")]
    InvalidDomain { name: String, reason: String },
    #[error("parameter `{name}` is conditional on `{parent}`, which is not declared before it")]
    UnknownParent { name: String, parent: String },
    #[error("configuration belongs to space `{found}`, expected `{expected}`")]
    SpaceMismatch { expected: String, found: String },
    #[error("configuration parameter `{name}`: {reason}")]
    InvalidAssignment { name: String, reason: String },
    #[error("invalid space document: {0}")]
    Json(String),
}

/// A single hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Int(v) => Some(v as f64),
            ParamValue::Float(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            ParamValue::Int(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            ParamValue::Bool(b) => Some(b),
            _ => None,
        }
    }

    /// Type-tagged rendering used for hashing; floats carry 17 significant digits.
    fn canonical(&self) -> String {
        match self {
            ParamValue::Bool(b) => format!("b:{b}"),
            ParamValue::Int(i) => format!("i:{i}"),
            ParamValue::Float(f) => format!("f:{f:.16e}"),
            ParamValue::Str(s) => format!("s:{s}"),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::Str(s.to_string())
    }
}

impl From<bool> for ParamValue {
    fn from(b: bool) -> Self {
        ParamValue::Bool(b)
    }
}

impl From<i64> for ParamValue {
    fn from(i: i64) -> Self {
        ParamValue::Int(i)
    }
}

impl From<f64> for ParamValue {
    fn from(f: f64) -> Self {
        ParamValue::Float(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

/// The value domain of a parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Float {
        low: f64,
        high: f64,
        #[serde(default)]
        scale: Scale,
    },
    Integer {
        low: i64,
        high: i64,
        #[serde(default)]
        scale: Scale,
    },
    Ordinal {
        values: Vec<ParamValue>,
    },
    Categorical {
        choices: Vec<ParamValue>,
    },
    Constant {
        value: ParamValue,
    },
}

/// Activation condition: the parameter is active only when `parent == value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub parent: String,
    pub value: ParamValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

impl ParamSpec {
    pub fn new(name: &str, domain: Domain) -> Self {
        ParamSpec { name: name.to_string(), domain, condition: None }
    }

    pub fn float(name: &str, low: f64, high: f64, scale: Scale) -> Self {
        Self::new(name, Domain::Float { low, high, scale })
    }

    pub fn integer(name: &str, low: i64, high: i64, scale: Scale) -> Self {
        Self::new(name, Domain::Integer { low, high, scale })
    }

    pub fn categorical<V: Into<ParamValue>>(name: &str, choices: impl IntoIterator<Item = V>) -> Self {
        Self::new(name, Domain::Categorical { choices: choices.into_iter().map(Into::into).collect() })
    }

    pub fn ordinal<V: Into<ParamValue>>(name: &str, values: impl IntoIterator<Item = V>) -> Self {
        Self::new(name, Domain::Ordinal { values: values.into_iter().map(Into::into).collect() })
    }

    pub fn constant(name: &str, value: impl Into<ParamValue>) -> Self {
        Self::new(name, Domain::Constant { value: value.into() })
    }

    pub fn when(mut self, parent: &str, value: impl Into<ParamValue>) -> Self {
        self.condition = Some(Condition { parent: parent.to_string(), value: value.into() });
        self
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.domain, Domain::Constant { .. })
    }

    fn check_domain(&self) -> Result<(), SpaceError> {
        let fail =
            |reason: &str| Err(SpaceError::InvalidDomain { name: self.name.clone(), reason: reason.to_string() });
        match &self.domain {
            Domain::Float { low, high, scale } => {
                if !(low.is_finite() && high.is_finite()) {
                    return fail("bounds must be finite");
                }
                if low >= high {
                    return fail("requires low < high");
                }
                if *scale == Scale::Log && *low <= 0.0 {
                    return fail("log scale requires low > 0");
                }
            }
            Domain::Integer { low, high, scale } => {
                if low >= high {
                    return fail("requires low < high");
                }
                if *scale == Scale::Log && *low <= 0 {
                    return fail("log scale requires low > 0");
                }
            }
            Domain::Ordinal { values } => {
                if values.is_empty() {
                    return fail("ordinal values must be non-empty");
                }
                let numeric: Option<Vec<f64>> = values.iter().map(ParamValue::as_f64).collect();
                if let Some(nums) = numeric {
                    if nums.windows(2).any(|w| w[0] >= w[1]) {
                        return fail("numeric ordinal values must be strictly increasing");
                    }
                } else if has_duplicates(values) {
                    return fail("ordinal values must be unique");
                }
            }
            Domain::Categorical { choices } => {
                if choices.is_empty() {
                    return fail("categorical choices must be non-empty");
                }
                if has_duplicates(choices) {
                    return fail("categorical choices must be unique");
                }
            }
            Domain::Constant { .. } => {}
        }
        Ok(())
    }

    /// Whether `value` is a legal member of this parameter's domain.
    pub fn contains(&self, value: &ParamValue) -> bool {
        match (&self.domain, value) {
            (Domain::Float { low, high, .. }, ParamValue::Float(v)) => *v >= *low && *v <= *high,
            (Domain::Integer { low, high, .. }, ParamValue::Int(v)) => *v >= *low && *v <= *high,
            (Domain::Ordinal { values }, v) => values.contains(v),
            (Domain::Categorical { choices }, v) => choices.contains(v),
            (Domain::Constant { value: c }, v) => c == v,
            _ => false,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamValue {
        match &self.domain {
            Domain::Float { low, high, scale } => {
                let u: f64 = rng.random();
                let v = match scale {
                    Scale::Linear => low + u * (high - low),
                    Scale::Log => (low.ln() + u * (high.ln() - low.ln())).exp(),
                };
                ParamValue::Float(v.clamp(*low, *high))
            }
            Domain::Integer { low, high, scale } => match scale {
                Scale::Linear => ParamValue::Int(rng.random_range(*low..=*high)),
                Scale::Log => {
                    // Widen by half a unit so the end points keep a full rounding bucket.
                    let lo = (*low as f64 - 0.5).max(0.5);
                    let hi = *high as f64 + 0.5;
                    let u: f64 = rng.random();
                    let v = (lo.ln() + u * (hi.ln() - lo.ln())).exp();
                    ParamValue::Int((v.round() as i64).clamp(*low, *high))
                }
            },
            Domain::Ordinal { values } => values[rng.random_range(0..values.len())].clone(),
            Domain::Categorical { choices } => choices[rng.random_range(0..choices.len())].clone(),
            Domain::Constant { value } => value.clone(),
        }
    }
}

fn has_duplicates(values: &[ParamValue]) -> bool {
    let mut seen = HashSet::new();
    values.iter().any(|v| !seen.insert(v.canonical()))
}

/// An immutable, validated hyperparameter space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchSpace {
    name: String,
    params: Vec<ParamSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceDocument {
    name: String,
    params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(name: impl Into<String>, params: Vec<ParamSpec>) -> Result<Self, SpaceError> {
        let mut seen: HashSet<&str> = HashSet::new();
        for p in &params {
            p.check_domain()?;
            if let Some(cond) = &p.condition {
                if !seen.contains(cond.parent.as_str()) {
                    return Err(SpaceError::UnknownParent { name: p.name.clone(), parent: cond.parent.clone() });
                }
            }
            if !seen.insert(&p.name) {
                return Err(SpaceError::DuplicateName(p.name.clone()));
            }
        }
        Ok(SearchSpace { name: name.into(), params })
    }

    /// Parses a JSON document `{"name": ..., "params": [ParamSpec...]}`.
    pub fn from_json(text: &str) -> Result<Self, SpaceError> {
        let doc: SpaceDocument = serde_json::from_str(text).map_err(|e| SpaceError::Json(e.to_string()))?;
        Self::new(doc.name, doc.params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("space serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Replaces the value of a constant parameter, e.g. the forest size.
    pub fn with_constant(mut self, name: &str, value: impl Into<ParamValue>) -> Result<Self, SpaceError> {
        let p = self.params.iter_mut().find(|p| p.name == name).ok_or_else(|| SpaceError::InvalidAssignment {
            name: name.to_string(),
            reason: "no such parameter".into(),
        })?;
        if !p.is_constant() {
            return Err(SpaceError::InvalidAssignment { name: name.to_string(), reason: "not a constant".into() });
        }
        p.domain = Domain::Constant { value: value.into() };
        Ok(self)
    }

    /// Whether `param` is active under a (partial) assignment.
    pub fn is_active(&self, param: &ParamSpec, assignments: &BTreeMap<String, ParamValue>) -> bool {
        match &param.condition {
            None => true,
            Some(c) => assignments.get(&c.parent) == Some(&c.value),
        }
    }

    /// Draws one configuration; children are drawn only when their condition holds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let mut assignments = BTreeMap::new();
        for p in &self.params {
            if self.is_active(p, &assignments) {
                let v = p.sample(rng);
                assignments.insert(p.name.clone(), v);
            }
        }
        Configuration::new(&self.name, assignments)
    }

    /// Checks that exactly the active parameters are present and in range.
    pub fn validate(&self, config: &Configuration) -> Result<(), SpaceError> {
        if config.space != self.name {
            return Err(SpaceError::SpaceMismatch { expected: self.name.clone(), found: config.space.clone() });
        }
        let mut seen = BTreeMap::new();
        for p in &self.params {
            let active = self.is_active(p, &seen);
            match (active, config.assignments.get(&p.name)) {
                (true, Some(v)) => {
                    if !p.contains(v) {
                        return Err(SpaceError::InvalidAssignment {
                            name: p.name.clone(),
                            reason: format!("value {v} outside domain"),
                        });
                    }
                    seen.insert(p.name.clone(), v.clone());
                }
                (true, None) => {
                    return Err(SpaceError::InvalidAssignment {
                        name: p.name.clone(),
                        reason: "active parameter missing".into(),
                    })
                }
                (false, Some(_)) => {
                    return Err(SpaceError::InvalidAssignment {
                        name: p.name.clone(),
                        reason: "inactive parameter present".into(),
                    })
                }
                (false, None) => {}
            }
        }
        if let Some(extra) = config.assignments.keys().find(|k| self.param(k).is_none()) {
            return Err(SpaceError::InvalidAssignment { name: extra.clone(), reason: "not declared in space".into() });
        }
        Ok(())
    }
}

/// A sampled point of a [`SearchSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub space: String,
    pub assignments: BTreeMap<String, ParamValue>,
    #[serde(with = "hex_id")]
    pub id: ConfigId,
}

/// Stable 64-bit configuration identifier.
pub type ConfigId = u64;

impl Configuration {
    pub fn new(space: &str, assignments: BTreeMap<String, ParamValue>) -> Self {
        let id = config_id(&assignments);
        Configuration { space: space.to_string(), assignments, id }
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.assignments.get(name)
    }

    pub fn id_hex(&self) -> String {
        format!("{:016x}", self.id)
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    /// Parses a configuration and recomputes its id from the assignments.
    pub fn from_json(text: &str) -> Result<Self, SpaceError> {
        let parsed: Configuration = serde_json::from_str(text).map_err(|e| SpaceError::Json(e.to_string()))?;
        Ok(Configuration::new(&parsed.space, parsed.assignments))
    }
}

/// FNV-1a over the sorted `name=value` pairs.
pub fn config_id(assignments: &BTreeMap<String, ParamValue>) -> ConfigId {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for (k, v) in assignments {
        let entry = format!("{k}={}\u{1f}", v.canonical());
        for b in entry.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

mod hex_id {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(id: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{id:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

pub const MLP_SPACE: &str = "mlp";
pub const RF_SPACE: &str = "rf";

/// Default forest size for the random-forest space.
pub const RF_DEFAULT_N_ESTIMATORS: i64 = 512;

pub mod names {
    pub const IMPUTER_STRATEGY: &str = "numerical:SimpleImputer:strategy";
    pub const ORDINAL_MIN_FREQ: &str = "cat:OrdinalEncoder:min_freq";
    pub const CAT_CHOICE: &str = "cat:__choice__";
    pub const ONEHOT_MAX_CATEGORIES: &str = "cat:OneHot:max_categories";
    pub const ORDINAL_UNKNOWN_VALUE: &str = "cat:OrdinalEnc:unknown_value";
    pub const ORDINAL_MISSING_VALUE: &str = "cat:OrdinalEnc:missing";
}

fn shared_preprocessing_tail(params: &mut Vec<ParamSpec>) {
    params.push(ParamSpec::constant("cat:OrdinalEnc:unknown", "use_encoded_value"));
    params.push(ParamSpec::constant(names::ORDINAL_UNKNOWN_VALUE, -1i64));
    params.push(ParamSpec::constant(names::ORDINAL_MISSING_VALUE, -2i64));
    params.push(ParamSpec::constant("cat:OneHot:drop", "None"));
}

/// The MLP pipeline space.
pub fn build_mlp_space() -> SearchSpace {
    use Scale::*;
    let mut params = vec![
        ParamSpec::categorical("activation", ["relu", "tanh"]),
        ParamSpec::float("alpha", 1e-7, 0.1, Log),
        ParamSpec::categorical("early_stopping", [true, false]),
        ParamSpec::integer("hidden_layer_depth", 1, 3, Log),
        ParamSpec::categorical("learning_rate", ["constant", "invscaling", "adaptive"]),
        ParamSpec::float("learning_rate_init", 1e-4, 0.5, Log),
        ParamSpec::float("momentum", 0.8, 1.0, Log),
        ParamSpec::integer("num_nodes_per_layer", 16, 264, Log),
        ParamSpec::categorical(names::IMPUTER_STRATEGY, ["mean", "median"]),
        ParamSpec::float(names::ORDINAL_MIN_FREQ, 0.01, 0.5, Log),
        ParamSpec::categorical(names::CAT_CHOICE, ["OneHot", "passthrough"]),
        ParamSpec::integer(names::ONEHOT_MAX_CATEGORIES, 2, 20, Log).when(names::CAT_CHOICE, "OneHot"),
        ParamSpec::constant("max_iter", 512i64),
        ParamSpec::constant("n_iter_no_change", 32i64),
        ParamSpec::constant("validation_fraction", 0.1),
        ParamSpec::constant("tol", 1e-3),
        ParamSpec::constant("solver", "adam"),
        ParamSpec::constant("batch_size", "auto"),
        ParamSpec::constant("shuffle", true),
        ParamSpec::constant("beta_1", 0.9),
        ParamSpec::constant("beta_2", 0.999),
        ParamSpec::constant("epsilon", 1e-8),
    ];
    shared_preprocessing_tail(&mut params);
    params.push(ParamSpec::constant("cat:OneHot:handle_unknown", "infrequent_if_exists"));
    SearchSpace::new(MLP_SPACE, params).expect("MLP space is valid")
}

/// The ten `max_features` fractions: `10^linspace(0.1, 1, 10) / 10`.
pub fn rf_max_features_values() -> Vec<f64> {
    (0..10)
        .map(|i| {
            let exponent = 0.1 + 0.9 * i as f64 / 9.0;
            10f64.powf(exponent) / 10.0
        })
        .collect()
}

/// The random-forest pipeline space with the default forest size.
pub fn build_rf_space() -> SearchSpace {
    build_rf_space_with(RF_DEFAULT_N_ESTIMATORS)
}

pub fn build_rf_space_with(n_estimators: i64) -> SearchSpace {
    use Scale::*;
    let mut params = vec![
        ParamSpec::categorical("bootstrap", [true, false]),
        ParamSpec::categorical("class_weight", ["balanced", "balanced_subsample", "None"]),
        ParamSpec::categorical("criterion", ["gini", "entropy"]),
        ParamSpec::ordinal("max_features", rf_max_features_values()),
        ParamSpec::float("min_impurity_decrease", 1e-9, 0.1, Log),
        ParamSpec::integer("min_samples_leaf", 1, 20, Log),
        ParamSpec::integer("min_samples_split", 2, 20, Log),
        ParamSpec::categorical(names::IMPUTER_STRATEGY, ["mean", "median"]),
        ParamSpec::categorical(names::CAT_CHOICE, ["OneHot", "passthrough"]),
        ParamSpec::integer(names::ONEHOT_MAX_CATEGORIES, 2, 20, Log).when(names::CAT_CHOICE, "OneHot"),
        ParamSpec::constant("n_estimators", n_estimators),
        ParamSpec::constant("max_depth", "None"),
        ParamSpec::constant("min_weight_fraction_leaf", 0.0),
        ParamSpec::constant("max_leaf_nodes", "None"),
    ];
    shared_preprocessing_tail(&mut params);
    params.push(ParamSpec::constant("cat:OneHot:unknown", "infrequent_if_exists"));
    SearchSpace::new(RF_SPACE, params).expect("RF space is valid")
}

/// Looks up one of the built-in spaces by name.
pub fn builtin_space(name: &str, rf_n_estimators: Option<i64>) -> Option<SearchSpace> {
    match name {
        MLP_SPACE => Some(build_mlp_space()),
        RF_SPACE => Some(build_rf_space_with(rf_n_estimators.unwrap_or(RF_DEFAULT_N_ESTIMATORS))),
        _ => None,
    }
}
