//! Run configuration: defaults, then the `GHOSTLITE_SEED` environment
//! variable, then a JSON config file, then command-line flags, with the
//! origin of every value recorded.

use std::collections::BTreeMap;
use std::path::Path;

use ghostlite::model::ModelSpec;
use ghostlite::train::{Monitor, TrainConfig};
use serde::Serialize;
use serde_json::Value;

use crate::failure::{Context, Failure, Outcome};

pub const SEED_ENV: &str = "GHOSTLITE_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Default,
    Env,
    File,
    Flag,
}

/// Command-line overrides for the training configuration; `None` leaves the
/// lower-precedence value in place.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub seed: Option<u64>,
    /// `Some(0)` disables early stopping.
    pub patience: Option<usize>,
    pub monitor: Option<Monitor>,
    pub class_weighting: Option<bool>,
    pub instance_weighting: Option<bool>,
    pub smote: Option<bool>,
    pub stratified: Option<bool>,
    pub augment: Option<bool>,
    pub image_size: Option<usize>,
}

/// Fully resolved configuration for a training run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelSpec,
    pub provenance: BTreeMap<String, Source>,
}

impl RunConfig {
    pub fn source(&self, key: &str) -> Option<Source> {
        self.provenance.get(key).copied()
    }
}

/// Parses a seed from the environment variable's value.
pub fn env_seed(value: Option<&str>) -> Outcome<Option<u64>> {
    value
        .map(|v| v.trim().parse::<u64>().or_config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))
        .transpose()
}

/// A preset name (`desk`, `full`) or the path of a model spec JSON file.
pub fn load_model_spec(name_or_path: &str) -> Outcome<ModelSpec> {
    match name_or_path {
        "desk" => Ok(ModelSpec::desk()),
        "full" => Ok(ModelSpec::full()),
        path => {
            let text = std::fs::read_to_string(path).or_config(format!("cannot read model config {path}"))?;
            ModelSpec::from_json(&text).or_config(format!("invalid model config {path}"))
        }
    }
}

/// Dotted keys of every configurable field, nested `flags` included.
fn keys_of(value: &Value, prefix: &str, out: &mut Vec<String>) {
    if let Value::Object(map) = value {
        for (k, v) in map {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            if k == "flags" && prefix.is_empty() {
                keys_of(v, &key, out);
            } else {
                out.push(key);
            }
        }
    }
}

fn all_keys() -> Vec<String> {
    let mut keys = Vec::new();
    keys_of(&serde_json::to_value(TrainConfig::default()).expect("config serializes"), "", &mut keys);
    keys
}

pub fn resolve(
    config_file: Option<&Path>,
    model: Option<&str>,
    overrides: &Overrides,
    env_seed: Option<u64>,
) -> Outcome<RunConfig> {
    let mut provenance: BTreeMap<String, Source> = all_keys().into_iter().map(|k| (k, Source::Default)).collect();
    let mut train = TrainConfig::default();

    if let Some(seed) = env_seed {
        train.seed = seed;
        provenance.insert("seed".into(), Source::Env);
    }
    if let Some(path) = config_file {
        let text = std::fs::read_to_string(path).or_config(format!("cannot read config {}", path.display()))?;
        let mut value: Value = serde_json::from_str(&text).or_config(format!("invalid config {}", path.display()))?;
        if !value.is_object() {
            return Err(Failure::config(format!("config {} must be a JSON object", path.display())));
        }
        let mut present = Vec::new();
        keys_of(&value, "", &mut present);
        for key in &present {
            if !provenance.contains_key(key) {
                return Err(Failure::config(format!("unknown key {key:?} in config {}", path.display())));
            }
            provenance.insert(key.clone(), Source::File);
        }
        // an env seed stands in for the default, so a file without a seed keeps it
        if !present.iter().any(|k| k == "seed") {
            value["seed"] = train.seed.into();
        }
        train = serde_json::from_value(value).or_config(format!("invalid config {}", path.display()))?;
    }

    let o = overrides;
    let mut set = |key: &str| {
        provenance.insert(key.to_string(), Source::Flag);
    };
    if let Some(v) = o.epochs {
        train.epochs = v;
        set("epochs");
    }
    if let Some(v) = o.batch_size {
        train.batch_size = v;
        set("batch_size");
    }
    if let Some(v) = o.lr {
        train.lr = v;
        set("lr");
    }
    if let Some(v) = o.momentum {
        train.momentum = v;
        set("momentum");
    }
    if let Some(v) = o.seed {
        train.seed = v;
        set("seed");
    }
    if let Some(v) = o.patience {
        train.early_stop_patience = (v > 0).then_some(v);
        set("early_stop_patience");
    }
    if let Some(v) = o.monitor {
        train.monitor = v;
        set("monitor");
    }
    let flags = &mut train.flags;
    for (value, field, key) in [
        (o.class_weighting, &mut flags.class_weighting, "flags.class_weighting"),
        (o.instance_weighting, &mut flags.instance_weighting, "flags.instance_weighting"),
        (o.smote, &mut flags.smote, "flags.smote"),
        (o.stratified, &mut flags.stratified_split, "flags.stratified_split"),
        (o.augment, &mut flags.augment, "flags.augment"),
    ] {
        if let Some(v) = value {
            *field = v;
            set(key);
        }
    }
    // the default patience only applies to runs long enough to use it
    if provenance["early_stop_patience"] == Source::Default
        && train.early_stop_patience.is_some_and(|p| p >= train.epochs)
    {
        train.early_stop_patience = None;
    }
    train.validate().or_config("invalid training configuration")?;

    let mut spec = match model {
        Some(m) => {
            provenance.insert("model".into(), Source::Flag);
            load_model_spec(m)?
        }
        None => {
            provenance.insert("model".into(), Source::Default);
            ModelSpec::desk()
        }
    };
    if let Some(size) = o.image_size {
        spec.image_size = size;
        provenance.insert("model.image_size".into(), Source::Flag);
    }
    spec.validate().or_config("invalid model configuration")?;
    Ok(RunConfig { train, model: spec, provenance })
}
