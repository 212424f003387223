//! Loading and validation of instances, per-model predictions and cost profiles.
//!
//! On disk a bundle is three kinds of files:
//!
//! - `instances.jsonl`: one `{"instance_id", "gold_label", "input_length"}` object per line.
//! - `preds_<model>.jsonl`: one `{"instance_id", "distribution"}` (or `"raw_scores"`) object
//!   per line, one file per model, smallest model first.
//! - `profiles.toml`: dataset-level cost settings plus one `[[model]]` table per model with
//!   `id`, `order`, optional `params` and a `cost_table` of `length = flops` pairs.
//!
//! Everything is validated up front; an [`EvaluationBundle`] that exists is consistent.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Absolute tolerance on `sum(distribution) == 1`.
pub const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("model `{model}` has no prediction for instance `{instance}`")]
    MissingPrediction { model: String, instance: String },
    #[error("model `{model}` has a prediction for unknown instance `{instance}`")]
    UnknownInstance { model: String, instance: String },
    #[error("model `{model}` has more than one prediction for instance `{instance}`")]
    DuplicatePrediction { model: String, instance: String },
    #[error("label count mismatch ({context}): expected {expected}, found {found}")]
    LabelCountMismatch {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("costs not strictly increasing at length {length}: order {lower} costs at least as much as order {higher}")]
    NonMonotoneCosts {
        length: u32,
        lower: usize,
        higher: usize,
    },
    #[error("duplicate instance id `{0}`")]
    DuplicateInstance(String),
    #[error(
        "instance `{instance}` has gold label {label} but the dataset has {label_count} labels"
    )]
    GoldLabelOutOfRange {
        instance: String,
        label: usize,
        label_count: usize,
    },
    #[error("instance `{instance}` has a non-positive input length")]
    NonPositiveLength { instance: String },
    #[error("invalid distribution from model `{model}` for instance `{instance}`: {reason}")]
    InvalidDistribution {
        model: String,
        instance: String,
        reason: String,
    },
    #[error("score at index {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("score vector is empty")]
    EmptyScores,
    #[error("model `{model}` has an empty cost table")]
    EmptyCostTable { model: String },
    #[error("model `{model}` has an invalid cost entry at length {length}: {value}")]
    InvalidCost {
        model: String,
        length: String,
        value: f64,
    },
    #[error("sequence length must be at least 1")]
    ZeroSequenceLength,
    #[error("model order indices must form 1..={expected_max}: {detail}")]
    OrderIndex { expected_max: usize, detail: String },
    #[error("{files} prediction files given for {profiles} model profiles")]
    ProfileCountMismatch { files: usize, profiles: usize },
    #[error("{path}: prediction names model `{found}` but this file is bound to `{expected}`")]
    ModelMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("prediction for instance `{instance}` has neither `distribution` nor `raw_scores`")]
    NoScores { instance: String },
    #[error("dataset has no instances")]
    EmptyDataset,
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub gold_label: usize,
    pub input_length: u32,
}

/// One model's normalized output for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub model_id: String,
    pub distribution: Vec<f64>,
    pub predicted_label: usize,
}

impl PredictionRecord {
    /// Builds a record from a probability vector, deriving the predicted label.
    pub fn new(
        instance_id: impl Into<String>,
        model_id: impl Into<String>,
        distribution: Vec<f64>,
    ) -> Self {
        let predicted_label = argmax(&distribution);
        PredictionRecord {
            instance_id: instance_id.into(),
            model_id: model_id.into(),
            distribution,
            predicted_label,
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    /// 1 is the cheapest model.
    pub order_index: usize,
    /// Sequence length in tokens to inference cost in FLOPs.
    pub cost_table: BTreeMap<u32, f64>,
    pub param_count: Option<u64>,
}

impl ModelProfile {
    pub fn new(
        model_id: impl Into<String>,
        order_index: usize,
        cost_table: BTreeMap<u32, f64>,
    ) -> Self {
        ModelProfile {
            model_id: model_id.into(),
            order_index,
            cost_table,
            param_count: None,
        }
    }
}

/// Softmax with max-shift. Accepts logits or any finite score vector.
pub fn normalize_scores(raw_scores: &[f64]) -> Result<Vec<f64>, IngestError> {
    if raw_scores.is_empty() {
        return Err(IngestError::EmptyScores);
    }
    if let Some(index) = raw_scores.iter().position(|s| !s.is_finite()) {
        return Err(IngestError::NonFiniteScore { index });
    }
    let max = raw_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw_scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Inference cost of `profile` at `seq_len` tokens.
///
/// Exact table hits are returned verbatim. Lengths between two entries are
/// linearly interpolated; lengths outside the table are extrapolated from the
/// two nearest entries and floored at zero. A single-entry table is constant.
pub fn instance_cost(profile: &ModelProfile, seq_len: u32) -> Result<f64, IngestError> {
    if seq_len == 0 {
        return Err(IngestError::ZeroSequenceLength);
    }
    let table = &profile.cost_table;
    if table.is_empty() {
        return Err(IngestError::EmptyCostTable {
            model: profile.model_id.clone(),
        });
    }
    if let Some(&cost) = table.get(&seq_len) {
        return Ok(cost);
    }
    let below = table.range(..seq_len).next_back();
    let above = table.range(seq_len..).next();
    let (a, b) = match (below, above) {
        (Some(a), Some(b)) => (a, b),
        (None, Some(_)) => {
            let mut it = table.iter();
            match (it.next(), it.next()) {
                (Some(a), Some(b)) => (a, b),
                (Some((_, &c)), None) => return Ok(c),
                _ => unreachable!("table is non-empty"),
            }
        }
        (Some(_), None) => {
            let mut it = table.iter().rev();
            match (it.next(), it.next()) {
                (Some(b), Some(a)) => (a, b),
                (Some((_, &c)), None) => return Ok(c),
                _ => unreachable!("table is non-empty"),
            }
        }
        (None, None) => unreachable!("table is non-empty"),
    };
    let (&la, &ca) = a;
    let (&lb, &cb) = b;
    let frac = (f64::from(seq_len) - f64::from(la)) / (f64::from(lb) - f64::from(la));
    Ok((ca + frac * (cb - ca)).max(0.0))
}

/// How per-instance sequence lengths are chosen for cost lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostSettings {
    /// Fixed length used for every instance unless `per_instance_cost` is set.
    pub dataset_seq_len: Option<u32>,
    /// Charge each instance at its own `input_length`.
    pub per_instance_cost: bool,
}

/// Validated, immutable join of instances, predictions and cost profiles.
///
/// Predictions are stored aligned with `instances`: `prediction(m, i)` is
/// model `m`'s (0-based, cheapest first) record for instance `i`.
#[derive(Debug, Clone)]
pub struct EvaluationBundle {
    instances: Vec<InstanceRecord>,
    predictions: Vec<Vec<PredictionRecord>>,
    profiles: Vec<ModelProfile>,
    label_count: usize,
    settings: CostSettings,
    costs: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EvaluationBundle {
    /// Validates and joins the parts. `predictions[m]` holds model `m`'s
    /// records in any order, where models are indexed by ascending
    /// `order_index`. `label_count` is inferred from the first distribution
    /// when not given.
    pub fn new(
        instances: Vec<InstanceRecord>,
        predictions: Vec<Vec<PredictionRecord>>,
        mut profiles: Vec<ModelProfile>,
        label_count: Option<usize>,
        settings: CostSettings,
    ) -> Result<Self, IngestError> {
        if instances.is_empty() {
            return Err(IngestError::EmptyDataset);
        }
        profiles.sort_by_key(|p| p.order_index);
        check_order_indices(&profiles)?;
        if predictions.len() != profiles.len() {
            return Err(IngestError::ProfileCountMismatch {
                files: predictions.len(),
                profiles: profiles.len(),
            });
        }

        let mut index = HashMap::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            if index.insert(inst.instance_id.clone(), i).is_some() {
                return Err(IngestError::DuplicateInstance(inst.instance_id.clone()));
            }
            if inst.input_length == 0 {
                return Err(IngestError::NonPositiveLength {
                    instance: inst.instance_id.clone(),
                });
            }
        }

        let label_count = match label_count {
            Some(n) => n,
            None => predictions
                .iter()
                .flat_map(|p| p.first())
                .map(|r| r.distribution.len())
                .next()
                .unwrap_or(0),
        };

        for inst in &instances {
            if inst.gold_label >= label_count {
                return Err(IngestError::GoldLabelOutOfRange {
                    instance: inst.instance_id.clone(),
                    label: inst.gold_label,
                    label_count,
                });
            }
        }

        let mut aligned = Vec::with_capacity(predictions.len());
        for (profile, records) in profiles.iter().zip(predictions) {
            let mut slots: Vec<Option<PredictionRecord>> = vec![None; instances.len()];
            for mut record in records {
                if record.model_id != profile.model_id {
                    return Err(IngestError::ModelMismatch {
                        path: PathBuf::new(),
                        expected: profile.model_id.clone(),
                        found: record.model_id,
                    });
                }
                validate_distribution(&record, label_count)?;
                record.predicted_label = argmax(&record.distribution);
                let Some(&i) = index.get(&record.instance_id) else {
                    return Err(IngestError::UnknownInstance {
                        model: profile.model_id.clone(),
                        instance: record.instance_id,
                    });
                };
                if slots[i].is_some() {
                    return Err(IngestError::DuplicatePrediction {
                        model: profile.model_id.clone(),
                        instance: record.instance_id,
                    });
                }
                slots[i] = Some(record);
            }
            let mut column = Vec::with_capacity(slots.len());
            for (slot, inst) in slots.into_iter().zip(&instances) {
                match slot {
                    Some(r) => column.push(r),
                    None => {
                        return Err(IngestError::MissingPrediction {
                            model: profile.model_id.clone(),
                            instance: inst.instance_id.clone(),
                        })
                    }
                }
            }
            aligned.push(column);
        }

        let mut bundle = EvaluationBundle {
            instances,
            predictions: aligned,
            profiles,
            label_count,
            settings,
            costs: Vec::new(),
            index,
        };
        bundle.check_cost_monotonicity()?;
        bundle.costs = bundle.compute_costs()?;
        Ok(bundle)
    }

    /// Same bundle with a different cost-length rule.
    pub fn with_cost_settings(&self, settings: CostSettings) -> Result<Self, IngestError> {
        let mut bundle = self.clone();
        bundle.settings = settings;
        bundle.check_cost_monotonicity()?;
        bundle.costs = bundle.compute_costs()?;
        Ok(bundle)
    }

    pub fn instances(&self) -> &[InstanceRecord] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn profiles(&self) -> &[ModelProfile] {
        &self.profiles
    }

    pub fn model_count(&self) -> usize {
        self.profiles.len()
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn cost_settings(&self) -> CostSettings {
        self.settings
    }

    pub fn model_index(&self, model_id: &str) -> Option<usize> {
        self.profiles.iter().position(|p| p.model_id == model_id)
    }

    pub fn instance_index(&self, instance_id: &str) -> Option<usize> {
        self.index.get(instance_id).copied()
    }

    pub fn prediction(&self, model: usize, instance: usize) -> &PredictionRecord {
        &self.predictions[model][instance]
    }

    pub fn predictions_for(&self, model: usize) -> &[PredictionRecord] {
        &self.predictions[model]
    }

    pub fn prediction_by_id(&self, model_id: &str, instance_id: &str) -> Option<&PredictionRecord> {
        let m = self.model_index(model_id)?;
        let i = self.instance_index(instance_id)?;
        Some(&self.predictions[m][i])
    }

    /// Whether `model` predicts the gold label of `instance`.
    pub fn is_correct(&self, model: usize, instance: usize) -> bool {
        self.predictions[model][instance].predicted_label == self.instances[instance].gold_label
    }

    /// Sequence length used to look up the cost of `instance`.
    pub fn cost_length(&self, instance: usize) -> u32 {
        let own = self.instances[instance].input_length;
        if self.settings.per_instance_cost {
            own
        } else {
            self.settings.dataset_seq_len.unwrap_or(own)
        }
    }

    /// Cost in FLOPs of running `model` on `instance`.
    pub fn model_cost(&self, model: usize, instance: usize) -> f64 {
        self.costs[model][instance]
    }

    pub fn max_input_length(&self) -> u32 {
        self.instances
            .iter()
            .map(|i| i.input_length)
            .max()
            .unwrap_or(1)
    }

    /// Accuracy in percent of `model` used alone.
    pub fn standalone_accuracy(&self, model: usize) -> f64 {
        let correct = (0..self.len())
            .filter(|&i| self.is_correct(model, i))
            .count();
        100.0 * correct as f64 / self.len() as f64
    }

    /// Mean cost in FLOPs of `model` used alone.
    pub fn standalone_cost(&self, model: usize) -> f64 {
        self.costs[model].iter().sum::<f64>() / self.len() as f64
    }

    /// Keeps only the listed models (by id, in the given order) and renumbers
    /// their order indices from 1.
    pub fn select_models(&self, model_ids: &[String]) -> Result<Self, IngestError> {
        let mut profiles = Vec::with_capacity(model_ids.len());
        let mut predictions = Vec::with_capacity(model_ids.len());
        for (k, id) in model_ids.iter().enumerate() {
            let m = self
                .model_index(id)
                .ok_or_else(|| IngestError::OrderIndex {
                    expected_max: self.model_count(),
                    detail: format!("unknown model `{id}`"),
                })?;
            let mut profile = self.profiles[m].clone();
            profile.order_index = k + 1;
            profiles.push(profile);
            predictions.push(self.predictions[m].clone());
        }
        EvaluationBundle::new(
            self.instances.clone(),
            predictions,
            profiles,
            Some(self.label_count),
            self.settings,
        )
    }

    fn compute_costs(&self) -> Result<Vec<Vec<f64>>, IngestError> {
        self.profiles
            .iter()
            .map(|p| {
                (0..self.len())
                    .map(|i| instance_cost(p, self.cost_length(i)))
                    .collect()
            })
            .collect()
    }

    /// Checks strict cost increase across order indices at every length that
    /// appears in any table, plus every length cost lookup will use.
    fn check_cost_monotonicity(&self) -> Result<(), IngestError> {
        let mut lengths: BTreeSet<u32> = self
            .profiles
            .iter()
            .flat_map(|p| p.cost_table.keys().copied())
            .collect();
        lengths.extend((0..self.len()).map(|i| self.cost_length(i)));
        for profile in &self.profiles {
            for (&len, &cost) in &profile.cost_table {
                if !cost.is_finite() || cost < 0.0 || len == 0 {
                    return Err(IngestError::InvalidCost {
                        model: profile.model_id.clone(),
                        length: len.to_string(),
                        value: cost,
                    });
                }
            }
        }
        for &len in &lengths {
            let costs = self
                .profiles
                .iter()
                .map(|p| instance_cost(p, len))
                .collect::<Result<Vec<_>, _>>()?;
            for w in 0..costs.len().saturating_sub(1) {
                if costs[w] >= costs[w + 1] {
                    return Err(IngestError::NonMonotoneCosts {
                        length: len,
                        lower: self.profiles[w].order_index,
                        higher: self.profiles[w + 1].order_index,
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_order_indices(sorted: &[ModelProfile]) -> Result<(), IngestError> {
    for (k, p) in sorted.iter().enumerate() {
        if p.order_index != k + 1 {
            return Err(IngestError::OrderIndex {
                expected_max: sorted.len(),
                detail: format!("model `{}` has order {}", p.model_id, p.order_index),
            });
        }
        if p.cost_table.is_empty() {
            return Err(IngestError::EmptyCostTable {
                model: p.model_id.clone(),
            });
        }
    }
    Ok(())
}

fn validate_distribution(record: &PredictionRecord, label_count: usize) -> Result<(), IngestError> {
    let fail = |reason: String| IngestError::InvalidDistribution {
        model: record.model_id.clone(),
        instance: record.instance_id.clone(),
        reason,
    };
    let d = &record.distribution;
    if d.len() != label_count {
        return Err(IngestError::LabelCountMismatch {
            context: format!(
                "model `{}`, instance `{}`",
                record.model_id, record.instance_id
            ),
            expected: label_count,
            found: d.len(),
        });
    }
    if let Some(v) = d.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(fail(format!("entry {v} outside [0, 1]")));
    }
    let sum: f64 = d.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
        return Err(fail(format!("entries sum to {sum}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distribution: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_scores: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfilesDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seq_len: Option<u32>,
    #[serde(default)]
    per_instance_cost: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_count: Option<usize>,
    #[serde(rename = "model")]
    models: Vec<ProfileEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileEntry {
    id: String,
    order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<u64>,
    cost_table: BTreeMap<String, f64>,
}

/// Contents of a profiles document.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilesFile {
    pub profiles: Vec<ModelProfile>,
    pub settings: CostSettings,
    pub label_count: Option<usize>,
}

pub fn parse_profiles(path: &Path, text: &str) -> Result<ProfilesFile, IngestError> {
    let doc: ProfilesDoc = toml::from_str(text).map_err(|e| IngestError::Parse {
        path: path.to_path_buf(),
        line: e
            .span()
            .map(|s| text[..s.start].lines().count().max(1))
            .unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let mut profiles = Vec::with_capacity(doc.models.len());
    for entry in doc.models {
        let mut cost_table = BTreeMap::new();
        for (key, value) in entry.cost_table {
            let len: u32 = key.trim().parse().map_err(|_| IngestError::InvalidCost {
                model: entry.id.clone(),
                length: key.clone(),
                value,
            })?;
            cost_table.insert(len, value);
        }
        profiles.push(ModelProfile {
            model_id: entry.id,
            order_index: entry.order,
            cost_table,
            param_count: entry.params,
        });
    }
    Ok(ProfilesFile {
        profiles,
        settings: CostSettings {
            dataset_seq_len: doc.seq_len,
            per_instance_cost: doc.per_instance_cost,
        },
        label_count: doc.label_count,
    })
}

pub fn render_profiles(
    profiles: &[ModelProfile],
    settings: CostSettings,
    label_count: Option<usize>,
) -> String {
    let doc = ProfilesDoc {
        seq_len: settings.dataset_seq_len,
        per_instance_cost: settings.per_instance_cost,
        label_count,
        models: profiles
            .iter()
            .map(|p| ProfileEntry {
                id: p.model_id.clone(),
                order: p.order_index,
                params: p.param_count,
                cost_table: p
                    .cost_table
                    .iter()
                    .map(|(k, v)| (k.to_string(), *v))
                    .collect(),
            })
            .collect(),
    };
    toml::to_string(&doc).expect("profiles document serializes")
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|e| IngestError::io(path, e))
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
    text: &str,
) -> Result<Vec<T>, IngestError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| IngestError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_instances(path: &Path) -> Result<Vec<InstanceRecord>, IngestError> {
    parse_jsonl(path, &read_text(path)?)
}

/// Reads one model's prediction file. Lines carrying `raw_scores` but no
/// `distribution` are softmax-normalized.
pub fn read_predictions(path: &Path, model_id: &str) -> Result<Vec<PredictionRecord>, IngestError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| IngestError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let raw: PredictionLine =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if let Some(found) = raw.model_id {
            if found != model_id {
                return Err(IngestError::ModelMismatch {
                    path: path.to_path_buf(),
                    expected: model_id.to_string(),
                    found,
                });
            }
        }
        let distribution = match (raw.distribution, raw.raw_scores) {
            (Some(d), _) => d,
            (None, Some(scores)) => {
                normalize_scores(&scores).map_err(|e| parse_err(e.to_string()))?
            }
            (None, None) => {
                return Err(parse_err(
                    IngestError::NoScores {
                        instance: raw.instance_id,
                    }
                    .to_string(),
                ))
            }
        };
        out.push(PredictionRecord::new(
            raw.instance_id,
            model_id,
            distribution,
        ));
    }
    Ok(out)
}

/// Loads and validates a bundle. `prediction_paths[k]` must be the file of
/// the model with order index `k + 1`.
pub fn load_bundle(
    instances_path: &Path,
    prediction_paths: &[PathBuf],
    profiles_path: &Path,
) -> Result<EvaluationBundle, IngestError> {
    let profiles_file = parse_profiles(profiles_path, &read_text(profiles_path)?)?;
    let instances = read_instances(instances_path)?;
    let mut profiles = profiles_file.profiles;
    profiles.sort_by_key(|p| p.order_index);
    if prediction_paths.len() != profiles.len() {
        return Err(IngestError::ProfileCountMismatch {
            files: prediction_paths.len(),
            profiles: profiles.len(),
        });
    }
    check_order_indices(&profiles)?;
    let predictions = profiles
        .iter()
        .zip(prediction_paths)
        .map(|(p, path)| read_predictions(path, &p.model_id))
        .collect::<Result<Vec<_>, _>>()?;
    EvaluationBundle::new(
        instances,
        predictions,
        profiles,
        profiles_file.label_count,
        profiles_file.settings,
    )
}

/// Standard file layout of a bundle directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundlePaths {
    pub instances: PathBuf,
    pub predictions: Vec<PathBuf>,
    pub profiles: PathBuf,
}

impl BundlePaths {
    /// Resolves `dir/instances.jsonl`, `dir/profiles.toml` and one
    /// `dir/preds_<model>.jsonl` per profile, cheapest model first.
    pub fn in_dir(dir: &Path) -> Result<Self, IngestError> {
        let profiles_path = dir.join("profiles.toml");
        let mut profiles = parse_profiles(&profiles_path, &read_text(&profiles_path)?)?.profiles;
        profiles.sort_by_key(|p| p.order_index);
        Ok(BundlePaths {
            instances: dir.join("instances.jsonl"),
            predictions: profiles
                .iter()
                .map(|p| dir.join(format!("preds_{}.jsonl", p.model_id)))
                .collect(),
            profiles: profiles_path,
        })
    }

    pub fn load(&self) -> Result<EvaluationBundle, IngestError> {
        load_bundle(&self.instances, &self.predictions, &self.profiles)
    }

    pub fn all(&self) -> impl Iterator<Item = &PathBuf> {
        std::iter::once(&self.instances)
            .chain(self.predictions.iter())
            .chain(std::iter::once(&self.profiles))
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| IngestError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| IngestError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| IngestError::io(path, e))
}

/// Writes `bundle` in the standard layout under `dir`.
pub fn write_bundle(bundle: &EvaluationBundle, dir: &Path) -> Result<BundlePaths, IngestError> {
    let mut instances = String::new();
    for inst in bundle.instances() {
        instances.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        instances.push('\n');
    }
    let paths = BundlePaths {
        instances: dir.join("instances.jsonl"),
        predictions: bundle
            .profiles()
            .iter()
            .map(|p| dir.join(format!("preds_{}.jsonl", p.model_id)))
            .collect(),
        profiles: dir.join("profiles.toml"),
    };
    write_atomic(&paths.instances, instances.as_bytes())?;
    for (m, path) in paths.predictions.iter().enumerate() {
        let mut text = String::new();
        for record in bundle.predictions_for(m) {
            let line = PredictionLine {
                instance_id: record.instance_id.clone(),
                model_id: Some(record.model_id.clone()),
                distribution: Some(record.distribution.clone()),
                raw_scores: None,
            };
            text.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
            text.push('\n');
        }
        write_atomic(path, text.as_bytes())?;
    }
    let profiles = render_profiles(
        bundle.profiles(),
        bundle.cost_settings(),
        Some(bundle.label_count()),
    );
    write_atomic(&paths.profiles, profiles.as_bytes())?;
    Ok(paths)
}

/// Per-length inference cost of the BERT variants (mini, medium, base,
/// large), in FLOPs.
pub fn bert_cost_table(variant: &str) -> Option<BTreeMap<u32, f64>> {
    const LENGTHS: [u32; 7] = [50, 80, 100, 120, 150, 220, 275];
    let gflops: [f64; 7] = match variant {
        "mini" => [0.16, 0.25, 0.31, 0.38, 0.47, 0.69, 0.87],
        "medium" => [1.26, 2.01, 2.52, 3.02, 3.78, 5.54, 6.92],
        "base" => [4.25, 6.80, 8.49, 10.19, 12.74, 18.69, 23.36],
        "large" => [5.10, 24.16, 30.20, 36.24, 45.30, 66.44, 83.05],
        _ => return None,
    };
    Some(
        LENGTHS
            .iter()
            .zip(gflops)
            .map(|(&l, g)| (l, (g * 100.0).round() * 1e7))
            .collect(),
    )
}
