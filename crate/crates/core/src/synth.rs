//! Synthetic prediction bundles with controllable accuracy and calibration.
//!
//! Correctness is drawn model by model along the cascade: the cheapest model
//! is right with its target probability; each larger model keeps a smaller
//! model's correct answers except for a small churn and fixes a share of its
//! mistakes, sized so its marginal accuracy hits its own target. Easy
//! instances are therefore right almost everywhere, while a smaller model
//! still beats a larger one on a few instances.
//!
//! Each prediction then gets a distribution whose top probability is drawn
//! from a correct- or incorrect-conditional law. `sharpness` pushes the two
//! laws apart; at zero they coincide and confidence carries no information.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{
    bert_cost_table, CostSettings, EvaluationBundle, IngestError, InstanceRecord, ModelProfile,
    PredictionRecord,
};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModel {
    pub id: String,
    /// Probability of a correct prediction, in (0, 1].
    pub target_accuracy: f64,
    /// Separation between correct and incorrect confidence; 0 = uninformative.
    pub calibration_sharpness: f64,
    pub cost_table: BTreeMap<u32, f64>,
    #[serde(default)]
    pub param_count: Option<u64>,
}

impl SynthModel {
    /// A model priced with one of the BERT cost tables (`mini`, `medium`,
    /// `base`, `large`).
    pub fn bert(variant: &str, target_accuracy: f64, calibration_sharpness: f64) -> Option<Self> {
        let param_count = match variant {
            "mini" => 11_300_000,
            "medium" => 41_700_000,
            "base" => 110_000_000,
            "large" => 340_000_000,
            _ => return None,
        };
        Some(SynthModel {
            id: variant.to_string(),
            target_accuracy,
            calibration_sharpness,
            cost_table: bert_cost_table(variant)?,
            param_count: Some(param_count),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_instances: usize,
    pub label_count: usize,
    /// Fixed sequence length used for cost lookup; also the longest input.
    pub seq_len: u32,
    #[serde(default = "default_min_length")]
    pub min_input_length: u32,
    /// Probability that a larger model gets wrong what the previous model got right.
    #[serde(default = "default_churn")]
    pub churn: f64,
    pub seed: u64,
    /// Cheapest first, with non-decreasing target accuracy.
    pub models: Vec<SynthModel>,
}

fn default_min_length() -> u32 {
    50
}

fn default_churn() -> f64 {
    0.05
}

impl SynthSpec {
    /// Two-model medium/base cascade at length 120.
    pub fn k2(n_instances: usize, accuracies: (f64, f64), sharpness: f64, seed: u64) -> Self {
        SynthSpec {
            n_instances,
            label_count: 3,
            seq_len: 120,
            min_input_length: default_min_length(),
            churn: default_churn(),
            seed,
            models: vec![
                SynthModel::bert("medium", accuracies.0, sharpness).expect("known variant"),
                SynthModel::bert("base", accuracies.1, sharpness).expect("known variant"),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_instances == 0 {
            return bad("n_instances must be positive".into());
        }
        if self.label_count < 2 {
            return bad("label_count must be at least 2".into());
        }
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if self.seq_len == 0 || self.min_input_length == 0 || self.min_input_length > self.seq_len {
            return bad("need 1 <= min_input_length <= seq_len".into());
        }
        if !(0.0..1.0).contains(&self.churn) {
            return bad(format!("churn {} outside [0, 1)", self.churn));
        }
        let mut previous = 0.0;
        for m in &self.models {
            if !(m.target_accuracy > 0.0 && m.target_accuracy <= 1.0) {
                return bad(format!("model `{}`: target accuracy outside (0, 1]", m.id));
            }
            if m.target_accuracy < previous {
                return bad(format!(
                    "model `{}`: target accuracies must be non-decreasing",
                    m.id
                ));
            }
            if !(m.calibration_sharpness >= 0.0 && m.calibration_sharpness.is_finite()) {
                return bad(format!(
                    "model `{}`: sharpness must be finite and >= 0",
                    m.id
                ));
            }
            previous = m.target_accuracy;
        }
        Ok(())
    }
}

/// `(keep, upgrade)`: probabilities that the next model is right given the
/// previous model was right / wrong, so that its marginal accuracy is `next`.
fn transition(prev: f64, next: f64, churn: f64) -> (f64, f64) {
    if prev >= 1.0 {
        return (next, 0.0);
    }
    // Cap churn so the upgrade probability stays <= 1.
    let churn = churn.min(((1.0 - next) / prev).max(0.0));
    let keep = 1.0 - churn;
    let upgrade = ((next - prev * keep) / (1.0 - prev)).clamp(0.0, 1.0);
    (keep, upgrade)
}

/// Draws a distribution whose argmax is `target` and whose top probability
/// depends on `correct` through `sharpness`.
fn draw_distribution(
    rng: &mut ChaCha8Rng,
    labels: usize,
    target: usize,
    correct: bool,
    sharpness: f64,
) -> Vec<f64> {
    let n = labels as f64;
    let z: f64 = rng.random();
    let skew = z.powf(1.0 / (1.0 + sharpness));
    let position = if correct { skew } else { 1.0 - skew };
    let top = 1.0 / n + (1.0 - 1.0 / n) * (0.01 + 0.98 * position);
    let rest = 1.0 - top;

    let weights: Vec<f64> = (0..labels - 1).map(|_| 0.5 + rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    let mut others: Vec<f64> = weights.iter().map(|w| rest * w / total).collect();
    if others.iter().any(|&o| o >= top) {
        others = vec![rest / (n - 1.0); labels - 1];
    }
    let mut others = others.into_iter();
    (0..labels)
        .map(|l| {
            if l == target {
                top
            } else {
                others.next().expect("labels - 1 others")
            }
        })
        .collect()
}

fn wrong_label(rng: &mut ChaCha8Rng, labels: usize, gold: usize) -> usize {
    let pick = rng.random_range(0..labels - 1);
    if pick >= gold {
        pick + 1
    } else {
        pick
    }
}

fn predictions_for(
    rng: &mut ChaCha8Rng,
    model: &SynthModel,
    instances: &[InstanceRecord],
    correct: &[bool],
    labels: usize,
) -> Vec<PredictionRecord> {
    instances
        .iter()
        .zip(correct)
        .map(|(inst, &ok)| {
            let target = if ok {
                inst.gold_label
            } else {
                wrong_label(rng, labels, inst.gold_label)
            };
            let d = draw_distribution(rng, labels, target, ok, model.calibration_sharpness);
            PredictionRecord::new(inst.instance_id.clone(), model.id.clone(), d)
        })
        .collect()
}

fn profile(model: &SynthModel, order_index: usize) -> ModelProfile {
    ModelProfile {
        model_id: model.id.clone(),
        order_index,
        cost_table: model.cost_table.clone(),
        param_count: model.param_count,
    }
}

/// Generates a bundle. Deterministic in `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<EvaluationBundle, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = spec.label_count;
    let width = (spec.n_instances - 1).to_string().len();
    let instances: Vec<InstanceRecord> = (0..spec.n_instances)
        .map(|i| InstanceRecord {
            instance_id: format!("s{i:0width$}"),
            gold_label: rng.random_range(0..labels),
            input_length: rng.random_range(spec.min_input_length..=spec.seq_len),
        })
        .collect();

    let mut correctness: Vec<Vec<bool>> = Vec::with_capacity(spec.models.len());
    for (j, model) in spec.models.iter().enumerate() {
        let column = if j == 0 {
            (0..spec.n_instances)
                .map(|_| rng.random_bool(model.target_accuracy))
                .collect()
        } else {
            let (keep, upgrade) = transition(
                spec.models[j - 1].target_accuracy,
                model.target_accuracy,
                spec.churn,
            );
            correctness[j - 1]
                .iter()
                .map(|&prev| rng.random_bool(if prev { keep } else { upgrade }))
                .collect()
        };
        correctness.push(column);
    }

    let predictions = spec
        .models
        .iter()
        .zip(&correctness)
        .map(|(m, c)| predictions_for(&mut rng, m, &instances, c, labels))
        .collect();
    let profiles = spec
        .models
        .iter()
        .enumerate()
        .map(|(j, m)| profile(m, j + 1))
        .collect();
    Ok(EvaluationBundle::new(
        instances,
        predictions,
        profiles,
        Some(labels),
        CostSettings {
            dataset_seq_len: Some(spec.seq_len),
            per_instance_cost: false,
        },
    )?)
}

/// Returns a copy of `bundle` with `model` added as the new cheapest member.
/// The existing models' predictions are untouched; the new model's
/// correctness is drawn conditionally on the current cheapest model's, so
/// the pair looks as if generated forward with the same churn.
pub fn extend_below(
    bundle: &EvaluationBundle,
    model: &SynthModel,
    churn: f64,
    seed: u64,
) -> Result<EvaluationBundle, SynthError> {
    let first_acc = bundle.standalone_accuracy(0) / 100.0;
    let a0 = model.target_accuracy;
    if !(a0 > 0.0 && a0 <= first_acc) {
        return Err(SynthError::InvalidSpec(format!(
            "new model accuracy {a0} must be in (0, {first_acc}]"
        )));
    }
    let (keep, _) = transition(a0, first_acc, churn);
    let p_if_right = (a0 * keep / first_acc).clamp(0.0, 1.0);
    let p_if_wrong = if first_acc < 1.0 {
        (a0 * (1.0 - keep) / (1.0 - first_acc)).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let correct: Vec<bool> = (0..bundle.len())
        .map(|i| {
            rng.random_bool(if bundle.is_correct(0, i) {
                p_if_right
            } else {
                p_if_wrong
            })
        })
        .collect();
    let labels = bundle.label_count();
    let new_preds = predictions_for(&mut rng, model, bundle.instances(), &correct, labels);

    let mut predictions = vec![new_preds];
    let mut profiles = vec![profile(model, 1)];
    for m in 0..bundle.model_count() {
        predictions.push(bundle.predictions_for(m).to_vec());
        let mut p = bundle.profiles()[m].clone();
        p.order_index = m + 2;
        profiles.push(p);
    }
    Ok(EvaluationBundle::new(
        bundle.instances().to_vec(),
        predictions,
        profiles,
        Some(labels),
        bundle.cost_settings(),
    )?)
}
