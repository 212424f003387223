//! Cascade execution with per-instance cost accounting.
//!
//! An instance starts at the cheapest model. At every non-final stage the
//! stage's confidence is compared with its output threshold: at or above it
//! the model answers, below it the instance moves on. In routing mode a
//! second, lower skip threshold sends very unconfident instances straight to
//! the final model. The final model always answers. The cost of an instance
//! is the sum of the costs of the models it actually ran; the cost of
//! comparing confidences is not charged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::confidence::{self, ConfidenceError, HeuristicOptions, Policy};
use crate::ingest::EvaluationBundle;

/// Upper bound on cascade length (stage sets are tracked as a bit mask).
pub const MAX_MODELS: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CascadeError {
    #[error("model `{0}` is not in the bundle")]
    UnknownModel(String),
    #[error("cascade has no models")]
    EmptyCascade,
    #[error("cascade has {0} models; at most {MAX_MODELS} are supported")]
    TooManyModels(usize),
    #[error(
        "models must be listed cheapest first: `{later}` comes after `{earlier}` but is cheaper"
    )]
    UnorderedModels { earlier: String, later: String },
    #[error("expected {expected} {what}, got {found}")]
    ThresholdCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("stage {stage} threshold {value} outside [{min}, {max}]")]
    ThresholdOutOfRange {
        stage: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("routing needs at least 3 models, got {0}")]
    RoutingRequiresK3(usize),
    #[error("stage {stage}: skip threshold {skip} exceeds output threshold {output}")]
    BandViolation {
        stage: usize,
        skip: f64,
        output: f64,
    },
    #[error("configuration is for {configured} mode but {requested} was requested")]
    ModeMismatch { configured: Mode, requested: Mode },
    #[error("{found} outcomes for a bundle of {expected} instances")]
    CountMismatch { expected: usize, found: usize },
    #[error("internal invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Sequential,
    Routing,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sequential => "sequential",
            Mode::Routing => "routing",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sequential" => Ok(Mode::Sequential),
            "routing" => Ok(Mode::Routing),
            _ => Err(format!(
                "unknown mode `{s}` (expected sequential or routing)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Model ids, cheapest first.
    pub model_order: Vec<String>,
    pub policy: Policy,
    #[serde(default)]
    pub mode: Mode,
    /// Output threshold per non-final stage.
    pub thresholds: Vec<f64>,
    /// Routing only: skip threshold per non-final stage. Empty means the
    /// policy minimum everywhere (no skipping).
    #[serde(default)]
    pub skip_thresholds: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub heuristic: HeuristicOptions,
}

impl CascadeConfig {
    pub fn sequential(model_order: Vec<String>, policy: Policy, thresholds: Vec<f64>) -> Self {
        CascadeConfig {
            model_order,
            policy,
            mode: Mode::Sequential,
            thresholds,
            skip_thresholds: Vec::new(),
            seed: 0,
            heuristic: HeuristicOptions::default(),
        }
    }

    pub fn routing(
        model_order: Vec<String>,
        policy: Policy,
        thresholds: Vec<f64>,
        skip_thresholds: Vec<f64>,
    ) -> Self {
        CascadeConfig {
            mode: Mode::Routing,
            skip_thresholds,
            ..CascadeConfig::sequential(model_order, policy, thresholds)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_heuristic(mut self, heuristic: HeuristicOptions) -> Self {
        self.heuristic = heuristic;
        self
    }

    /// Every model of `bundle`, cheapest first.
    pub fn all_models(bundle: &EvaluationBundle) -> Vec<String> {
        bundle
            .profiles()
            .iter()
            .map(|p| p.model_id.clone())
            .collect()
    }
}

/// Result of cascading one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeOutcome {
    pub instance_id: String,
    /// Models that ran, in order.
    pub used: Vec<String>,
    pub answered_by: String,
    pub predicted_label: usize,
    pub correct: bool,
    /// FLOPs.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Mean FLOPs per instance.
    pub mean_cost: f64,
    /// Percent correct.
    pub accuracy: f64,
    pub outcomes: Vec<CascadeOutcome>,
}

/// Stages visited by one instance, as a bit mask over cascade positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub used: u64,
    pub answered: usize,
}

impl Route {
    /// Visited stage positions, ascending.
    pub fn stages(self) -> impl Iterator<Item = usize> {
        let mut bits = self.used;
        std::iter::from_fn(move || {
            (bits != 0).then(|| {
                let s = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                s
            })
        })
    }
}

/// A cascade bound to a bundle, with every stage confidence precomputed.
///
/// Threshold vectors can then be evaluated repeatedly without touching the
/// prediction records again.
#[derive(Debug, Clone)]
pub struct CascadeEngine<'a> {
    bundle: &'a EvaluationBundle,
    models: Vec<usize>,
    policy: Policy,
    confidence: Vec<Vec<f64>>,
}

impl<'a> CascadeEngine<'a> {
    pub fn new(
        bundle: &'a EvaluationBundle,
        model_order: &[String],
        policy: Policy,
        seed: u64,
        heuristic: HeuristicOptions,
    ) -> Result<Self, CascadeError> {
        if model_order.is_empty() {
            return Err(CascadeError::EmptyCascade);
        }
        if model_order.len() > MAX_MODELS {
            return Err(CascadeError::TooManyModels(model_order.len()));
        }
        let models = model_order
            .iter()
            .map(|id| {
                bundle
                    .model_index(id)
                    .ok_or_else(|| CascadeError::UnknownModel(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        for w in models.windows(2) {
            if w[0] >= w[1] {
                return Err(CascadeError::UnorderedModels {
                    earlier: bundle.profiles()[w[0]].model_id.clone(),
                    later: bundle.profiles()[w[1]].model_id.clone(),
                });
            }
        }
        let max_length = heuristic
            .max_length
            .unwrap_or_else(|| bundle.max_input_length());
        let confidence = models
            .iter()
            .enumerate()
            .map(|(stage, &m)| {
                (0..bundle.len())
                    .map(|i| {
                        let score = match policy {
                            Policy::MaxProb => {
                                confidence::max_prob(&bundle.prediction(m, i).distribution)?
                            }
                            Policy::Dtu => confidence::dtu(&bundle.prediction(m, i).distribution)?,
                            Policy::Random => confidence::random_conf(
                                seed,
                                &bundle.instances()[i].instance_id,
                                stage + 1,
                            ),
                            Policy::Heuristic => confidence::heuristic_conf_with(
                                bundle.instances()[i].input_length,
                                max_length,
                                heuristic.invert,
                            )?,
                        };
                        Ok(score.value)
                    })
                    .collect::<Result<Vec<_>, ConfidenceError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CascadeEngine {
            bundle,
            models,
            policy,
            confidence,
        })
    }

    pub fn from_config(
        bundle: &'a EvaluationBundle,
        config: &CascadeConfig,
    ) -> Result<Self, CascadeError> {
        Self::new(
            bundle,
            &config.model_order,
            config.policy,
            config.seed,
            config.heuristic,
        )
    }

    pub fn bundle(&self) -> &'a EvaluationBundle {
        self.bundle
    }

    /// Number of models in the cascade.
    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    /// Bundle model index of cascade stage `stage` (0-based).
    pub fn model_at(&self, stage: usize) -> usize {
        self.models[stage]
    }

    /// Confidence values of `stage` for every instance, in bundle order.
    pub fn stage_confidences(&self, stage: usize) -> &[f64] {
        &self.confidence[stage]
    }

    /// Checks threshold and band vectors against the policy range and mode.
    pub fn validate(
        &self,
        mode: Mode,
        thresholds: &[f64],
        skips: &[f64],
    ) -> Result<(), CascadeError> {
        let k = self.k();
        let stages = k - 1;
        if thresholds.len() != stages {
            return Err(CascadeError::ThresholdCount {
                what: "output thresholds",
                expected: stages,
                found: thresholds.len(),
            });
        }
        let labels = self.bundle.label_count();
        let (min, _) = self.policy.range(labels);
        let max = self.policy.threshold_ceiling(labels);
        let check = |stage: usize, value: f64| {
            if self.policy.accepts_threshold(value, labels) {
                Ok(())
            } else {
                Err(CascadeError::ThresholdOutOfRange {
                    stage,
                    value,
                    min,
                    max,
                })
            }
        };
        for (j, &t) in thresholds.iter().enumerate() {
            check(j + 1, t)?;
        }
        match mode {
            Mode::Sequential => {
                if !skips.is_empty() {
                    return Err(CascadeError::ThresholdCount {
                        what: "skip thresholds in sequential mode",
                        expected: 0,
                        found: skips.len(),
                    });
                }
            }
            Mode::Routing => {
                if k < 3 {
                    return Err(CascadeError::RoutingRequiresK3(k));
                }
                if !skips.is_empty() && skips.len() != stages {
                    return Err(CascadeError::ThresholdCount {
                        what: "skip thresholds",
                        expected: stages,
                        found: skips.len(),
                    });
                }
                for (j, (&s, &t)) in skips.iter().zip(thresholds).enumerate() {
                    check(j + 1, s)?;
                    if s > t {
                        return Err(CascadeError::BandViolation {
                            stage: j + 1,
                            skip: s,
                            output: t,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Routes one instance. `skips` empty means sequential behaviour.
    /// Thresholds must already be validated.
    #[inline]
    pub fn route(&self, instance: usize, thresholds: &[f64], skips: &[f64]) -> Route {
        let last = self.k() - 1;
        let mut used = 0u64;
        let mut stage = 0;
        while stage < last {
            used |= 1 << stage;
            let c = self.confidence[stage][instance];
            if c >= thresholds[stage] {
                return Route {
                    used,
                    answered: stage,
                };
            }
            stage = match skips.get(stage) {
                Some(&s) if c < s => last,
                _ => stage + 1,
            };
        }
        used |= 1 << last;
        Route {
            used,
            answered: last,
        }
    }

    /// FLOPs of the models on `route`, summed cheapest first.
    #[inline]
    pub fn route_cost(&self, instance: usize, route: Route) -> f64 {
        route.stages().fold(0.0, |acc, s| {
            acc + self.bundle.model_cost(self.models[s], instance)
        })
    }

    #[inline]
    pub fn route_correct(&self, instance: usize, route: Route) -> bool {
        self.bundle
            .is_correct(self.models[route.answered], instance)
    }

    /// `(mean_cost, accuracy)` without materializing outcomes.
    pub fn evaluate(&self, thresholds: &[f64], skips: &[f64]) -> (f64, f64) {
        let n = self.bundle.len();
        let mut total_cost = 0.0;
        let mut correct = 0usize;
        for i in 0..n {
            let route = self.route(i, thresholds, skips);
            total_cost += self.route_cost(i, route);
            correct += usize::from(self.route_correct(i, route));
        }
        (total_cost / n as f64, percent(correct, n))
    }

    pub fn outcome(&self, instance: usize, thresholds: &[f64], skips: &[f64]) -> CascadeOutcome {
        let route = self.route(instance, thresholds, skips);
        let profiles = self.bundle.profiles();
        let answered = self.models[route.answered];
        let record = self.bundle.prediction(answered, instance);
        CascadeOutcome {
            instance_id: self.bundle.instances()[instance].instance_id.clone(),
            used: route
                .stages()
                .map(|s| profiles[self.models[s]].model_id.clone())
                .collect(),
            answered_by: profiles[answered].model_id.clone(),
            predicted_label: record.predicted_label,
            correct: self.route_correct(instance, route),
            cost: self.route_cost(instance, route),
        }
    }

    pub fn outcomes(&self, thresholds: &[f64], skips: &[f64]) -> Vec<CascadeOutcome> {
        (0..self.bundle.len())
            .map(|i| self.outcome(i, thresholds, skips))
            .collect()
    }
}

pub(crate) fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// Runs `config` in whichever mode it names.
pub fn run(bundle: &EvaluationBundle, config: &CascadeConfig) -> Result<RunSummary, CascadeError> {
    let engine = CascadeEngine::from_config(bundle, config)?;
    engine.validate(config.mode, &config.thresholds, &config.skip_thresholds)?;
    let skips: &[f64] = match config.mode {
        Mode::Sequential => &[],
        Mode::Routing => &config.skip_thresholds,
    };
    aggregate(engine.outcomes(&config.thresholds, skips), bundle)
}

pub fn run_sequential(
    bundle: &EvaluationBundle,
    config: &CascadeConfig,
) -> Result<RunSummary, CascadeError> {
    if config.mode != Mode::Sequential {
        return Err(CascadeError::ModeMismatch {
            configured: config.mode,
            requested: Mode::Sequential,
        });
    }
    run(bundle, config)
}

pub fn run_routing(
    bundle: &EvaluationBundle,
    config: &CascadeConfig,
) -> Result<RunSummary, CascadeError> {
    if config.mode != Mode::Routing {
        return Err(CascadeError::ModeMismatch {
            configured: config.mode,
            requested: Mode::Routing,
        });
    }
    run(bundle, config)
}

/// Mean cost (FLOPs) and accuracy (percent) over one outcome per instance.
pub fn aggregate(
    outcomes: Vec<CascadeOutcome>,
    bundle: &EvaluationBundle,
) -> Result<RunSummary, CascadeError> {
    let n = bundle.len();
    if outcomes.len() != n {
        return Err(CascadeError::CountMismatch {
            expected: n,
            found: outcomes.len(),
        });
    }
    let total: f64 = outcomes.iter().map(|o| o.cost).sum();
    let correct = outcomes.iter().filter(|o| o.correct).count();
    Ok(RunSummary {
        mean_cost: total / n as f64,
        accuracy: percent(correct, n),
        outcomes,
    })
}

impl RunSummary {
    /// Re-derives every outcome invariant from the bundle.
    pub fn check_invariants(
        &self,
        bundle: &EvaluationBundle,
        config: &CascadeConfig,
    ) -> Result<(), CascadeError> {
        let fail = |msg: String| Err(CascadeError::InvariantViolation(msg));
        if self.outcomes.len() != bundle.len() {
            return fail(format!(
                "{} outcomes for {} instances",
                self.outcomes.len(),
                bundle.len()
            ));
        }
        let order = &config.model_order;
        let mut total = 0.0;
        let mut correct = 0;
        for (i, o) in self.outcomes.iter().enumerate() {
            let inst = &bundle.instances()[i];
            if o.instance_id != inst.instance_id {
                return fail(format!("outcome {i} is for `{}`", o.instance_id));
            }
            if o.used.last() != Some(&o.answered_by) {
                return fail(format!(
                    "`{}`: answering model is not the last one used",
                    o.instance_id
                ));
            }
            let positions: Vec<usize> = match o
                .used
                .iter()
                .map(|m| order.iter().position(|x| x == m))
                .collect::<Option<Vec<_>>>()
            {
                Some(p) => p,
                None => {
                    return fail(format!(
                        "`{}`: used a model outside the cascade",
                        o.instance_id
                    ))
                }
            };
            let well_formed = match config.mode {
                Mode::Sequential => positions.iter().enumerate().all(|(k, &p)| k == p),
                Mode::Routing => {
                    positions.first() == Some(&0) && positions.windows(2).all(|w| w[0] < w[1])
                }
            };
            if !well_formed {
                return fail(format!(
                    "`{}`: used set {:?} not allowed in {} mode",
                    o.instance_id, o.used, config.mode
                ));
            }
            let cost = o.used.iter().fold(0.0, |acc, m| {
                acc + bundle.model_cost(bundle.model_index(m).expect("checked above"), i)
            });
            if cost != o.cost {
                return fail(format!(
                    "`{}`: cost {} but models sum to {}",
                    o.instance_id, o.cost, cost
                ));
            }
            let m = bundle.model_index(&o.answered_by).expect("checked above");
            let record = bundle.prediction(m, i);
            if record.predicted_label != o.predicted_label
                || (o.predicted_label == inst.gold_label) != o.correct
            {
                return fail(format!(
                    "`{}`: prediction or correctness mismatch",
                    o.instance_id
                ));
            }
            total += o.cost;
            correct += usize::from(o.correct);
        }
        if total / bundle.len() as f64 != self.mean_cost
            || percent(correct, bundle.len()) != self.accuracy
        {
            return fail("summary does not match outcomes".into());
        }
        Ok(())
    }
}
