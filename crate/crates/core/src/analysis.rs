//! Per-model breakdown of a cascade run and budgeted threshold tuning.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::engine::{percent, CascadeConfig, CascadeEngine, CascadeError, CascadeOutcome, Mode};
use crate::ingest::{EvaluationBundle, ModelProfile};
use crate::sweep::{sweep, CurvePoint, CurveSummary, Grid, SweepError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("{found} outcomes for a bundle of {expected} instances")]
    CountMismatch { expected: usize, found: usize },
    #[error("outcome {index} is for `{found}`, expected `{expected}`")]
    OutcomeMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("model `{0}` is not part of the cascade")]
    UnknownModel(String),
    #[error("budget {budget} FLOPs is below the cheapest operating point ({cheapest} FLOPs)")]
    InfeasibleBudget { budget: f64, cheapest: f64 },
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
}

/// How one cascade member performed on the instances routed around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelContribution {
    pub model_id: String,
    pub answered_count: usize,
    /// Percent of all instances answered by this model.
    pub answered_fraction: f64,
    /// Instances this model answered correctly.
    pub correct_count: usize,
    pub accuracy_on_answered: Option<f64>,
    /// Instances that reached this stage and were answered later (non-final stages).
    pub escalated_count: Option<usize>,
    /// This model's own accuracy on the escalated instances.
    pub accuracy_on_escalated: Option<f64>,
    /// `accuracy_on_answered - accuracy_on_escalated`.
    pub escalation_drop: Option<f64>,
    /// Accuracy of the preceding stage's model on this model's answered set.
    pub previous_accuracy_on_answered: Option<f64>,
    /// `accuracy_on_answered - previous_accuracy_on_answered`.
    pub takeover_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    pub instance_count: usize,
    pub overall_accuracy: f64,
    pub models: Vec<ModelContribution>,
}

impl ContributionReport {
    /// Sum of the per-model correct counts; equals the cascade's correct count.
    pub fn correct_total(&self) -> usize {
        self.models.iter().map(|m| m.correct_count).sum()
    }

    /// `sum_j fraction_j * accuracy_j / 100`, which reproduces the overall
    /// accuracy up to floating-point rounding.
    pub fn weighted_accuracy(&self) -> f64 {
        self.models
            .iter()
            .map(|m| m.answered_fraction * m.accuracy_on_answered.unwrap_or(0.0) / 100.0)
            .sum()
    }
}

fn subset_accuracy(bundle: &EvaluationBundle, model: usize, subset: &[usize]) -> Option<f64> {
    (!subset.is_empty()).then(|| {
        let correct = subset
            .iter()
            .filter(|&&i| bundle.is_correct(model, i))
            .count();
        percent(correct, subset.len())
    })
}

/// Partitions the instances by answering model and compares each model with
/// itself on escalated instances and with its predecessor on its own share.
pub fn contribution(
    outcomes: &[CascadeOutcome],
    bundle: &EvaluationBundle,
    model_order: &[String],
) -> Result<ContributionReport, AnalysisError> {
    let n = bundle.len();
    if outcomes.len() != n {
        return Err(AnalysisError::CountMismatch {
            expected: n,
            found: outcomes.len(),
        });
    }
    let models = model_order
        .iter()
        .map(|id| {
            bundle
                .model_index(id)
                .ok_or_else(|| AnalysisError::UnknownModel(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let stage_of = |id: &str| {
        model_order
            .iter()
            .position(|m| m == id)
            .ok_or_else(|| AnalysisError::UnknownModel(id.to_string()))
    };

    let k = models.len();
    let mut answered: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut escalated: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut correct_overall = 0;
    for (i, o) in outcomes.iter().enumerate() {
        let expected = &bundle.instances()[i].instance_id;
        if &o.instance_id != expected {
            return Err(AnalysisError::OutcomeMismatch {
                index: i,
                expected: expected.clone(),
                found: o.instance_id.clone(),
            });
        }
        let by = stage_of(&o.answered_by)?;
        answered[by].push(i);
        for used in &o.used {
            let s = stage_of(used)?;
            if s < by {
                escalated[s].push(i);
            }
        }
        correct_overall += usize::from(o.correct);
    }

    let report = (0..k)
        .map(|j| {
            let m = models[j];
            let own = subset_accuracy(bundle, m, &answered[j]);
            let correct_count = answered[j]
                .iter()
                .filter(|&&i| bundle.is_correct(m, i))
                .count();
            let (escalated_count, on_escalated) = if j + 1 < k {
                (
                    Some(escalated[j].len()),
                    subset_accuracy(bundle, m, &escalated[j]),
                )
            } else {
                (None, None)
            };
            let previous = (j > 0)
                .then(|| subset_accuracy(bundle, models[j - 1], &answered[j]))
                .flatten();
            ModelContribution {
                model_id: model_order[j].clone(),
                answered_count: answered[j].len(),
                answered_fraction: percent(answered[j].len(), n),
                correct_count,
                accuracy_on_answered: own,
                escalated_count,
                accuracy_on_escalated: on_escalated,
                escalation_drop: own.zip(on_escalated).map(|(a, b)| a - b),
                previous_accuracy_on_answered: previous,
                takeover_gain: own.zip(previous).map(|(a, b)| a - b),
            }
        })
        .collect();
    Ok(ContributionReport {
        instance_count: n,
        overall_accuracy: percent(correct_overall, n),
        models: report,
    })
}

/// First frontier point whose accuracy reaches `target`: the concrete
/// configuration closest to the matched-accuracy intersection.
pub fn operating_point_at_accuracy(frontier: &[CurvePoint], target: f64) -> Option<&CurvePoint> {
    frontier.iter().find(|p| p.accuracy >= target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedOperatingPoint {
    pub thresholds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skip_thresholds: Vec<f64>,
    pub budget: f64,
    pub validation_cost: f64,
    pub validation_accuracy: f64,
    pub test_cost: Option<f64>,
    pub test_accuracy: Option<f64>,
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Preference order used by [`tune`]: higher accuracy, then lower cost, then
/// lexicographically smaller thresholds and skip thresholds.
pub fn prefer(a: &CurvePoint, b: &CurvePoint) -> Ordering {
    b.accuracy
        .total_cmp(&a.accuracy)
        .then(a.mean_cost.total_cmp(&b.mean_cost))
        .then_with(|| lex(&a.thresholds, &b.thresholds))
        .then_with(|| lex(&a.skip_thresholds, &b.skip_thresholds))
}

/// Picks the most accurate grid configuration whose validation cost fits in
/// `budget` (FLOPs), then replays it on `test` when given.
///
/// `config` supplies models, policy, mode, seed and heuristic settings; its
/// thresholds are ignored.
pub fn tune(
    validation: &EvaluationBundle,
    test: Option<&EvaluationBundle>,
    config: &CascadeConfig,
    budget: f64,
    grid: &Grid,
    cap: usize,
) -> Result<TunedOperatingPoint, AnalysisError> {
    let engine = CascadeEngine::from_config(validation, config)?;
    let points = sweep(&engine, config.mode, grid, cap)?;
    let cheapest = points
        .iter()
        .map(|p| p.mean_cost)
        .fold(f64::INFINITY, f64::min);
    let best = points
        .iter()
        .filter(|p| p.mean_cost <= budget)
        .min_by(|a, b| prefer(a, b))
        .ok_or(AnalysisError::InfeasibleBudget { budget, cheapest })?;

    let (test_cost, test_accuracy) = match test {
        Some(bundle) => {
            let engine = CascadeEngine::from_config(bundle, config)?;
            engine.validate(config.mode, &best.thresholds, &best.skip_thresholds)?;
            let skips: &[f64] = match config.mode {
                Mode::Sequential => &[],
                Mode::Routing => &best.skip_thresholds,
            };
            let (c, a) = engine.evaluate(&best.thresholds, skips);
            (Some(c), Some(a))
        }
        None => (None, None),
    };
    Ok(TunedOperatingPoint {
        thresholds: best.thresholds.clone(),
        skip_thresholds: best.skip_thresholds.clone(),
        budget,
        validation_cost: best.mean_cost,
        validation_accuracy: best.accuracy,
        test_cost,
        test_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub model_id: String,
    pub param_count: Option<u64>,
    pub standalone_accuracy: f64,
    pub standalone_cost: f64,
    pub cascade_cost_at_match: Option<f64>,
    /// Percent of the standalone cost saved at equal accuracy.
    pub improvement_percent: Option<f64>,
    /// Cascade cost at equal accuracy as a percent of the standalone cost.
    pub cost_fraction_percent: Option<f64>,
    /// Best cascade accuracy minus this model's accuracy.
    pub accuracy_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub rows: Vec<ImprovementRow>,
    pub max_accuracy: f64,
    /// Best cascade accuracy minus the most expensive model's accuracy.
    pub accuracy_gain_vs_largest: f64,
}

/// Efficiency and accuracy improvement of the cascade over each member.
pub fn improvement_report(summary: &CurveSummary, profiles: &[ModelProfile]) -> ImprovementReport {
    let rows = summary
        .matched
        .iter()
        .map(|m| ImprovementRow {
            model_id: m.model_id.clone(),
            param_count: profiles
                .iter()
                .find(|p| p.model_id == m.model_id)
                .and_then(|p| p.param_count),
            standalone_accuracy: m.standalone_accuracy,
            standalone_cost: m.standalone_cost,
            cascade_cost_at_match: m.cascade_cost_at_match,
            improvement_percent: m.improvement_percent,
            cost_fraction_percent: m.improvement_percent.map(|p| 100.0 - p),
            accuracy_delta: summary.max_accuracy - m.standalone_accuracy,
        })
        .collect();
    ImprovementReport {
        rows,
        max_accuracy: summary.max_accuracy,
        accuracy_gain_vs_largest: summary.max_accuracy_gain,
    }
}
