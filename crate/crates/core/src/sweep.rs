//! Threshold sweeps, accuracy-cost frontiers, AUC and the two standalone
//! comparisons (cost at matched accuracy, maximum accuracy gain).

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::Policy;
use crate::engine::{CascadeEngine, CascadeError, Mode};

/// Default limit on the number of grid elements a sweep may evaluate.
pub const DEFAULT_GRID_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SweepError {
    #[error("bundle has no instances")]
    EmptyBundle,
    #[error("at least 2 grid points per stage are required, got {0}")]
    GridTooSmall(usize),
    #[error("sweep would evaluate {size} configurations (cap {cap})")]
    GridTooLarge { size: u128, cap: usize },
    #[error("grid has {found} stages, cascade has {expected}")]
    GridShape { expected: usize, found: usize },
    #[error("curve has no points")]
    EmptyCurve,
    #[error(transparent)]
    Cascade(#[from] CascadeError),
}

/// One operating point of a cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub thresholds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skip_thresholds: Vec<f64>,
    /// FLOPs.
    pub mean_cost: f64,
    /// Percent.
    pub accuracy: f64,
}

impl CurvePoint {
    pub fn at(mean_cost: f64, accuracy: f64) -> Self {
        CurvePoint {
            thresholds: Vec::new(),
            skip_thresholds: Vec::new(),
            mean_cost,
            accuracy,
        }
    }
}

/// Candidate thresholds per non-final stage, ascending and deduplicated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub stages: Vec<Vec<f64>>,
}

/// Builds a per-stage grid from empirical quantiles of each stage's
/// confidence values (nearest-rank, so every interior threshold is an
/// observed confidence) at levels `i / (points - 1)` for `i` in
/// `1..points-1`, plus the policy minimum and the escalate-everything
/// ceiling.
pub fn threshold_grid(
    engine: &CascadeEngine<'_>,
    points_per_stage: usize,
) -> Result<Grid, SweepError> {
    if points_per_stage < 2 {
        return Err(SweepError::GridTooSmall(points_per_stage));
    }
    let n = engine.bundle().len();
    if n == 0 {
        return Err(SweepError::EmptyBundle);
    }
    let labels = engine.bundle().label_count();
    let policy = engine.policy();
    let (min, _) = policy.range(labels);
    let ceiling = policy.threshold_ceiling(labels);
    let stages = (0..engine.k() - 1)
        .map(|stage| {
            let mut sorted = engine.stage_confidences(stage).to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut values = vec![min, ceiling];
            let levels = points_per_stage - 1;
            for i in 1..levels {
                let rank = (i * n).div_ceil(levels);
                values.push(sorted[rank.clamp(1, n) - 1]);
            }
            values.sort_by(f64::total_cmp);
            values.dedup();
            values
        })
        .collect();
    Ok(Grid { stages })
}

/// Per-stage choices of a routing sweep: `(skip, output)` pairs with
/// `skip <= output`. Bands only matter where a skip can pass over at least
/// one model, so the last non-final stage keeps its skip at the minimum.
fn routing_choices(grid: &Grid, min: f64) -> Vec<Vec<(f64, f64)>> {
    let last = grid.stages.len().saturating_sub(1);
    grid.stages
        .iter()
        .enumerate()
        .map(|(j, values)| {
            let mut pairs = Vec::new();
            for &t in values {
                if j < last {
                    pairs.extend(values.iter().filter(|&&s| s <= t).map(|&s| (s, t)));
                } else {
                    pairs.push((min.min(t), t));
                }
            }
            pairs
        })
        .collect()
}

/// Evaluates the cascade at every element of the Cartesian product of the
/// per-stage grids. Points come back in odometer order (first stage most
/// significant), so the first point is the all-minimum configuration.
pub fn sweep(
    engine: &CascadeEngine<'_>,
    mode: Mode,
    grid: &Grid,
    cap: usize,
) -> Result<Vec<CurvePoint>, SweepError> {
    let stages = engine.k() - 1;
    if grid.stages.len() != stages {
        return Err(SweepError::GridShape {
            expected: stages,
            found: grid.stages.len(),
        });
    }
    let (min, _) = engine.policy().range(engine.bundle().label_count());
    let choices: Vec<Vec<(f64, f64)>> = match mode {
        Mode::Sequential => grid
            .stages
            .iter()
            .map(|v| v.iter().map(|&t| (min, t)).collect())
            .collect(),
        Mode::Routing => {
            if engine.k() < 3 {
                return Err(CascadeError::RoutingRequiresK3(engine.k()).into());
            }
            routing_choices(grid, min)
        }
    };
    let size = choices.iter().map(|c| c.len() as u128).product::<u128>();
    if size > cap as u128 {
        return Err(SweepError::GridTooLarge { size, cap });
    }
    let size = size as usize;

    let decode = |mut index: usize| {
        let mut picks = vec![(0.0, 0.0); stages];
        for j in (0..stages).rev() {
            let c = &choices[j];
            picks[j] = c[index % c.len()];
            index /= c.len();
        }
        let thresholds: Vec<f64> = picks.iter().map(|p| p.1).collect();
        let skips: Vec<f64> = match mode {
            Mode::Sequential => Vec::new(),
            Mode::Routing => picks.iter().map(|p| p.0).collect(),
        };
        (thresholds, skips)
    };
    if let Some(first) = (size > 0).then(|| decode(0)) {
        engine.validate(mode, &first.0, &first.1)?;
    }

    Ok((0..size)
        .into_par_iter()
        .map(|index| {
            let (thresholds, skip_thresholds) = decode(index);
            let (mean_cost, accuracy) = engine.evaluate(&thresholds, &skip_thresholds);
            CurvePoint {
                thresholds,
                skip_thresholds,
                mean_cost,
                accuracy,
            }
        })
        .collect())
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Cost-ascending subset in which every point is strictly more accurate than
/// all cheaper points. Among equal points the lexicographically smallest
/// threshold vector is kept.
pub fn pareto_frontier(points: &[CurvePoint]) -> Vec<CurvePoint> {
    let mut order: Vec<&CurvePoint> = points.iter().collect();
    order.sort_by(|a, b| {
        a.mean_cost
            .total_cmp(&b.mean_cost)
            .then(b.accuracy.total_cmp(&a.accuracy))
            .then_with(|| lex(&a.thresholds, &b.thresholds))
            .then_with(|| lex(&a.skip_thresholds, &b.skip_thresholds))
    });
    let mut frontier: Vec<CurvePoint> = Vec::new();
    for p in order {
        if frontier
            .last()
            .is_none_or(|best| p.accuracy > best.accuracy)
        {
            frontier.push(p.clone());
        }
    }
    frontier
}

/// Mean accuracy over the frontier's cost range: the trapezoidal integral of
/// accuracy over cost divided by the cost span. A single point (or a zero
/// span) yields the first point's accuracy.
pub fn auc(frontier: &[CurvePoint]) -> Result<f64, SweepError> {
    let first = frontier.first().ok_or(SweepError::EmptyCurve)?;
    let last = frontier.last().expect("non-empty");
    let span = last.mean_cost - first.mean_cost;
    if frontier.len() == 1 || span <= 0.0 {
        return Ok(first.accuracy);
    }
    let area: f64 = frontier
        .windows(2)
        .map(|w| (w[1].mean_cost - w[0].mean_cost) * (w[0].accuracy + w[1].accuracy) / 2.0)
        .sum();
    Ok(area / span)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MatchedCost {
    Reached { cost: f64, improvement_percent: f64 },
    NotReached,
}

impl MatchedCost {
    pub fn cost(self) -> Option<f64> {
        match self {
            MatchedCost::Reached { cost, .. } => Some(cost),
            MatchedCost::NotReached => None,
        }
    }

    pub fn improvement_percent(self) -> Option<f64> {
        match self {
            MatchedCost::Reached {
                improvement_percent,
                ..
            } => Some(improvement_percent),
            MatchedCost::NotReached => None,
        }
    }
}

/// Smallest cost at which the linearly interpolated frontier reaches
/// `standalone_accuracy`, and the saving relative to `standalone_cost` in
/// percent.
pub fn matched_cost(
    frontier: &[CurvePoint],
    standalone_accuracy: f64,
    standalone_cost: f64,
) -> MatchedCost {
    let reached = |cost: f64| MatchedCost::Reached {
        cost,
        improvement_percent: 100.0 * (1.0 - cost / standalone_cost),
    };
    let Some(first) = frontier.first() else {
        return MatchedCost::NotReached;
    };
    if first.accuracy >= standalone_accuracy {
        return reached(first.mean_cost);
    }
    for w in frontier.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.accuracy < standalone_accuracy && b.accuracy >= standalone_accuracy {
            let frac = (standalone_accuracy - a.accuracy) / (b.accuracy - a.accuracy);
            return reached(a.mean_cost + frac * (b.mean_cost - a.mean_cost));
        }
    }
    MatchedCost::NotReached
}

/// Best frontier accuracy minus the largest model's accuracy, in points.
pub fn max_accuracy_gain(frontier: &[CurvePoint], largest_model_accuracy: f64) -> f64 {
    max_accuracy(frontier) - largest_model_accuracy
}

fn max_accuracy(frontier: &[CurvePoint]) -> f64 {
    frontier
        .iter()
        .map(|p| p.accuracy)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Cascade-versus-standalone comparison for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedEntry {
    pub model_id: String,
    pub standalone_accuracy: f64,
    pub standalone_cost: f64,
    pub cascade_cost_at_match: Option<f64>,
    pub improvement_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub policy: Policy,
    pub mode: Mode,
    /// Pareto frontier, cost ascending.
    pub points: Vec<CurvePoint>,
    pub auc: f64,
    pub max_accuracy: f64,
    /// `max_accuracy` minus the accuracy of the most expensive model.
    pub max_accuracy_gain: f64,
    pub matched: Vec<MatchedEntry>,
}

/// Frontier, AUC and per-model comparisons for a set of sweep points.
pub fn summarize(
    engine: &CascadeEngine<'_>,
    mode: Mode,
    points: &[CurvePoint],
) -> Result<CurveSummary, SweepError> {
    let frontier = pareto_frontier(points);
    let auc = auc(&frontier)?;
    let bundle = engine.bundle();
    let matched: Vec<MatchedEntry> = (0..engine.k())
        .map(|stage| {
            let m = engine.model_at(stage);
            let acc = bundle.standalone_accuracy(m);
            let cost = bundle.standalone_cost(m);
            let hit = matched_cost(&frontier, acc, cost);
            MatchedEntry {
                model_id: bundle.profiles()[m].model_id.clone(),
                standalone_accuracy: acc,
                standalone_cost: cost,
                cascade_cost_at_match: hit.cost(),
                improvement_percent: hit.improvement_percent(),
            }
        })
        .collect();
    let largest = matched.last().map(|m| m.standalone_accuracy).unwrap_or(0.0);
    Ok(CurveSummary {
        policy: engine.policy(),
        mode,
        auc,
        max_accuracy: max_accuracy(&frontier),
        max_accuracy_gain: max_accuracy_gain(&frontier, largest),
        points: frontier,
        matched,
    })
}
