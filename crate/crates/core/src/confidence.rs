//! Per-instance confidence scores that decide output-vs-escalate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::DISTRIBUTION_SUM_TOLERANCE;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfidenceError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("input and maximum lengths must be at least 1")]
    NonPositiveLength,
    #[error("unknown policy `{0}` (expected maxprob, dtu, random or heuristic)")]
    UnknownPolicy(String),
}

/// Confidence estimator used at every stage of a cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Largest softmax probability.
    MaxProb,
    /// L2 distance between the distribution and the uniform distribution.
    Dtu,
    /// Keyed pseudo-random draw, independent of the prediction.
    Random,
    /// Input length; shorter inputs are treated as easier by default.
    Heuristic,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::MaxProb,
        Policy::Dtu,
        Policy::Random,
        Policy::Heuristic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::MaxProb => "maxprob",
            Policy::Dtu => "dtu",
            Policy::Random => "random",
            Policy::Heuristic => "heuristic",
        }
    }

    /// Closed range of values this policy can produce for `label_count` labels.
    pub fn range(self, label_count: usize) -> (f64, f64) {
        let n = label_count.max(1) as f64;
        match self {
            Policy::MaxProb => (1.0 / n, 1.0),
            Policy::Dtu => (0.0, dtu_max(label_count)),
            Policy::Random | Policy::Heuristic => (0.0, 1.0),
        }
    }

    /// Smallest threshold at which every confidence escalates: the next
    /// representable value above the range maximum.
    pub fn threshold_ceiling(self, label_count: usize) -> f64 {
        next_up(self.range(label_count).1)
    }

    /// Whether `threshold` lies in `[min, ceiling]`.
    pub fn accepts_threshold(self, threshold: f64, label_count: usize) -> bool {
        let (lo, _) = self.range(label_count);
        threshold >= lo && threshold <= self.threshold_ceiling(label_count)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = ConfidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "maxprob" | "max_prob" | "max-prob" => Ok(Policy::MaxProb),
            "dtu" => Ok(Policy::Dtu),
            "random" => Ok(Policy::Random),
            "heuristic" | "length" => Ok(Policy::Heuristic),
            _ => Err(ConfidenceError::UnknownPolicy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceScore {
    pub value: f64,
    pub policy: Policy,
}

/// Settings for the length heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HeuristicOptions {
    /// Normalizing length; the bundle's longest input when unset.
    pub max_length: Option<u32>,
    /// Treat longer inputs as more confident instead of shorter ones.
    pub invert: bool,
}

fn dtu_max(label_count: usize) -> f64 {
    let n = label_count.max(1) as f64;
    ((n - 1.0) / n).sqrt()
}

fn next_up(x: f64) -> f64 {
    debug_assert!(x.is_finite() && x >= 0.0);
    f64::from_bits(x.to_bits() + 1)
}

fn check_distribution(distribution: &[f64]) -> Result<(), ConfidenceError> {
    if distribution.is_empty() {
        return Err(ConfidenceError::InvalidDistribution("empty".into()));
    }
    if let Some(v) = distribution.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(ConfidenceError::InvalidDistribution(format!(
            "entry {v} outside [0, 1]"
        )));
    }
    let sum: f64 = distribution.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
        return Err(ConfidenceError::InvalidDistribution(format!(
            "entries sum to {sum}"
        )));
    }
    Ok(())
}

fn largest(distribution: &[f64]) -> f64 {
    distribution
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Maximum softmax probability, clamped to `[1/|Y|, 1]` so that values within
/// the sum tolerance stay inside the policy range.
pub fn max_prob(distribution: &[f64]) -> Result<ConfidenceScore, ConfidenceError> {
    check_distribution(distribution)?;
    let (lo, hi) = Policy::MaxProb.range(distribution.len());
    Ok(ConfidenceScore {
        value: largest(distribution).clamp(lo, hi),
        policy: Policy::MaxProb,
    })
}

/// Euclidean distance to the uniform distribution over the same labels.
pub fn dtu(distribution: &[f64]) -> Result<ConfidenceScore, ConfidenceError> {
    check_distribution(distribution)?;
    let n = distribution.len();
    let value = if n == 2 {
        // On the 2-simplex ||p - u|| = sqrt(2) * (max p - 1/2); evaluating it
        // this way keeps the score an exact monotone function of max p.
        std::f64::consts::SQRT_2 * (largest(distribution) - 0.5).max(0.0)
    } else {
        let u = 1.0 / n as f64;
        distribution
            .iter()
            .map(|p| (p - u) * (p - u))
            .sum::<f64>()
            .sqrt()
    };
    Ok(ConfidenceScore {
        value: value.clamp(0.0, dtu_max(n)),
        policy: Policy::Dtu,
    })
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic value in `[0, 1)` keyed by `(seed, instance_id, stage)`.
pub fn random_conf(seed: u64, instance_id: &str, stage: usize) -> ConfidenceScore {
    let mut x = splitmix64(seed);
    x = splitmix64(x ^ fnv1a(instance_id.as_bytes()));
    x = splitmix64(x ^ stage as u64);
    ConfidenceScore {
        value: (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64),
        policy: Policy::Random,
    }
}

/// `1 - input_length / max_length`, clamped to `[0, 1]`.
pub fn heuristic_conf(
    input_length: u32,
    max_length: u32,
) -> Result<ConfidenceScore, ConfidenceError> {
    heuristic_conf_with(input_length, max_length, false)
}

/// Length heuristic; with `invert`, longer inputs score higher.
pub fn heuristic_conf_with(
    input_length: u32,
    max_length: u32,
    invert: bool,
) -> Result<ConfidenceScore, ConfidenceError> {
    if input_length == 0 || max_length == 0 {
        return Err(ConfidenceError::NonPositiveLength);
    }
    let ratio = (f64::from(input_length) / f64::from(max_length)).clamp(0.0, 1.0);
    let value = if invert { ratio } else { 1.0 - ratio };
    Ok(ConfidenceScore {
        value,
        policy: Policy::Heuristic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn max_prob_examples() {
        assert_eq!(max_prob(&[0.25; 4]).unwrap().value, 0.25);
        assert_eq!(max_prob(&[1.0, 0.0, 0.0]).unwrap().value, 1.0);
        assert_eq!(max_prob(&[0.1, 0.6, 0.3]).unwrap().value, 0.6);
        assert!(max_prob(&[0.5, 0.6]).is_err());
        assert!(max_prob(&[]).is_err());
    }

    #[test]
    fn dtu_examples() {
        assert_eq!(dtu(&[0.25; 4]).unwrap().value, 0.0);
        assert_eq!(dtu(&[0.5, 0.5]).unwrap().value, 0.0);
        assert!((dtu(&[1.0, 0.0, 0.0, 0.0]).unwrap().value - 0.75f64.sqrt()).abs() < 1e-12);
        assert!((dtu(&[1.0, 0.0, 0.0, 0.0]).unwrap().value - 0.86603).abs() < 1e-5);
        assert!((dtu(&[0.9, 0.1]).unwrap().value - 2f64.sqrt() * 0.4).abs() < 1e-12);
        assert!((dtu(&[0.9, 0.1]).unwrap().value - 0.56569).abs() < 1e-5);
    }

    #[test]
    fn random_is_keyed_and_deterministic() {
        let a = random_conf(1, "a", 1).value;
        assert_eq!(a, random_conf(1, "a", 1).value);
        assert_ne!(a, random_conf(1, "a", 2).value);
        let differing = (0..1000)
            .filter(|i| {
                let id = format!("id{i}");
                random_conf(1, &id, 1).value != random_conf(2, &id, 1).value
            })
            .count();
        assert!(differing >= 990, "{differing}");
    }

    #[test]
    fn random_mean_is_centered() {
        let mean = (0..10_000)
            .map(|i| random_conf(7, &format!("x{i}"), 1).value)
            .sum::<f64>()
            / 10_000.0;
        assert!((0.48..=0.52).contains(&mean), "{mean}");
    }

    #[test]
    fn heuristic_examples() {
        assert_eq!(heuristic_conf(100, 100).unwrap().value, 0.0);
        assert!((heuristic_conf(1, 100).unwrap().value - 0.99).abs() < 1e-12);
        assert_eq!(heuristic_conf(50, 100).unwrap().value, 0.5);
        assert_eq!(heuristic_conf(300, 100).unwrap().value, 0.0);
        assert_eq!(heuristic_conf_with(50, 200, true).unwrap().value, 0.25);
        assert_eq!(
            heuristic_conf(0, 100),
            Err(ConfidenceError::NonPositiveLength)
        );
    }

    #[test]
    fn binary_dtu_general_formula_agrees_with_closed_form() {
        for p in [0.5, 0.51, 0.7, 0.9, 0.999, 1.0] {
            let d = [p, 1.0 - p];
            let general = d.iter().map(|x| (x - 0.5) * (x - 0.5)).sum::<f64>().sqrt();
            assert!((dtu(&d).unwrap().value - general).abs() < 1e-12);
        }
    }

    #[test]
    fn ceiling_exceeds_every_value() {
        for policy in Policy::ALL {
            for n in 2..6 {
                let (lo, hi) = policy.range(n);
                let c = policy.threshold_ceiling(n);
                assert!(c > hi && lo <= hi);
                assert!(policy.accepts_threshold(lo, n) && policy.accepts_threshold(c, n));
                assert!(!policy.accepts_threshold(next_up(c), n));
            }
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!("entropy".parse::<Policy>().is_err());
    }

    fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..10.0, len).prop_filter_map("nonzero", |w| {
            let total: f64 = w.iter().sum();
            (total > 1e-9).then(|| w.iter().map(|x| x / total).collect())
        })
    }

    proptest! {
        #[test]
        fn binary_dtu_is_affine_in_max_prob(p in 0.0f64..=1.0) {
            let d = [p, 1.0 - p];
            let m = max_prob(&d).unwrap().value;
            let v = dtu(&d).unwrap().value;
            prop_assert!((v - 2f64.sqrt() * (m - 0.5)).abs() < 1e-12);
        }

        #[test]
        fn scores_stay_in_range(d in (2usize..7).prop_flat_map(distribution)) {
            let n = d.len();
            let m = max_prob(&d).unwrap().value;
            let v = dtu(&d).unwrap().value;
            let (lo, hi) = Policy::MaxProb.range(n);
            prop_assert!(m >= lo && m <= hi);
            let (lo, hi) = Policy::Dtu.range(n);
            prop_assert!(v >= lo && v <= hi);
        }

        #[test]
        fn permutation_invariance(d in (2usize..7).prop_flat_map(distribution), rot in 0usize..7) {
            let mut r = d.clone();
            let k = rot % r.len();
            r.rotate_left(k);
            prop_assert_eq!(max_prob(&d).unwrap().value, max_prob(&r).unwrap().value);
            prop_assert!((dtu(&d).unwrap().value - dtu(&r).unwrap().value).abs() < 1e-12);
        }

        #[test]
        fn random_in_unit_interval(seed: u64, id in "[a-z0-9]{1,12}", stage in 0usize..8) {
            let v = random_conf(seed, &id, stage).value;
            prop_assert!((0.0..1.0).contains(&v));
        }
    }
}
