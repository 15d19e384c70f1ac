//! Ensemble prediction rules, privacy noise and the server-side decision.
//!
//! Class indices in the public API are 1-based (`1..=k`). Ties are broken
//! towards the lowest class index everywhere unless a caller asks otherwise.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Maximum L1 deviation from 1 that is silently renormalised.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Deviations at or below this are left untouched so that stored vectors
/// load back bit-for-bit.
const EXACT_SUM_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("score vector needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("score {index} is {value}; scores must be finite and non-negative")]
    InvalidScore { index: usize, value: f64 },
    #[error("scores sum to {sum}, more than {NORMALIZATION_TOLERANCE} away from 1")]
    NotNormalized { sum: f64 },
    #[error("class index {index} out of range 1..={length}")]
    IndexOutOfRange { index: usize, length: usize },
    #[error("noise standard deviation must be finite and >= 0, got {0}")]
    InvalidNoiseStd(f64),
    #[error("power scale must be finite and > 0, got {0}")]
    InvalidPowerScale(f64),
    #[error("cannot decide on an empty vector")]
    Empty,
}

/// A client's normalised class beliefs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    scores: Vec<f64>,
}

impl ScoreVector {
    /// Validates raw scores. Sums within `NORMALIZATION_TOLERANCE` of one are
    /// rescaled to sum to one; anything further off is rejected.
    pub fn new(scores: Vec<f64>) -> Result<Self, EnsembleError> {
        if scores.len() < 2 {
            return Err(EnsembleError::TooFewClasses(scores.len()));
        }
        for (index, &value) in scores.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(EnsembleError::InvalidScore { index, value });
            }
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(EnsembleError::NotNormalized { sum });
        }
        let scores =
            if (sum - 1.0).abs() > EXACT_SUM_SLACK { scores.into_iter().map(|s| s / sum).collect() } else { scores };
        Ok(Self { scores })
    }

    /// Uniform beliefs over `k` classes.
    pub fn uniform(k: usize) -> Result<Self, EnsembleError> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn num_classes(&self) -> usize {
        self.scores.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }
}

/// How to resolve equal maxima.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    #[default]
    LowestIndex,
    HighestIndex,
}

/// A class decision. `tied` records that several classes shared the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    class_index: usize,
    tied: bool,
}

impl Decision {
    pub fn new(class_index: usize, num_classes: usize) -> Result<Self, EnsembleError> {
        if class_index == 0 || class_index > num_classes {
            return Err(EnsembleError::IndexOutOfRange { index: class_index, length: num_classes });
        }
        Ok(Self { class_index, tied: false })
    }

    /// 1-based class.
    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn tied(&self) -> bool {
        self.tied
    }
}

/// Maximising position (0-based) and whether it was tied.
pub fn argmax(values: &[f64], tie_rule: TieRule) -> Option<(usize, bool)> {
    let mut best: Option<(usize, f64)> = None;
    let mut tied = false;
    for (i, &v) in values.iter().enumerate() {
        match best {
            None => best = Some((i, v)),
            Some((_, b)) if v > b => {
                best = Some((i, v));
                tied = false;
            }
            Some((_, b)) if v == b => {
                tied = true;
                if tie_rule == TieRule::HighestIndex {
                    best = Some((i, v));
                }
            }
            _ => {}
        }
    }
    best.map(|(i, _)| (i, tied))
}

/// `l`-dimensional one-hot vector with a 1 at the (1-based) `index`.
pub fn to_one_hot(index: usize, length: usize) -> Result<Vec<f64>, EnsembleError> {
    if index == 0 || index > length {
        return Err(EnsembleError::IndexOutOfRange { index, length });
    }
    let mut v = vec![0.0; length];
    v[index - 1] = 1.0;
    Ok(v)
}

/// Belief summation: a client sends its scores as they are.
pub fn belief_prediction(scores: &ScoreVector) -> Vec<f64> {
    scores.scores.clone()
}

/// Majority voting: a client sends a one-hot vote for its top class.
pub fn vote_prediction(scores: &ScoreVector, tie_rule: TieRule) -> Vec<f64> {
    let (top, _) = argmax(&scores.scores, tie_rule).expect("score vectors are never empty");
    let mut v = vec![0.0; scores.num_classes()];
    v[top] = 1.0;
    v
}

/// A prediction after the client's Gaussian privacy noise has been added.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyContribution {
    pub values: Vec<f64>,
    pub noise_std_used: f64,
}

impl NoisyContribution {
    /// A contribution carrying no noise.
    pub fn exact(values: Vec<f64>) -> Self {
        Self { values, noise_std_used: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Adds i.i.d. `N(0, noise_std²)` to every coordinate.
pub fn add_privacy_noise<R: Rng + ?Sized>(
    prediction: &[f64],
    noise_std: f64,
    rng: &mut R,
) -> Result<NoisyContribution, EnsembleError> {
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(EnsembleError::InvalidNoiseStd(noise_std));
    }
    if noise_std == 0.0 {
        return Ok(NoisyContribution::exact(prediction.to_vec()));
    }
    let values = prediction
        .iter()
        .map(|&x| {
            let z: f64 = rng.sample(StandardNormal);
            x + noise_std * z
        })
        .collect();
    Ok(NoisyContribution { values, noise_std_used: noise_std })
}

/// Server decision: rescale by `1/A_t`, then argmax with lowest-index ties.
pub fn cis_decide(received: &[f64], power_scale: f64) -> Result<Decision, EnsembleError> {
    cis_decide_with(received, power_scale, TieRule::LowestIndex)
}

pub fn cis_decide_with(received: &[f64], power_scale: f64, tie_rule: TieRule) -> Result<Decision, EnsembleError> {
    if !power_scale.is_finite() || power_scale <= 0.0 {
        return Err(EnsembleError::InvalidPowerScale(power_scale));
    }
    let rescaled: Vec<f64> = received.iter().map(|z| z / power_scale).collect();
    let (index, tied) = argmax(&rescaled, tie_rule).ok_or(EnsembleError::Empty)?;
    debug_assert_eq!(argmax(received, tie_rule).map(|(i, _)| i), Some(index));
    Ok(Decision { class_index: index + 1, tied })
}
