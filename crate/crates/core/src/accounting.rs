//! Closed-form (ε, δ) accounting for the over-the-air ensemble mechanism.
//!
//! The aggregate received by the server, once divided by the power scale,
//! is the sum of the participants' predictions plus Gaussian noise of
//! standard deviation `sigma` per coordinate. A neighbouring model set can
//! move that sum by at most √2 (two differing one-hot vectors), so the
//! analytic Gaussian mechanism gives an exact δ for every ε. Random
//! participation further shrinks δ through subsampling amplification.
//!
//! Every function here is pure; nothing is cached or shared.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use thiserror::Error;

/// ε above which `e^ε · Φ(b)` is evaluated in log space.
const LOG_SPACE_EPSILON: f64 = 20.0;

/// Below this argument `ln Φ(x)` switches to the asymptotic Mills-ratio series.
const LOG_CDF_ASYMPTOTIC_CUTOFF: f64 = -20.0;

/// Largest representable value strictly below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Default initial calibration bracket.
pub const SIGMA_BRACKET: (f64, f64) = (1e-4, 1e4);

/// σ beyond which calibration gives up.
pub const DEFAULT_SIGMA_CEILING: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccountingError {
    #[error("invalid parameter `{name}`: {value} ({reason})")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("delta = 0 is unattainable with Gaussian noise")]
    ZeroDelta,
    #[error("calibration failed: no sigma below {ceiling} reaches delta {target_delta} at epsilon {epsilon}")]
    SigmaCeilingExceeded { epsilon: f64, target_delta: f64, ceiling: f64 },
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> AccountingError {
    AccountingError::InvalidParameter { name, value, reason }
}

fn require_positive(name: &'static str, value: f64) -> Result<f64, AccountingError> {
    if value.is_nan() || value <= 0.0 {
        Err(invalid(name, value, "must be > 0"))
    } else {
        Ok(value)
    }
}

/// An (ε, δ) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyGuarantee {
    epsilon: f64,
    delta: f64,
}

impl PrivacyGuarantee {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, AccountingError> {
        require_positive("epsilon", epsilon)?;
        if !(0.0..1.0).contains(&delta) {
            return Err(invalid("delta", delta, "must lie in [0, 1)"));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Noise scale and participation model that together determine a guarantee.
///
/// `sigma` is the standard deviation of the *aggregate* noise after the
/// server divides by the power scale; each of the `|P_t|` participants adds
/// `sigma / sqrt(|P_t|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismParams {
    sigma: f64,
    participation_p: f64,
    num_clients: usize,
}

impl MechanismParams {
    pub fn new(sigma: f64, participation_p: f64, num_clients: usize) -> Result<Self, AccountingError> {
        require_positive("sigma", sigma)?;
        validate_participation(participation_p)?;
        if num_clients == 0 {
            return Err(invalid("num_clients", 0.0, "must be >= 1"));
        }
        Ok(Self { sigma, participation_p, num_clients })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn participation_p(&self) -> f64 {
        self.participation_p
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }
}

fn validate_participation(p: f64) -> Result<f64, AccountingError> {
    if p.is_nan() || p <= 0.0 || p > 1.0 {
        Err(invalid("participation_p", p, "must lie in (0, 1]"))
    } else {
        Ok(p)
    }
}

/// L2 sensitivity of the noiseless aggregate for a given power scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    l2_sensitivity: f64,
    power_scale: f64,
}

impl Sensitivity {
    /// Sensitivity of `A_t · Σ f_i` when every `f_i` is an L1-normalised
    /// non-negative vector: the worst case swaps a one-hot vector for a
    /// different one-hot vector, giving `√2 · A_t`.
    pub fn for_power_scale(power_scale: f64) -> Result<Self, AccountingError> {
        require_positive("power_scale", power_scale)?;
        Ok(Self { l2_sensitivity: SQRT_2 * power_scale, power_scale })
    }

    pub fn l2_sensitivity(&self) -> f64 {
        self.l2_sensitivity
    }

    pub fn power_scale(&self) -> f64 {
        self.power_scale
    }
}

/// Conditional sampling probability of a fixed client and the ε it maps to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplifiedPrivacyParams {
    pub eta: f64,
    pub inner_epsilon: f64,
}

impl AmplifiedPrivacyParams {
    pub fn new(epsilon_prime: f64, participation_p: f64, num_clients: usize) -> Result<Self, AccountingError> {
        require_positive("epsilon", epsilon_prime)?;
        let eta = conditional_sampling_probability(participation_p, num_clients)?;
        Ok(Self { eta, inner_epsilon: inner_epsilon(epsilon_prime, eta) })
    }
}

/// `η = p / (1 − (1 − p)^n)`: probability that a given client was sampled,
/// conditioned on the round being non-empty.
pub fn conditional_sampling_probability(p: f64, num_clients: usize) -> Result<f64, AccountingError> {
    validate_participation(p)?;
    if num_clients == 0 {
        return Err(invalid("num_clients", 0.0, "must be >= 1"));
    }
    if p == 1.0 || num_clients == 1 {
        return Ok(1.0);
    }
    // 1 − (1 − p)^n without cancellation for small p.
    let nonempty = -(num_clients as f64 * (-p).ln_1p()).exp_m1();
    Ok((p / nonempty).min(1.0))
}

/// `ε = log(1 + (e^{ε′} − 1) / η)`.
fn inner_epsilon(epsilon_prime: f64, eta: f64) -> f64 {
    if eta == 1.0 {
        return epsilon_prime;
    }
    if epsilon_prime > 30.0 {
        // log((e^{ε′} − 1 + η)/η) = ε′ + log1p((η − 1)e^{−ε′}) − log η
        epsilon_prime + ((eta - 1.0) * (-epsilon_prime).exp()).ln_1p() - eta.ln()
    } else {
        (epsilon_prime.exp_m1() / eta).ln_1p()
    }
}

/// Standard normal CDF Φ(x).
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// ln Φ(x), accurate far into the lower tail.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x >= LOG_CDF_ASYMPTOTIC_CUTOFF {
        return std_normal_cdf(x).ln();
    }
    // Φ(x) = φ(x)/|x| · (1 − 1/x² + 3/x⁴ − 15/x⁶ + …); with x² ≥ 400 the
    // first dozen terms are far past double precision.
    let inv_x2 = 1.0 / (x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..16 {
        term *= -((2 * k - 1) as f64) * inv_x2;
        sum += term;
    }
    -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + sum.ln()
}

/// Φ(a − b) − e^ε Φ(−a − b), clamped to [0, 1).
fn gaussian_profile(a: f64, b: f64, epsilon: f64) -> f64 {
    if epsilon == f64::INFINITY {
        return 0.0;
    }
    let head = std_normal_cdf(a - b);
    let tail = if epsilon > LOG_SPACE_EPSILON {
        (epsilon + log_std_normal_cdf(-a - b)).exp()
    } else {
        epsilon.exp() * std_normal_cdf(-a - b)
    };
    (head - tail).clamp(0.0, ONE_MINUS_ULP)
}

/// ln of the unclamped profile; `-inf` when it is not positive.
fn log_gaussian_profile(a: f64, b: f64, epsilon: f64) -> f64 {
    if epsilon == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    let log_head = log_std_normal_cdf(a - b);
    let r = epsilon + log_std_normal_cdf(-a - b) - log_head;
    if r >= 0.0 {
        return f64::NEG_INFINITY;
    }
    log_head + (-r.exp_m1()).ln()
}

/// Exact δ of the Gaussian mechanism with L2 sensitivity `sensitivity` and
/// per-coordinate noise standard deviation `noise_std`.
pub fn analytic_gm_delta(epsilon: f64, sensitivity: f64, noise_std: f64) -> Result<f64, AccountingError> {
    require_positive("epsilon", epsilon)?;
    require_positive("noise_std", noise_std)?;
    if sensitivity.is_nan() || sensitivity < 0.0 {
        return Err(invalid("sensitivity", sensitivity, "must be >= 0"));
    }
    if sensitivity == 0.0 {
        return Ok(0.0);
    }
    let a = sensitivity / (2.0 * noise_std);
    let b = epsilon * noise_std / sensitivity;
    Ok(gaussian_profile(a, b, epsilon))
}

/// δ when every client participates: the analytic Gaussian mechanism with
/// sensitivity √2·A_t and noise σ·A_t, in which A_t cancels.
pub fn theorem1_delta(epsilon: f64, sigma: f64) -> Result<f64, AccountingError> {
    require_positive("epsilon", epsilon)?;
    require_positive("sigma", sigma)?;
    let a = FRAC_1_SQRT_2 / sigma;
    let b = epsilon * sigma * FRAC_1_SQRT_2;
    Ok(gaussian_profile(a, b, epsilon))
}

/// δ′ under independent participation with probability p.
pub fn theorem2_delta(epsilon_prime: f64, params: &MechanismParams) -> Result<f64, AccountingError> {
    let amplified = AmplifiedPrivacyParams::new(epsilon_prime, params.participation_p, params.num_clients)?;
    let inner = theorem1_delta(amplified.inner_epsilon, params.sigma)?;
    Ok(amplified.eta * inner)
}

/// ln of [`theorem1_delta`], finite long after δ itself underflows to 0.
pub fn theorem1_log_delta(epsilon: f64, sigma: f64) -> Result<f64, AccountingError> {
    require_positive("epsilon", epsilon)?;
    require_positive("sigma", sigma)?;
    Ok(log_gaussian_profile(FRAC_1_SQRT_2 / sigma, epsilon * sigma * FRAC_1_SQRT_2, epsilon))
}

/// ln of [`theorem2_delta`].
pub fn theorem2_log_delta(epsilon_prime: f64, params: &MechanismParams) -> Result<f64, AccountingError> {
    let amplified = AmplifiedPrivacyParams::new(epsilon_prime, params.participation_p, params.num_clients)?;
    Ok(amplified.eta.ln() + theorem1_log_delta(amplified.inner_epsilon, params.sigma)?)
}

/// Smallest σ (up to `tolerance` in δ) whose amplified δ′ does not exceed
/// `target.delta()`.
///
/// The returned σ always satisfies `δ′(σ) ≤ target` and, unless the bracket
/// collapses to adjacent floats first, `δ′(σ) ≥ target − tolerance`.
/// ε = ∞ needs no noise and gives σ = 0.
pub fn calibrate_sigma(
    target: PrivacyGuarantee,
    participation_p: f64,
    num_clients: usize,
    tolerance: f64,
) -> Result<f64, AccountingError> {
    calibrate_sigma_with_ceiling(target, participation_p, num_clients, tolerance, DEFAULT_SIGMA_CEILING)
}

pub fn calibrate_sigma_with_ceiling(
    target: PrivacyGuarantee,
    participation_p: f64,
    num_clients: usize,
    tolerance: f64,
    ceiling: f64,
) -> Result<f64, AccountingError> {
    require_positive("tolerance", tolerance)?;
    if target.epsilon == f64::INFINITY {
        return Ok(0.0);
    }
    if target.delta == 0.0 {
        return Err(AccountingError::ZeroDelta);
    }
    let epsilon = target.epsilon;
    let goal = target.delta;
    let delta_at = |sigma: f64| -> Result<f64, AccountingError> {
        theorem2_delta(epsilon, &MechanismParams::new(sigma, participation_p, num_clients)?)
    };

    let (lo0, hi0) = SIGMA_BRACKET;
    let mut hi = hi0.min(ceiling);
    let mut lo = lo0.min(hi / 10.0);
    while delta_at(hi)? > goal {
        if hi >= ceiling {
            return Err(AccountingError::SigmaCeilingExceeded { epsilon, target_delta: goal, ceiling });
        }
        lo = hi;
        hi = (hi * 10.0).min(ceiling);
    }
    while delta_at(lo)? <= goal {
        hi = lo;
        lo /= 10.0;
        if lo < f64::MIN_POSITIVE {
            return Ok(hi);
        }
    }

    // Invariant: δ(lo) > goal ≥ δ(hi).
    for _ in 0..2000 {
        let mid = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        let d = delta_at(mid)?;
        if d > goal {
            lo = mid;
        } else {
            hi = mid;
            if goal - d <= tolerance {
                break;
            }
        }
    }
    Ok(hi)
}

/// Per-client noise standard deviation σ / √|P_t|.
pub fn per_client_noise_std(sigma: f64, participants: usize) -> Result<f64, AccountingError> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(invalid("sigma", sigma, "must be >= 0"));
    }
    if participants == 0 {
        return Err(invalid("participants", 0.0, "must be >= 1"));
    }
    Ok(sigma / (participants as f64).sqrt())
}
