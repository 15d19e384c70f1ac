//! Wireless medium: Rayleigh fading, threshold participation, channel
//! inversion and the two transmission schemes.
//!
//! A participant sends `y_i = A_t · g_i / h_i`. Over the air the channel
//! multiplies by `h_i` and sums, so the server sees `A_t · Σ g_i + n_t`.
//! With orthogonal access every participant gets its own `k` channel uses
//! and the server sees `A_t · g_i + n_{i,t}` separately.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::ensemble::NoisyContribution;

/// Fading scale giving `E|h|² = 1`.
pub const DEFAULT_FADING_SCALE: f64 = FRAC_1_SQRT_2;

/// Gains weaker than this never transmit, whatever the threshold.
pub const MIN_GAIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel parameter `{name}`: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("client {client} has |h| = {magnitude} below threshold {threshold} but tried to transmit")]
    ProtocolViolation { client: usize, magnitude: f64, threshold: f64 },
    #[error("client {client} is not part of this round ({num_clients} clients)")]
    UnknownClient { client: usize, num_clients: usize },
    #[error("client {0} transmitted twice in one round")]
    DuplicateSender(usize),
    #[error("contribution from client {client} has {got} entries, expected {expected}")]
    DimensionMismatch { client: usize, got: usize, expected: usize },
}

fn check(name: &'static str, value: f64, ok: bool) -> Result<f64, ChannelError> {
    if ok && !value.is_nan() {
        Ok(value)
    } else {
        Err(ChannelError::InvalidParameter { name, value })
    }
}

/// `n` i.i.d. circular complex Gaussian gains with per-component standard
/// deviation `fading_scale`.
pub fn draw_channel_gains<R: Rng + ?Sized>(
    n: usize,
    fading_scale: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>, ChannelError> {
    if n == 0 {
        return Err(ChannelError::InvalidParameter { name: "n", value: 0.0 });
    }
    check("fading_scale", fading_scale, fading_scale > 0.0 && fading_scale.is_finite())?;
    Ok((0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(fading_scale * re, fading_scale * im)
        })
        .collect())
}

/// Magnitude threshold `τ` with `P(|h| ≥ τ) = target_p` under Rayleigh fading.
pub fn threshold_for_participation(target_p: f64, fading_scale: f64) -> Result<f64, ChannelError> {
    check("target_p", target_p, target_p > 0.0 && target_p <= 1.0)?;
    check("fading_scale", fading_scale, fading_scale > 0.0 && fading_scale.is_finite())?;
    Ok(fading_scale * (-2.0 * target_p.ln()).sqrt())
}

/// Channel noise standard deviation for a channel SNR in dB.
///
/// SNR is `A_t² · P_sig / σ²_channel` with `P_sig = 1/k`. An infinite SNR
/// gives a noiseless channel.
pub fn channel_noise_std_for_snr(snr_db: f64, power_scale: f64, num_classes: usize) -> Result<f64, ChannelError> {
    check("snr_db", snr_db, snr_db > f64::NEG_INFINITY)?;
    check("power_scale", power_scale, power_scale > 0.0 && power_scale.is_finite())?;
    if num_classes == 0 {
        return Err(ChannelError::InvalidParameter { name: "num_classes", value: 0.0 });
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    let signal_power = power_scale * power_scale / num_classes as f64;
    Ok((signal_power / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// Channel state and power settings for one inference round.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRound {
    gains: Vec<Complex64>,
    participation_threshold: f64,
    extra_participation_prob: f64,
    power_scale: f64,
    channel_noise_std: f64,
}

impl ChannelRound {
    pub fn new(
        gains: Vec<Complex64>,
        participation_threshold: f64,
        extra_participation_prob: f64,
        power_scale: f64,
        channel_noise_std: f64,
    ) -> Result<Self, ChannelError> {
        if gains.is_empty() {
            return Err(ChannelError::InvalidParameter { name: "gains", value: 0.0 });
        }
        check("participation_threshold", participation_threshold, participation_threshold >= 0.0)?;
        check(
            "extra_participation_prob",
            extra_participation_prob,
            extra_participation_prob > 0.0 && extra_participation_prob <= 1.0,
        )?;
        check("power_scale", power_scale, power_scale > 0.0 && power_scale.is_finite())?;
        check("channel_noise_std", channel_noise_std, channel_noise_std >= 0.0 && channel_noise_std.is_finite())?;
        Ok(Self { gains, participation_threshold, extra_participation_prob, power_scale, channel_noise_std })
    }

    pub fn num_clients(&self) -> usize {
        self.gains.len()
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }

    pub fn power_scale(&self) -> f64 {
        self.power_scale
    }

    pub fn channel_noise_std(&self) -> f64 {
        self.channel_noise_std
    }

    pub fn participation_threshold(&self) -> f64 {
        self.participation_threshold
    }

    /// Whether client `i`'s gain clears both the threshold and the minimum-gain guard.
    pub fn is_eligible(&self, client: usize) -> bool {
        self.gains
            .get(client)
            .map(|h| {
                let mag = h.norm();
                mag >= self.participation_threshold && mag >= MIN_GAIN
            })
            .unwrap_or(false)
    }

    /// Realised participant set, ascending. One uniform draw is consumed per
    /// client regardless of eligibility.
    pub fn sample_participants<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        (0..self.gains.len())
            .filter(|&i| {
                let u: f64 = rng.random();
                self.is_eligible(i) && u < self.extra_participation_prob
            })
            .collect()
    }

    fn validate_senders(&self, senders: &[(usize, NoisyContribution)], k: usize) -> Result<(), ChannelError> {
        let mut seen = vec![false; self.gains.len()];
        for (client, contribution) in senders {
            let client = *client;
            if client >= self.gains.len() {
                return Err(ChannelError::UnknownClient { client, num_clients: self.gains.len() });
            }
            if std::mem::replace(&mut seen[client], true) {
                return Err(ChannelError::DuplicateSender(client));
            }
            if !self.is_eligible(client) {
                return Err(ChannelError::ProtocolViolation {
                    client,
                    magnitude: self.gains[client].norm(),
                    threshold: self.participation_threshold.max(MIN_GAIN),
                });
            }
            if contribution.len() != k {
                return Err(ChannelError::DimensionMismatch { client, got: contribution.len(), expected: k });
            }
        }
        Ok(())
    }

    /// Channel-inverted transmit signal `A_t · g / h`.
    fn precode(&self, client: usize, values: &[f64]) -> Vec<Complex64> {
        let scale = Complex64::new(self.power_scale, 0.0) / self.gains[client];
        values.iter().map(|&g| scale * g).collect()
    }
}

/// What the server receives in one over-the-air round.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    pub values: Vec<f64>,
    /// |P_t|; simulator metadata, not visible to the server's decision.
    pub num_participants: usize,
    pub total_transmit_energy: f64,
    /// No client transmitted; `values` is pure channel noise.
    pub empty: bool,
}

fn awgn<R: Rng + ?Sized>(std: f64, k: usize, rng: &mut R) -> impl Iterator<Item = f64> + '_ {
    (0..k).map(move |_| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

/// Simultaneous analog transmission over `k` shared channel uses.
pub fn transmit_oac<R: Rng + ?Sized>(
    senders: &[(usize, NoisyContribution)],
    round: &ChannelRound,
    num_classes: usize,
    rng: &mut R,
) -> Result<ReceivedSignal, ChannelError> {
    round.validate_senders(senders, num_classes)?;
    let mut air = vec![0.0; num_classes];
    let mut energy = 0.0;
    for (client, contribution) in senders {
        energy += round.precode(*client, &contribution.values).iter().map(|y| y.norm_sqr()).sum::<f64>();
        for (slot, &g) in air.iter_mut().zip(&contribution.values) {
            *slot += round.power_scale * g;
        }
    }
    // Inversion makes the effective channel h · h⁻¹ = 1 exactly; computing
    // the complex product would only add rounding that can flip exact ties.
    // The noise lives on the real component.
    let values = air.iter().zip(awgn(round.channel_noise_std, num_classes, rng)).map(|(s, n)| s + n).collect();
    Ok(ReceivedSignal {
        values,
        num_participants: senders.len(),
        total_transmit_energy: energy,
        empty: senders.is_empty(),
    })
}

/// Per-client receptions under orthogonal access.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalReception {
    /// `(client, A_t · g_i + n_i)` in sender order.
    pub per_client: Vec<(usize, Vec<f64>)>,
    pub channel_uses: usize,
    pub total_transmit_energy: f64,
}

impl OrthogonalReception {
    /// Coordinate-wise sum of the separate receptions.
    pub fn summed(&self, num_classes: usize) -> Vec<f64> {
        let mut total = vec![0.0; num_classes];
        for (_, v) in &self.per_client {
            for (t, x) in total.iter_mut().zip(v) {
                *t += x;
            }
        }
        total
    }
}

/// Each participant on its own `k` channel uses, with independent AWGN.
pub fn transmit_orthogonal<R: Rng + ?Sized>(
    senders: &[(usize, NoisyContribution)],
    round: &ChannelRound,
    num_classes: usize,
    rng: &mut R,
) -> Result<OrthogonalReception, ChannelError> {
    round.validate_senders(senders, num_classes)?;
    let mut energy = 0.0;
    let per_client = senders
        .iter()
        .map(|(client, contribution)| {
            energy += round.precode(*client, &contribution.values).iter().map(|y| y.norm_sqr()).sum::<f64>();
            let received: Vec<f64> = contribution
                .values
                .iter()
                .zip(awgn(round.channel_noise_std, num_classes, rng))
                .map(|(&g, n)| round.power_scale * g + n)
                .collect();
            (*client, received)
        })
        .collect();
    Ok(OrthogonalReception { per_client, channel_uses: senders.len() * num_classes, total_transmit_energy: energy })
}
