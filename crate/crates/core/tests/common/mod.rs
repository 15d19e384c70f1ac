//! Test-side reference implementations, written without the library's
//! numerics so that agreement means something.
#![allow(dead_code)]

use std::f64::consts::PI;

use oac_ensemble::channel::{draw_channel_gains, threshold_for_participation, DEFAULT_FADING_SCALE};
use oac_ensemble::ensemble::ScoreVector;
use oac_ensemble::harness::{run_round, CellContext, ExperimentConfig, Method, SimulationOptions};
use oac_ensemble::providers::{ScoreDataset, Split};
use oac_ensemble::rng::{query_stream, StreamPurpose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Standard normal density.
pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Upper tail Q(x) = 1 − Φ(x) for x > 0 by the Laplace continued fraction
/// Q(x) = φ(x) / (x + 1/(x + 2/(x + 3/(x + …)))), evaluated bottom-up.
fn upper_tail_cf(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut f = x;
    for k in (1..=400).rev() {
        f = x + k as f64 / f;
    }
    phi(x) / f
}

/// Φ(x) − 1/2 = φ(x) · Σ x^{2n+1} / (2n+1)!!, with compensated summation.
fn central_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    let mut n = 0u32;
    while term.abs() > 1e-300 && n < 500 {
        let y = term - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
        n += 1;
        term *= x2 / (2 * n + 1) as f64;
        if term.abs() < 1e-20 * sum.abs() {
            break;
        }
    }
    phi(x) * sum
}

/// Oracle Φ(x): series on |x| ≤ 3, continued fraction beyond.
pub fn oracle_cdf(x: f64) -> f64 {
    if x.abs() <= 3.0 {
        0.5 + central_series(x)
    } else if x < 0.0 {
        upper_tail_cf(-x)
    } else {
        1.0 - upper_tail_cf(x)
    }
}

/// Oracle δ(ε, σ) = Φ(1/(√2σ) − εσ/√2) − e^ε Φ(−1/(√2σ) − εσ/√2), unclamped.
pub fn oracle_theorem1(epsilon: f64, sigma: f64) -> f64 {
    let r2 = 2f64.sqrt();
    let a = 1.0 / (r2 * sigma);
    let b = epsilon * sigma / r2;
    oracle_cdf(a - b) - epsilon.exp() * oracle_cdf(-a - b)
}

/// Oracle amplified δ′, straight from the definitions.
pub fn oracle_theorem2(epsilon_prime: f64, sigma: f64, p: f64, n: usize) -> f64 {
    let eta = p / (1.0 - (1.0 - p).powi(n as i32));
    let inner = (1.0 + (epsilon_prime.exp() - 1.0) / eta).ln();
    eta * oracle_theorem1(inner, sigma)
}

/// 20 points evenly spaced on [0.1, 10].
pub fn grid_20() -> Vec<f64> {
    (0..20).map(|i| 0.1 + i as f64 * (10.0 - 0.1) / 19.0).collect()
}

/// Argmax with the lowest index winning ties, returning 1-based class.
pub fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best + 1
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Scores on a quarter grid so that belief sums are exact and ties common.
pub fn quarter_grid_dataset(n: usize, k: usize, m: usize, seed: u64) -> ScoreDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(1..=k)).collect();
    let scores = (0..n * m)
        .map(|_| {
            let mut quarters = vec![0u32; k];
            for _ in 0..4 {
                quarters[rng.random_range(0..k)] += 1;
            }
            ScoreVector::new(quarters.iter().map(|&q| q as f64 / 4.0).collect()).unwrap()
        })
        .collect();
    ScoreDataset::new(n, k, scores, labels, vec![Split::Test; m]).unwrap()
}

pub fn cell(method: Method, epsilon: f64, snr_db: f64, p: f64, n: usize) -> ExperimentConfig {
    ExperimentConfig {
        method,
        epsilon,
        delta: 1e-5,
        snr_db,
        participation_p: p,
        num_clients: n,
        power_scale: 1.0,
        seeds: vec![0],
        options: SimulationOptions::default(),
    }
}

/// Runs every sample of `ds` through the pipeline with no noise of any
/// kind and compares each decision with direct aggregation over the
/// participants, recomputed from the channel draws. Returns the number of
/// rounds checked and how many of them hit a tie.
pub fn zero_noise_equivalence(ds: &ScoreDataset, method: Method, p: f64, seed: u64) -> Result<(usize, usize), String> {
    let config = cell(method, f64::INFINITY, f64::INFINITY, p, ds.num_clients());
    let ctx = CellContext::new(&config, ds).map_err(|e| e.to_string())?;
    let tau = threshold_for_participation(p, DEFAULT_FADING_SCALE).unwrap();
    let k = ds.num_classes();
    let mut ties = 0;
    for t in 0..ds.num_samples() {
        let outcome = run_round(&ctx, t, seed).map_err(|e| e.to_string())?;
        let gains = draw_channel_gains(
            ds.num_clients(),
            DEFAULT_FADING_SCALE,
            &mut query_stream(seed, t, StreamPurpose::ChannelGains, 0),
        )
        .unwrap();
        let expected_participants: Vec<usize> =
            (0..ds.num_clients()).filter(|&i| gains[i].norm() >= tau.max(1e-6)).collect();
        if outcome.participants != expected_participants {
            return Err(format!("sample {t}: participants {:?} vs {:?}", outcome.participants, expected_participants));
        }
        let mut total = vec![0.0; k];
        for &i in &expected_participants {
            let s = ds.score(i, t).as_slice();
            match method {
                Method::OacVote | Method::OrthVote => total[first_argmax(s) - 1] += 1.0,
                _ => {
                    for (acc, x) in total.iter_mut().zip(s) {
                        *acc += x;
                    }
                }
            }
        }
        let expected = if expected_participants.is_empty() {
            None
        } else {
            let best = first_argmax(&total);
            if total.iter().filter(|&&v| v == total[best - 1]).count() > 1 {
                ties += 1;
            }
            Some(best)
        };
        let got = outcome.decision.map(|d| d.class_index());
        if got != expected {
            return Err(format!("sample {t}: decision {got:?} vs {expected:?} (totals {total:?})"));
        }
    }
    Ok((ds.num_samples(), ties))
}
