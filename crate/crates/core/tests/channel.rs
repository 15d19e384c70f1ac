mod common;

use num_complex::Complex64;
use oac_ensemble::channel::{
    channel_noise_std_for_snr, draw_channel_gains, threshold_for_participation, transmit_oac, transmit_orthogonal,
    ChannelError, ChannelRound, DEFAULT_FADING_SCALE,
};
use oac_ensemble::ensemble::{add_privacy_noise, NoisyContribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn aggregate_noise_variance(sigma_ch: f64, participants: usize, power: f64, sigma_client: f64, rounds: usize) -> f64 {
    let k = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut samples = Vec::with_capacity(rounds * k);
    for _ in 0..rounds {
        let gains = draw_channel_gains(participants, DEFAULT_FADING_SCALE, &mut rng).unwrap();
        let round = ChannelRound::new(gains, 0.0, 1.0, power, sigma_ch).unwrap();
        let clean: Vec<Vec<f64>> = (0..participants)
            .map(|_| {
                let x: f64 = rng.random();
                vec![x, 1.0 - x]
            })
            .collect();
        let senders: Vec<(usize, NoisyContribution)> =
            clean.iter().enumerate().map(|(i, c)| (i, add_privacy_noise(c, sigma_client, &mut rng).unwrap())).collect();
        if senders.iter().any(|(i, _)| !round.is_eligible(*i)) {
            continue;
        }
        let rx = transmit_oac(&senders, &round, k, &mut rng).unwrap();
        for j in 0..k {
            let signal: f64 = clean.iter().map(|c| power * c[j]).sum();
            samples.push(rx.values[j] - signal);
        }
    }
    common::mean_var(&samples).1
}

#[test]
fn aggregate_noise_variance_law() {
    for &(sc, np, a, scl) in &[(1.0, 4, 2.0, 0.5), (0.3, 10, 1.0, 0.2), (0.0, 3, 0.5, 1.5)] {
        let want: f64 = sc * sc + np as f64 * a * a * scl * scl;
        let got = aggregate_noise_variance(sc, np, a, scl, 20_000);
        assert!((got / want - 1.0).abs() < 0.05, "({sc},{np},{a},{scl}): {got} vs {want}");
    }
}

#[test]
fn inversion_delivers_exact_scaled_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let gains = draw_channel_gains(5, DEFAULT_FADING_SCALE, &mut rng).unwrap();
        let round = ChannelRound::new(gains, 0.0, 1.0, 2.0, 0.0).unwrap();
        let senders: Vec<(usize, NoisyContribution)> = vec![
            (0, NoisyContribution::exact(vec![0.25, 0.75, 0.0])),
            (2, NoisyContribution::exact(vec![0.0, 1.0, 0.0])),
            (4, NoisyContribution::exact(vec![0.5, 0.25, 0.25])),
        ];
        let rx = transmit_oac(&senders, &round, 3, &mut rng).unwrap();
        assert_eq!(rx.values, vec![1.5, 4.0, 0.5]);
        assert_eq!(rx.num_participants, 3);
        assert!(!rx.empty);
    }
}

#[test]
fn transmit_energy_pays_for_inversion() {
    let gains = vec![Complex64::new(0.5, 0.0), Complex64::new(0.0, 2.0)];
    let round = ChannelRound::new(gains, 0.0, 1.0, 3.0, 0.0).unwrap();
    let senders = vec![(0, NoisyContribution::exact(vec![1.0, 0.0])), (1, NoisyContribution::exact(vec![0.6, 0.8]))];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // A²‖g‖²/|h|² per client: 9·1/0.25 + 9·1/4.
    let want = 36.0 + 2.25;
    let oac = transmit_oac(&senders, &round, 2, &mut rng).unwrap();
    assert!((oac.total_transmit_energy - want).abs() < 1e-12);
    let orth = transmit_orthogonal(&senders, &round, 2, &mut rng).unwrap();
    assert!((orth.total_transmit_energy - want).abs() < 1e-12);
    assert_eq!(orth.channel_uses, 4);
}

#[test]
fn orthogonal_and_oac_agree_without_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let gains = draw_channel_gains(4, DEFAULT_FADING_SCALE, &mut rng).unwrap();
        let round = ChannelRound::new(gains, 0.0, 1.0, 1.0, 0.0).unwrap();
        let senders: Vec<(usize, NoisyContribution)> = (0..4)
            .map(|i| {
                let x: f64 = rng.random();
                (i, NoisyContribution::exact(vec![x, 1.0 - x]))
            })
            .collect();
        let oac = transmit_oac(&senders, &round, 2, &mut rng).unwrap();
        let orth = transmit_orthogonal(&senders, &round, 2, &mut rng).unwrap();
        assert_eq!(oac.values, orth.summed(2));
    }
}

#[test]
fn participation_frequency_matches_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &p in &[0.1, 0.5, 0.9] {
        let tau = threshold_for_participation(p, DEFAULT_FADING_SCALE).unwrap();
        let trials = 40_000;
        let mut hits = 0;
        for _ in 0..trials / 10 {
            let gains = draw_channel_gains(10, DEFAULT_FADING_SCALE, &mut rng).unwrap();
            let round = ChannelRound::new(gains, tau, 1.0, 1.0, 0.0).unwrap();
            hits += round.sample_participants(&mut rng).len();
        }
        let freq = hits as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se, "p={p}: {freq}");
    }
    assert_eq!(threshold_for_participation(1.0, DEFAULT_FADING_SCALE).unwrap(), 0.0);
}

#[test]
fn thinning_scales_participation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut hits = 0;
    for _ in 0..4000 {
        let gains = draw_channel_gains(10, DEFAULT_FADING_SCALE, &mut rng).unwrap();
        let round = ChannelRound::new(gains, 0.0, 0.25, 1.0, 0.0).unwrap();
        hits += round.sample_participants(&mut rng).len();
    }
    let freq = hits as f64 / 40_000.0;
    assert!((freq - 0.25).abs() < 0.01, "{freq}");
}

#[test]
fn unit_mean_square_gain() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gains = draw_channel_gains(100_000, DEFAULT_FADING_SCALE, &mut rng).unwrap();
    let ms = gains.iter().map(|h| h.norm_sqr()).sum::<f64>() / gains.len() as f64;
    assert!((ms - 1.0).abs() < 0.02, "{ms}");
}

#[test]
fn snr_convention() {
    assert!((channel_noise_std_for_snr(10.0, 1.0, 10).unwrap() - 0.1).abs() < 1e-15);
    assert!((channel_noise_std_for_snr(0.0, 2.0, 4).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(channel_noise_std_for_snr(f64::INFINITY, 1.0, 10).unwrap(), 0.0);
    assert!(channel_noise_std_for_snr(f64::NEG_INFINITY, 1.0, 10).is_err());
}

#[test]
fn protocol_is_enforced() {
    let gains = vec![Complex64::new(0.1, 0.0), Complex64::new(1.0, 0.0)];
    let round = ChannelRound::new(gains, 0.5, 1.0, 1.0, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = || NoisyContribution::exact(vec![1.0, 0.0]);
    assert!(matches!(
        transmit_oac(&[(0, c())], &round, 2, &mut rng),
        Err(ChannelError::ProtocolViolation { client: 0, .. })
    ));
    assert!(matches!(transmit_oac(&[(1, c()), (1, c())], &round, 2, &mut rng), Err(ChannelError::DuplicateSender(1))));
    assert!(matches!(transmit_oac(&[(7, c())], &round, 2, &mut rng), Err(ChannelError::UnknownClient { .. })));
    assert!(matches!(
        transmit_orthogonal(&[(1, c())], &round, 3, &mut rng),
        Err(ChannelError::DimensionMismatch { .. })
    ));
    let empty = transmit_oac(&[], &round, 2, &mut rng).unwrap();
    assert!(empty.empty);
}
