//! End-to-end inference rounds, baselines, sweeps and reporting.

pub mod config;
pub mod metrics;
pub mod report;
pub mod sweep;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::accounting::{calibrate_sigma, per_client_noise_std, AccountingError, PrivacyGuarantee};
use crate::channel::{
    channel_noise_std_for_snr, draw_channel_gains, threshold_for_participation, transmit_oac, transmit_orthogonal,
    ChannelError, ChannelRound,
};
use crate::ensemble::{
    add_privacy_noise, belief_prediction, cis_decide, vote_prediction, Decision, EnsembleError, NoisyContribution,
    TieRule,
};
use crate::providers::{select_best_client, DataError, ScoreDataset, Split};
use crate::rng::{query_stream, StreamPurpose};

pub use config::{DatasetSource, ExperimentConfig, SimulationOptions, SweepConfig, SyntheticDataset};
pub use metrics::{macro_f1, ConfusionCounts, MetricsError};
pub use sweep::{run_cells, run_sweep, run_sweep_on, summarize, CellSummary, SweepOutput};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("noise calibration failed: {0}")]
    Calibration(#[from] AccountingError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 config, 3 data, 4 calibration.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) | HarnessError::Io(_) => 3,
            HarnessError::Calibration(_) => 4,
            HarnessError::Cell { source, .. } => source.exit_code(),
            HarnessError::Channel(_) | HarnessError::Ensemble(_) | HarnessError::Metrics(_) => 1,
        }
    }
}

/// Inference scheme under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    OacVote,
    OacBelief,
    OrthVote,
    OrthBelief,
    BestClient,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::OacVote, Method::OacBelief, Method::OrthVote, Method::OrthBelief, Method::BestClient];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::OacVote => "oac_vote",
            Method::OacBelief => "oac_belief",
            Method::OrthVote => "orth_vote",
            Method::OrthBelief => "orth_belief",
            Method::BestClient => "best_client",
        }
    }

    fn votes(self) -> bool {
        matches!(self, Method::OacVote | Method::OrthVote)
    }

    fn orthogonal(self) -> bool {
        matches!(self, Method::OrthVote | Method::OrthBelief)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method `{s}`")))
    }
}

/// Channel uses a single query costs: `k` over the air or for the single
/// best client, `|P_t| · k` with orthogonal access.
pub fn channel_use_count(method: Method, num_participants: usize, num_classes: usize) -> usize {
    if method.orthogonal() {
        num_participants * num_classes
    } else {
        num_classes
    }
}

/// How rounds with no participant enter the macro-F1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyRoundPolicy {
    #[default]
    Exclude,
    CountAsWrong,
}

/// Privacy noise each orthogonal sender adds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrthogonalNoise {
    /// The full σ, since each transmission is seen on its own.
    #[default]
    FullPerClient,
    /// σ / √|P_t|, as over the air.
    SplitAcrossParticipants,
}

/// Everything a round needs, resolved once per sweep cell.
#[derive(Debug, Clone)]
pub struct CellContext<'a> {
    pub dataset: &'a ScoreDataset,
    pub method: Method,
    /// Aggregate privacy noise σ (0 when ε = ∞).
    pub sigma: f64,
    /// σ for the best-client baseline, which always transmits.
    pub best_client_sigma: f64,
    pub best_client: usize,
    pub participation_threshold: f64,
    pub extra_participation_prob: f64,
    pub power_scale: f64,
    pub channel_noise_std: f64,
    pub fading_scale: f64,
    pub orthogonal_noise: OrthogonalNoise,
}

fn calibrated_sigma(epsilon: f64, delta: f64, p: f64, n: usize) -> Result<f64, HarnessError> {
    if epsilon.is_infinite() {
        return Ok(0.0);
    }
    let target = PrivacyGuarantee::new(epsilon, delta).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(calibrate_sigma(target, p, n, delta * 1e-6)?)
}

impl<'a> CellContext<'a> {
    pub fn new(config: &ExperimentConfig, dataset: &'a ScoreDataset) -> Result<Self, HarnessError> {
        let n = dataset.num_clients();
        if n != config.num_clients {
            return Err(HarnessError::Config(format!(
                "config says {} clients but the dataset has {n}",
                config.num_clients
            )));
        }
        let sigma = calibrated_sigma(config.epsilon, config.delta, config.participation_p, n)?;
        let best_client_sigma = calibrated_sigma(config.epsilon, config.delta, 1.0, 1)?;
        let best_client = if config.method == Method::BestClient { select_best_client(dataset)? } else { 0 };
        let fading_scale = config.options.fading_scale;
        Ok(Self {
            dataset,
            method: config.method,
            sigma,
            best_client_sigma,
            best_client,
            participation_threshold: threshold_for_participation(config.participation_p, fading_scale)?,
            extra_participation_prob: 1.0,
            power_scale: config.power_scale,
            channel_noise_std: channel_noise_std_for_snr(config.snr_db, config.power_scale, dataset.num_classes())?,
            fading_scale,
            orthogonal_noise: config.options.orthogonal_noise,
        })
    }
}

/// Result of one simulated query.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// `None` when nobody participated.
    pub decision: Option<Decision>,
    /// Realised participant set, ascending.
    pub participants: Vec<usize>,
    pub channel_uses: usize,
}

/// One query of sample `sample` under `ctx`, with every random draw keyed by
/// `(seed, sample)`: participation, prediction, noise, transmission,
/// aggregation and the server's argmax.
pub fn run_round(ctx: &CellContext<'_>, sample: usize, seed: u64) -> Result<RoundOutcome, HarnessError> {
    let ds = ctx.dataset;
    let n = ds.num_clients();
    let k = ds.num_classes();
    let gains =
        draw_channel_gains(n, ctx.fading_scale, &mut query_stream(seed, sample, StreamPurpose::ChannelGains, 0))?;

    let best_only = ctx.method == Method::BestClient;
    // The best client is always asked, so only the minimum-gain guard applies to it.
    let threshold = if best_only { 0.0 } else { ctx.participation_threshold };
    let round =
        ChannelRound::new(gains, threshold, ctx.extra_participation_prob, ctx.power_scale, ctx.channel_noise_std)?;
    let participants = if best_only {
        if round.is_eligible(ctx.best_client) {
            vec![ctx.best_client]
        } else {
            Vec::new()
        }
    } else {
        round.sample_participants(&mut query_stream(seed, sample, StreamPurpose::Thinning, 0))
    };
    if participants.is_empty() {
        return Ok(RoundOutcome { decision: None, participants, channel_uses: 0 });
    }

    let noise_std = match ctx.method {
        Method::BestClient => ctx.best_client_sigma,
        Method::OacVote | Method::OacBelief => per_client_noise_std(ctx.sigma, participants.len())?,
        Method::OrthVote | Method::OrthBelief => match ctx.orthogonal_noise {
            OrthogonalNoise::FullPerClient => ctx.sigma,
            OrthogonalNoise::SplitAcrossParticipants => per_client_noise_std(ctx.sigma, participants.len())?,
        },
    };
    let senders = participants
        .iter()
        .map(|&i| {
            let scores = ds.score(i, sample);
            let prediction = if ctx.method.votes() {
                vote_prediction(scores, TieRule::LowestIndex)
            } else {
                belief_prediction(scores)
            };
            let mut rng = query_stream(seed, sample, StreamPurpose::PrivacyNoise, i);
            add_privacy_noise(&prediction, noise_std, &mut rng).map(|g| (i, g))
        })
        .collect::<Result<Vec<(usize, NoisyContribution)>, _>>()?;

    let aggregate = if ctx.method.orthogonal() {
        let mut rng = query_stream(seed, sample, StreamPurpose::OrthogonalChannelNoise, 0);
        transmit_orthogonal(&senders, &round, k, &mut rng)?.summed(k)
    } else {
        let mut rng = query_stream(seed, sample, StreamPurpose::ChannelNoise, 0);
        transmit_oac(&senders, &round, k, &mut rng)?.values
    };
    let decision = cis_decide(&aggregate, ctx.power_scale)?;
    Ok(RoundOutcome {
        decision: Some(decision),
        channel_uses: channel_use_count(ctx.method, participants.len(), k),
        participants,
    })
}

/// One (cell, seed) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub epsilon: f64,
    pub snr_db: f64,
    pub participation_p: f64,
    pub seed: u64,
    pub macro_f1: f64,
    pub mean_participants: f64,
    pub abstained_rounds: usize,
    pub channel_uses_per_query: usize,
}

/// Per-sample record of a run; enough to recompute its macro-F1.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub sample: usize,
    pub label: usize,
    pub prediction: Option<usize>,
    pub participants: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub row: ResultRow,
    pub audit: Vec<AuditEntry>,
}

/// Macro-F1 as reported for a set of audit entries.
pub fn score_audit(audit: &[AuditEntry], policy: EmptyRoundPolicy) -> Result<f64, HarnessError> {
    let mut counts = ConfusionCounts::new();
    for entry in audit {
        match (entry.prediction, policy) {
            (None, EmptyRoundPolicy::Exclude) => {}
            (p, _) => counts.record(entry.label, p)?,
        }
    }
    Ok(counts.macro_f1()?)
}

/// Every test sample of the dataset under one cell and seed.
pub fn run_cell(config: &ExperimentConfig, dataset: &ScoreDataset, seed: u64) -> Result<CellRun, HarnessError> {
    let ctx = CellContext::new(config, dataset)?;
    let samples: Vec<usize> = dataset.samples_in(Split::Test).collect();
    if samples.is_empty() {
        return Err(HarnessError::Data(DataError::Invalid("dataset has no test samples".into())));
    }
    let outcomes = samples.par_iter().map(|&t| run_round(&ctx, t, seed)).collect::<Result<Vec<_>, _>>()?;

    let mut abstained = 0;
    let mut participant_total = 0usize;
    let mut uses_total = 0usize;
    let audit: Vec<AuditEntry> = samples
        .iter()
        .zip(&outcomes)
        .map(|(&t, o)| {
            abstained += o.decision.is_none() as usize;
            participant_total += o.participants.len();
            uses_total += o.channel_uses;
            AuditEntry {
                sample: t,
                label: dataset.label(t),
                prediction: o.decision.map(|d| d.class_index()),
                participants: o.participants.len(),
            }
        })
        .collect();
    let rounds = samples.len() as f64;
    let row = ResultRow {
        method: config.method,
        epsilon: config.epsilon,
        snr_db: config.snr_db,
        participation_p: config.participation_p,
        seed,
        macro_f1: score_audit(&audit, config.options.empty_rounds)?,
        mean_participants: participant_total as f64 / rounds,
        abstained_rounds: abstained,
        channel_uses_per_query: (uses_total as f64 / rounds).round() as usize,
    };
    Ok(CellRun { row, audit })
}
