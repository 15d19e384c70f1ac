//! Flat `key = value` configuration files.
//!
//! ```text
//! # one cell, or a grid when any axis is a comma-separated list
//! method = oac_vote, oac_belief      # oac_vote | oac_belief | orth_vote | orth_belief | best_client
//! epsilon = 1, inf                   # > 0, or inf for no privacy noise
//! delta = 1e-5
//! snr_db = 10                        # channel SNR per coordinate, inf for a noiseless channel
//! p = 1.0                            # participation probability
//! num_clients = 20
//! power_scale = 1
//! seeds = 0, 1, 2, 3, 4
//! dataset = synthetic                # or a path to a score-table file, relative to this file
//! synthetic.skill = 3.0              # one value, or one per client
//! synthetic.logit_noise_std = 1.0
//! synthetic.samples = 2222
//! synthetic.classes = 10
//! synthetic.seed = 2023
//! synthetic.class_balance = uniform  # or k weights
//! synthetic.validation_fraction = 0.1
//! empty_rounds = exclude             # exclude | count_as_wrong
//! orthogonal_noise = full            # full | split
//! fading_scale = 0.7071067811865476
//! workers = 4                        # 0 or absent: all cores
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::channel::DEFAULT_FADING_SCALE;
use crate::providers::{
    generate_synthetic_with_split, load_score_dataset, ScoreDataset, SyntheticModelSpec, DEFAULT_VALIDATION_FRACTION,
};

use super::{EmptyRoundPolicy, HarnessError, Method, OrthogonalNoise};

pub const DEFAULT_DELTA: f64 = 1e-5;

/// Per-client skill of the reference synthetic table.
pub const REFERENCE_SKILL: f64 = 3.0;

fn config_err(line: usize, message: impl std::fmt::Display) -> HarnessError {
    if line == 0 {
        HarnessError::Config(message.to_string())
    } else {
        HarnessError::Config(format!("line {line}: {message}"))
    }
}

/// Parsed `key = value` lines, consumed key by key.
struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    fn parse(text: &str, strip_prefix: Option<&str>) -> Result<Self, HarnessError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| config_err(line, format!("expected `key = value`, got `{content}`")))?;
            let mut key = key.trim();
            if let Some(prefix) = strip_prefix {
                key = key.strip_prefix(prefix).unwrap_or(key);
            }
            if entries.insert(key.to_string(), (line, value.trim().to_string())).is_some() {
                return Err(config_err(line, format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn finish(self) -> Result<(), HarnessError> {
        match self.entries.into_iter().next() {
            Some((key, (line, _))) => Err(config_err(line, format!("unknown key `{key}`"))),
            None => Ok(()),
        }
    }

    fn list<T>(
        &mut self,
        key: &str,
        default: Option<Vec<T>>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Vec<T>, HarnessError> {
        match self.take(key) {
            None => default.ok_or_else(|| config_err(0, format!("missing required key `{key}`"))),
            Some((line, value)) => {
                let items = value
                    .split(',')
                    .map(|s| parse(s.trim()).map_err(|e| config_err(line, format!("`{key}`: {e}"))))
                    .collect::<Result<Vec<T>, _>>()?;
                if items.is_empty() {
                    return Err(config_err(line, format!("`{key}` is empty")));
                }
                Ok(items)
            }
        }
    }

    fn scalar<T>(
        &mut self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, HarnessError> {
        match self.take(key) {
            None => Ok(default),
            Some((line, value)) => parse(&value).map_err(|e| config_err(line, format!("`{key}`: {e}"))),
        }
    }
}

fn real(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_nan() {
        return Err("NaN is not allowed".into());
    }
    Ok(v)
}

fn in_range(check: impl Fn(f64) -> bool, what: &'static str) -> impl Fn(&str) -> Result<f64, String> {
    move |s| real(s).and_then(|v| if check(v) { Ok(v) } else { Err(format!("{v} {what}")) })
}

fn integer<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("`{s}` is not a non-negative integer"))
}

/// Synthetic score-table settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticModelSpec,
    pub samples: usize,
    pub classes: usize,
    pub class_balance: Vec<f64>,
    pub validation_fraction: f64,
}

impl SyntheticDataset {
    /// Reference table: 20 clients, 10 balanced classes, 2000 test samples
    /// after a 10% validation split, skill 3.0, logit noise 1.0.
    ///
    /// Each client is right about 91% of the time; the best client alone
    /// scores a test macro-F1 near 0.86.
    pub fn reference() -> Self {
        Self {
            spec: SyntheticModelSpec::uniform(20, REFERENCE_SKILL, 1.0, 2023),
            samples: 2222,
            classes: 10,
            class_balance: vec![0.1; 10],
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
        }
    }

    pub fn generate(&self) -> Result<ScoreDataset, HarnessError> {
        Ok(generate_synthetic_with_split(
            &self.spec,
            self.samples,
            self.classes,
            &self.class_balance,
            self.validation_fraction,
        )?)
    }

    fn from_keys(kv: &mut KeyValues, num_clients: usize, prefix: &str) -> Result<Self, HarnessError> {
        let key = |k: &str| format!("{prefix}{k}");
        let reference = Self::reference();
        let classes: usize = kv.scalar(&key("classes"), reference.classes, integer)?;
        if classes < 2 {
            return Err(config_err(0, format!("`{}` must be >= 2", key("classes"))));
        }
        let skill = kv.list(&key("skill"), Some(vec![REFERENCE_SKILL]), in_range(f64::is_finite, "is not finite"))?;
        let per_client_skill = match skill.len() {
            1 => vec![skill[0]; num_clients],
            len if len == num_clients => skill,
            len => return Err(config_err(0, format!("`{}` has {len} values for {num_clients} clients", key("skill")))),
        };
        let logit_noise_std = kv.scalar(
            &key("logit_noise_std"),
            reference.spec.logit_noise_std,
            in_range(|v| v >= 0.0 && v.is_finite(), "must be finite and >= 0"),
        )?;
        let rng_seed = kv.scalar(&key("seed"), reference.spec.rng_seed, integer)?;
        let samples: usize = kv.scalar(&key("samples"), reference.samples, integer)?;
        if samples == 0 {
            return Err(config_err(0, format!("`{}` must be >= 1", key("samples"))));
        }
        let class_balance = match kv.take(&key("class_balance")) {
            None => vec![1.0 / classes as f64; classes],
            Some((_, v)) if v == "uniform" => vec![1.0 / classes as f64; classes],
            Some((line, v)) => {
                let w = v.split(',').map(|s| real(s.trim())).collect::<Result<Vec<f64>, _>>();
                let w = w.map_err(|e| config_err(line, e))?;
                if w.len() != classes {
                    return Err(config_err(line, format!("{} weights for {classes} classes", w.len())));
                }
                w
            }
        };
        let validation_fraction = kv.scalar(
            &key("validation_fraction"),
            DEFAULT_VALIDATION_FRACTION,
            in_range(|v| (0.0..=1.0).contains(&v), "must lie in [0, 1]"),
        )?;
        Ok(Self {
            spec: SyntheticModelSpec { per_client_skill, logit_noise_std, rng_seed },
            samples,
            classes,
            class_balance,
            validation_fraction,
        })
    }

    /// A standalone generator spec as read by `gen-data`. Keys are those of
    /// the experiment config's `synthetic.*` block, prefix optional, plus
    /// `num_clients`.
    pub fn from_spec_text(text: &str) -> Result<Self, HarnessError> {
        let mut kv = KeyValues::parse(text, Some("synthetic."))?;
        let num_clients: usize = kv.scalar("num_clients", 20, integer)?;
        if num_clients == 0 {
            return Err(config_err(0, "`num_clients` must be >= 1"));
        }
        let out = Self::from_keys(&mut kv, num_clients, "")?;
        kv.finish()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    File(PathBuf),
    Synthetic(SyntheticDataset),
}

impl DatasetSource {
    pub fn load(&self) -> Result<ScoreDataset, HarnessError> {
        match self {
            DatasetSource::File(path) => Ok(load_score_dataset(path)?),
            DatasetSource::Synthetic(s) => s.generate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub empty_rounds: EmptyRoundPolicy,
    pub orthogonal_noise: OrthogonalNoise,
    pub fading_scale: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            empty_rounds: EmptyRoundPolicy::Exclude,
            orthogonal_noise: OrthogonalNoise::FullPerClient,
            fading_scale: DEFAULT_FADING_SCALE,
        }
    }
}

/// A single sweep cell replicated over `seeds`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    /// `f64::INFINITY` disables privacy noise.
    pub epsilon: f64,
    pub delta: f64,
    pub snr_db: f64,
    pub participation_p: f64,
    pub num_clients: usize,
    pub power_scale: f64,
    pub seeds: Vec<u64>,
    pub options: SimulationOptions,
}

impl ExperimentConfig {
    /// Label used when reporting a failing cell.
    pub fn cell_label(&self) -> String {
        format!(
            "method={} epsilon={} snr_db={} p={}",
            self.method,
            super::report::format_real(self.epsilon),
            super::report::format_real(self.snr_db),
            self.participation_p
        )
    }
}

/// A Cartesian grid over method, ε, SNR and p.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub epsilons: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub participation_p: Vec<f64>,
    pub delta: f64,
    pub num_clients: usize,
    pub power_scale: f64,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSource,
    pub options: SimulationOptions,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a config; relative dataset paths resolve against `base_dir`.
    pub fn from_text(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut kv = KeyValues::parse(text, None)?;
        let methods = kv.list("method", None, |s| s.parse::<Method>().map_err(|e| e.to_string()))?;
        let epsilons = kv.list("epsilon", None, in_range(|v| v > 0.0, "must be > 0 (use inf for no privacy)"))?;
        let delta = kv.scalar("delta", DEFAULT_DELTA, in_range(|v| v > 0.0 && v < 1.0, "must lie in (0, 1)"))?;
        let snr_db = kv.list("snr_db", Some(vec![10.0]), in_range(|v| v > f64::NEG_INFINITY, "is not a usable SNR"))?;
        let participation_p = kv.list("p", Some(vec![1.0]), in_range(|v| v > 0.0 && v <= 1.0, "must lie in (0, 1]"))?;
        let num_clients: usize = kv.scalar("num_clients", 20, integer)?;
        if num_clients == 0 {
            return Err(config_err(0, "`num_clients` must be >= 1"));
        }
        let power_scale =
            kv.scalar("power_scale", 1.0, in_range(|v| v > 0.0 && v.is_finite(), "must be finite and > 0"))?;
        let seeds = kv.list("seeds", Some(vec![0]), integer)?;

        let dataset = match kv.take("dataset") {
            None => DatasetSource::Synthetic(SyntheticDataset::from_keys(&mut kv, num_clients, "synthetic.")?),
            Some((_, v)) if v == "synthetic" => {
                DatasetSource::Synthetic(SyntheticDataset::from_keys(&mut kv, num_clients, "synthetic.")?)
            }
            Some((_, v)) => DatasetSource::File(base_dir.join(v)),
        };

        let empty_rounds = kv.scalar("empty_rounds", EmptyRoundPolicy::Exclude, |s| match s {
            "exclude" => Ok(EmptyRoundPolicy::Exclude),
            "count_as_wrong" => Ok(EmptyRoundPolicy::CountAsWrong),
            other => Err(format!("unknown policy `{other}`")),
        })?;
        let orthogonal_noise = kv.scalar("orthogonal_noise", OrthogonalNoise::FullPerClient, |s| match s {
            "full" => Ok(OrthogonalNoise::FullPerClient),
            "split" => Ok(OrthogonalNoise::SplitAcrossParticipants),
            other => Err(format!("unknown orthogonal noise mode `{other}`")),
        })?;
        let fading_scale = kv.scalar(
            "fading_scale",
            DEFAULT_FADING_SCALE,
            in_range(|v| v > 0.0 && v.is_finite(), "must be finite and > 0"),
        )?;
        let workers: usize = kv.scalar("workers", 0, integer)?;
        kv.finish()?;

        Ok(Self {
            methods,
            epsilons,
            snr_db,
            participation_p,
            delta,
            num_clients,
            power_scale,
            seeds,
            dataset,
            options: SimulationOptions { empty_rounds, orthogonal_noise, fading_scale },
            workers: (workers > 0).then_some(workers),
        })
    }

    /// Cells in method, ε, SNR, p order.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &epsilon in &self.epsilons {
                for &snr_db in &self.snr_db {
                    for &participation_p in &self.participation_p {
                        out.push(ExperimentConfig {
                            method,
                            epsilon,
                            delta: self.delta,
                            snr_db,
                            participation_p,
                            num_clients: self.num_clients,
                            power_scale: self.power_scale,
                            seeds: self.seeds.clone(),
                            options: self.options,
                        });
                    }
                }
            }
        }
        out
    }

    /// The only cell, for single-cell runs.
    pub fn single_cell(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cells = self.cells();
        if cells.len() != 1 {
            return Err(HarnessError::Config(format!(
                "expected a single cell but the grid has {} (use `sweep`)",
                cells.len()
            )));
        }
        Ok(cells.remove(0))
    }
}
