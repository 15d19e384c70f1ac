//! Where client score vectors come from: score-table files and a synthetic
//! classifier generator. Also picks the best single client for the baseline.
//!
//! # Score-table file format
//!
//! Plain text, `.` as decimal separator, lines starting with `#` and blank
//! lines ignored:
//!
//! ```text
//! n,m,k
//! <label>[,validation|test]      m lines, labels in 1..=k
//! <s_1>,<s_2>,...,<s_k>          n*m lines, client-major
//! ```
//!
//! Score row `i*m + t` holds client `i`'s beliefs for sample `t` (both
//! 0-based). When no sample carries a split tag the first `⌊m/10⌋` samples
//! are validation and the rest test.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::ensemble::{argmax, Decision, EnsembleError, ScoreVector, TieRule};
use crate::harness::metrics::macro_f1;
use crate::harness::report::format_real;
use crate::rng::{keyed_stream, StreamPurpose};

pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line} (client {client}, sample {sample}): {source}")]
    InvalidScores {
        line: usize,
        client: usize,
        sample: usize,
        #[source]
        source: EnsembleError,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Which part of the evaluation a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Scores of every client on every sample, with labels and split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDataset {
    num_clients: usize,
    num_samples: usize,
    num_classes: usize,
    scores: Vec<ScoreVector>,
    labels: Vec<usize>,
    splits: Vec<Split>,
}

impl ScoreDataset {
    /// `scores` is client-major: entry `i * m + t`.
    pub fn new(
        num_clients: usize,
        num_classes: usize,
        scores: Vec<ScoreVector>,
        labels: Vec<usize>,
        splits: Vec<Split>,
    ) -> Result<Self, DataError> {
        let m = labels.len();
        if num_clients == 0 || m == 0 {
            return Err(DataError::Invalid("need at least one client and one sample".into()));
        }
        if num_classes < 2 {
            return Err(DataError::Invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        if splits.len() != m {
            return Err(DataError::Invalid(format!("{} split tags for {m} samples", splits.len())));
        }
        if scores.len() != num_clients * m {
            return Err(DataError::Invalid(format!("{} score vectors, expected {}", scores.len(), num_clients * m)));
        }
        if let Some(bad) = scores.iter().position(|s| s.num_classes() != num_classes) {
            return Err(DataError::Invalid(format!(
                "score vector {bad} has {} classes, expected {num_classes}",
                scores[bad].num_classes()
            )));
        }
        if let Some(t) = labels.iter().position(|&l| l == 0 || l > num_classes) {
            return Err(DataError::Invalid(format!("label {} of sample {t} outside 1..={num_classes}", labels[t])));
        }
        Ok(Self { num_clients, num_samples: m, num_classes, scores, labels, splits })
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn score(&self, client: usize, sample: usize) -> &ScoreVector {
        &self.scores[client * self.num_samples + sample]
    }

    pub fn label(&self, sample: usize) -> usize {
        self.labels[sample]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self, sample: usize) -> Split {
        self.splits[sample]
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_samples).filter(move |&t| self.splits[t] == split)
    }

    /// A copy with samples reordered so that new sample `t` is old sample `order[t]`.
    pub fn permute_samples(&self, order: &[usize]) -> Result<Self, DataError> {
        let m = self.num_samples;
        let mut seen = vec![false; m];
        if order.len() != m || order.iter().any(|&t| t >= m || std::mem::replace(&mut seen[t], true)) {
            return Err(DataError::Invalid("not a permutation of the samples".into()));
        }
        let scores = (0..self.num_clients)
            .flat_map(|i| order.iter().map(move |&t| (i, t)))
            .map(|(i, t)| self.score(i, t).clone())
            .collect();
        Self::new(
            self.num_clients,
            self.num_classes,
            scores,
            order.iter().map(|&t| self.labels[t]).collect(),
            order.iter().map(|&t| self.splits[t]).collect(),
        )
    }
}

fn split_of_default(t: usize, m: usize) -> Split {
    if t < m / 10 {
        Split::Validation
    } else {
        Split::Test
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse { line, message: message.into() }
}

fn parse_usize(field: &str, line: usize, what: &str) -> Result<usize, DataError> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("{what} `{}` is not a non-negative integer", field.trim())))
}

/// Parses the score-table text format.
pub fn parse_score_dataset(text: &str) -> Result<ScoreDataset, DataError> {
    let mut lines =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines.next().ok_or_else(|| parse_err(1, "missing `n,m,k` header"))?;
    let dims: Vec<&str> = header.split(',').collect();
    if dims.len() != 3 {
        return Err(parse_err(header_line, format!("header must be `n,m,k`, got `{header}`")));
    }
    let n = parse_usize(dims[0], header_line, "n")?;
    let m = parse_usize(dims[1], header_line, "m")?;
    let k = parse_usize(dims[2], header_line, "k")?;
    if n == 0 || m == 0 || k < 2 {
        return Err(parse_err(header_line, "need n >= 1, m >= 1, k >= 2"));
    }

    let mut labels = Vec::with_capacity(m);
    let mut tags: Vec<Option<Split>> = Vec::with_capacity(m);
    for t in 0..m {
        let (line, text) =
            lines.next().ok_or_else(|| parse_err(0, format!("file ends after {t} of {m} label lines")))?;
        let mut fields = text.split(',');
        let label = parse_usize(fields.next().unwrap_or(""), line, "label")?;
        if label == 0 || label > k {
            return Err(parse_err(line, format!("label {label} outside 1..={k}")));
        }
        let tag = match fields.next().map(str::trim) {
            None => None,
            Some("validation") | Some("v") => Some(Split::Validation),
            Some("test") | Some("t") => Some(Split::Test),
            Some(other) => return Err(parse_err(line, format!("unknown split tag `{other}`"))),
        };
        if fields.next().is_some() {
            return Err(parse_err(line, "label line has too many fields"));
        }
        labels.push(label);
        tags.push(tag);
    }
    let splits = if tags.iter().all(Option::is_none) {
        (0..m).map(|t| split_of_default(t, m)).collect()
    } else if tags.iter().all(Option::is_some) {
        tags.into_iter().flatten().collect()
    } else {
        return Err(parse_err(0, "either every label line carries a split tag or none does"));
    };

    let mut scores = Vec::with_capacity(n * m);
    for row in 0..n * m {
        let (line, text) =
            lines.next().ok_or_else(|| parse_err(0, format!("file ends after {row} of {} score rows", n * m)))?;
        let values = text
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| parse_err(line, format!("`{}` is not a number", f.trim()))))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != k {
            return Err(parse_err(line, format!("score row has {} entries, expected {k}", values.len())));
        }
        let sv = ScoreVector::new(values).map_err(|source| DataError::InvalidScores {
            line,
            client: row / m,
            sample: row % m,
            source,
        })?;
        scores.push(sv);
    }
    if let Some((line, _)) = lines.next() {
        return Err(parse_err(line, "unexpected content after the last score row"));
    }
    ScoreDataset::new(n, k, scores, labels, splits)
}

pub fn load_score_dataset(path: &Path) -> Result<ScoreDataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    parse_score_dataset(&text)
}

/// Serialises in the score-table format. Values use the shortest decimal
/// form that parses back to the same `f64`.
pub fn format_score_dataset(ds: &ScoreDataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{},{},{}", ds.num_clients, ds.num_samples, ds.num_classes);
    for t in 0..ds.num_samples {
        let _ = writeln!(out, "{},{}", ds.labels[t], ds.splits[t].as_str());
    }
    for sv in &ds.scores {
        let row: Vec<String> = sv.as_slice().iter().map(|&x| format_real(x)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn save_score_dataset(ds: &ScoreDataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, format_score_dataset(ds)).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Parameters of the synthetic classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModelSpec {
    /// Logit boost for the true class, one entry per client.
    pub per_client_skill: Vec<f64>,
    pub logit_noise_std: f64,
    pub rng_seed: u64,
}

impl SyntheticModelSpec {
    pub fn uniform(num_clients: usize, skill: f64, logit_noise_std: f64, rng_seed: u64) -> Self {
        Self { per_client_skill: vec![skill; num_clients], logit_noise_std, rng_seed }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Synthetic score table with the default 10% validation split.
pub fn generate_synthetic(
    spec: &SyntheticModelSpec,
    m: usize,
    k: usize,
    class_balance: &[f64],
) -> Result<ScoreDataset, DataError> {
    generate_synthetic_with_split(spec, m, k, class_balance, DEFAULT_VALIDATION_FRACTION)
}

/// Labels come from `class_balance`; client `i` scores sample `t` with
/// `softmax(β_i · 1[j = label] + ζ_j)`, `ζ_j ~ N(0, logit_noise_std²)`.
/// Each client draws logit noise from its own stream. The first
/// `⌊validation_fraction · m⌋` samples are tagged validation.
pub fn generate_synthetic_with_split(
    spec: &SyntheticModelSpec,
    m: usize,
    k: usize,
    class_balance: &[f64],
    validation_fraction: f64,
) -> Result<ScoreDataset, DataError> {
    let n = spec.per_client_skill.len();
    if n == 0 || m == 0 || k < 2 {
        return Err(DataError::Invalid("need >= 1 client, m >= 1 and k >= 2".into()));
    }
    if let Some(b) = spec.per_client_skill.iter().find(|b| !b.is_finite()) {
        return Err(DataError::Invalid(format!("client skill {b} is not finite")));
    }
    if !(spec.logit_noise_std >= 0.0 && spec.logit_noise_std.is_finite()) {
        return Err(DataError::Invalid(format!("logit noise std {} must be finite and >= 0", spec.logit_noise_std)));
    }
    if class_balance.len() != k
        || class_balance.iter().any(|&w| !(w >= 0.0 && w.is_finite()))
        || (class_balance.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(DataError::Invalid(format!("class balance must be {k} non-negative weights summing to 1")));
    }
    if !(0.0..=1.0).contains(&validation_fraction) {
        return Err(DataError::Invalid(format!("validation fraction {validation_fraction} outside [0, 1]")));
    }

    let picker = WeightedIndex::new(class_balance).map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut label_rng = keyed_stream(spec.rng_seed, StreamPurpose::Labels, 0);
    let labels: Vec<usize> = (0..m).map(|_| picker.sample(&mut label_rng) + 1).collect();

    let mut scores = Vec::with_capacity(n * m);
    for (client, &skill) in spec.per_client_skill.iter().enumerate() {
        let mut rng = keyed_stream(spec.rng_seed, StreamPurpose::ClientLogits, client);
        for &label in &labels {
            let logits: Vec<f64> = (1..=k)
                .map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    let boost = if j == label { skill } else { 0.0 };
                    boost + spec.logit_noise_std * z
                })
                .collect();
            scores.push(ScoreVector::new(softmax(&logits)).map_err(|e| DataError::Invalid(e.to_string()))?);
        }
    }

    let num_validation = (validation_fraction * m as f64).floor() as usize;
    let splits = (0..m).map(|t| if t < num_validation { Split::Validation } else { Split::Test }).collect();
    ScoreDataset::new(n, k, scores, labels, splits)
}

/// A client's own top-1 decision (lowest index on ties).
pub fn client_decision(ds: &ScoreDataset, client: usize, sample: usize) -> Decision {
    let (top, _) = argmax(ds.score(client, sample).as_slice(), TieRule::LowestIndex).expect("non-empty");
    Decision::new(top + 1, ds.num_classes()).expect("argmax is in range")
}

/// Client with the highest validation macro-F1 (0-based, lowest on ties).
pub fn select_best_client(ds: &ScoreDataset) -> Result<usize, DataError> {
    let validation: Vec<usize> = ds.samples_in(Split::Validation).collect();
    if validation.is_empty() {
        return Err(DataError::Invalid("no validation samples to rank clients on".into()));
    }
    let labels: Vec<usize> = validation.iter().map(|&t| ds.label(t)).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for client in 0..ds.num_clients() {
        let preds: Vec<Decision> = validation.iter().map(|&t| client_decision(ds, client, t)).collect();
        let f1 = macro_f1(&preds, &labels).map_err(|e| DataError::Invalid(e.to_string()))?;
        if f1 > best.1 {
            best = (client, f1);
        }
    }
    Ok(best.0)
}

/// Top-1 accuracy of one client over the given samples.
pub fn client_accuracy(ds: &ScoreDataset, client: usize, samples: &[usize]) -> f64 {
    let hits = samples.iter().filter(|&&t| client_decision(ds, client, t).class_index() == ds.label(t)).count();
    hits as f64 / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let ds = parse_score_dataset("1,1,2\n2\n0.4,0.6\n").unwrap();
        assert_eq!(ds.score(0, 0).as_slice(), &[0.4, 0.6]);
        assert_eq!(ds.label(0), 2);
        assert_eq!(ds.split(0), Split::Test);
    }

    #[test]
    fn bad_row_names_location() {
        let err = parse_score_dataset("1,2,2\n1\n2\n0.5,0.5\n0.4,0.4\n").unwrap_err();
        match err {
            DataError::InvalidScores { line, client, sample, .. } => {
                assert_eq!((line, client, sample), (5, 0, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_msg("1,1,2\n2\n0.4,0.4\n").contains("line 3"));
    }

    fn err_msg(text: &str) -> String {
        parse_score_dataset(text).unwrap_err().to_string()
    }

    #[test]
    fn structural_errors() {
        assert!(err_msg("1,1\n").contains("header"));
        assert!(err_msg("1,1,2\n3\n0.5,0.5\n").contains("outside"));
        assert!(err_msg("1,1,2\n1\n").contains("score rows"));
        assert!(err_msg("1,1,2\n1\n0.5,0.5\n0.5,0.5\n").contains("unexpected"));
        assert!(err_msg("1,1,2\n1,train\n0.5,0.5\n").contains("split tag"));
        assert!(err_msg("1,1,2\n1\n0.5;0.5\n").contains("not a number"));
    }

    #[test]
    fn comments_and_tags() {
        let ds = parse_score_dataset("# demo\n2,2,2\n1,validation\n2,test\n\n1,0\n0,1\n0.5,0.5\n0.2,0.8\n").unwrap();
        assert_eq!(ds.split(0), Split::Validation);
        assert_eq!(ds.score(1, 1).as_slice(), &[0.2, 0.8]);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let spec = SyntheticModelSpec::uniform(3, 1.0, 1.0, 17);
        let ds = generate_synthetic(&spec, 40, 4, &[0.25; 4]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.txt");
        save_score_dataset(&ds, &path).unwrap();
        let back = load_score_dataset(&path).unwrap();
        assert_eq!(ds, back);
        for i in 0..3 {
            for t in 0..40 {
                let a: Vec<u64> = ds.score(i, t).as_slice().iter().map(|x| x.to_bits()).collect();
                let b: Vec<u64> = back.score(i, t).as_slice().iter().map(|x| x.to_bits()).collect();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn zero_signal_is_uniform() {
        let spec = SyntheticModelSpec::uniform(2, 0.0, 0.0, 1);
        let ds = generate_synthetic(&spec, 50, 5, &[0.2; 5]).unwrap();
        for t in 0..50 {
            assert!(ds.score(0, t).as_slice().iter().all(|&s| (s - 0.2).abs() < 1e-15));
            assert_eq!(client_decision(&ds, 0, t).class_index(), 1);
        }
        let all: Vec<usize> = (0..50).collect();
        let class1 = ds.labels().iter().filter(|&&l| l == 1).count() as f64 / 50.0;
        assert_eq!(client_accuracy(&ds, 1, &all), class1);
    }

    #[test]
    fn dominant_skill_is_perfect() {
        let spec = SyntheticModelSpec::uniform(1, 50.0, 0.0, 4);
        let ds = generate_synthetic(&spec, 200, 6, &[1.0 / 6.0; 6]).unwrap();
        let all: Vec<usize> = (0..200).collect();
        assert_eq!(client_accuracy(&ds, 0, &all), 1.0);
    }

    #[test]
    fn generator_rejects_bad_balance() {
        let spec = SyntheticModelSpec::uniform(1, 1.0, 1.0, 0);
        assert!(generate_synthetic(&spec, 10, 3, &[0.5, 0.5]).is_err());
        assert!(generate_synthetic(&spec, 10, 2, &[0.7, 0.7]).is_err());
        assert!(generate_synthetic(&spec, 10, 2, &[1.2, -0.2]).is_err());
    }

    #[test]
    fn validation_split_size() {
        let spec = SyntheticModelSpec::uniform(1, 1.0, 1.0, 0);
        let ds = generate_synthetic(&spec, 2222, 3, &[1.0 / 3.0; 3]).unwrap();
        assert_eq!(ds.samples_in(Split::Validation).count(), 222);
        assert_eq!(ds.samples_in(Split::Test).count(), 2000);
    }

    #[test]
    fn best_client_cases() {
        // Client 1 perfect, others uniform.
        let mut skill = vec![0.0; 4];
        skill[1] = 60.0;
        let spec = SyntheticModelSpec { per_client_skill: skill, logit_noise_std: 0.0, rng_seed: 3 };
        let ds = generate_synthetic(&spec, 100, 3, &[1.0 / 3.0; 3]).unwrap();
        assert_eq!(select_best_client(&ds).unwrap(), 1);

        let single = generate_synthetic(&SyntheticModelSpec::uniform(1, 1.0, 1.0, 3), 30, 3, &[1.0 / 3.0; 3]).unwrap();
        assert_eq!(select_best_client(&single).unwrap(), 0);

        // Identical clients tie; the lower index wins.
        let text = "2,2,2\n1,validation\n2,validation\n0.9,0.1\n0.1,0.9\n0.9,0.1\n0.1,0.9\n";
        assert_eq!(select_best_client(&parse_score_dataset(text).unwrap()).unwrap(), 0);

        let no_val = parse_score_dataset("1,1,2\n1,test\n0.5,0.5\n").unwrap();
        assert!(select_best_client(&no_val).is_err());
    }
}
