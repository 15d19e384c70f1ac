//! Macro-averaged F1.

use thiserror::Error;

use crate::ensemble::Decision;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no samples to score")]
    Empty,
    #[error("label {0} is not a valid 1-based class")]
    InvalidLabel(usize),
}

/// Per-class true positive / false positive / false negative counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    true_pos: Vec<u64>,
    false_pos: Vec<u64>,
    false_neg: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new() -> Self {
        Self::default()
    }

    fn grow(&mut self, class: usize) {
        if class > self.true_pos.len() {
            self.true_pos.resize(class, 0);
            self.false_pos.resize(class, 0);
            self.false_neg.resize(class, 0);
        }
    }

    /// Records one sample. `predicted = None` is an abstention that still
    /// counts against the true class.
    pub fn record(&mut self, label: usize, predicted: Option<usize>) -> Result<(), MetricsError> {
        if label == 0 {
            return Err(MetricsError::InvalidLabel(label));
        }
        self.grow(label);
        match predicted {
            Some(p) if p == label => self.true_pos[label - 1] += 1,
            Some(p) => {
                if p == 0 {
                    return Err(MetricsError::InvalidLabel(p));
                }
                self.grow(p);
                self.false_pos[p - 1] += 1;
                self.false_neg[label - 1] += 1;
            }
            None => self.false_neg[label - 1] += 1,
        }
        Ok(())
    }

    /// Mean of `2TP / (2TP + FP + FN)` over classes that appear as a label or
    /// a prediction. Classes with neither are left out of the average.
    pub fn macro_f1(&self) -> Result<f64, MetricsError> {
        let mut total = 0.0;
        let mut classes = 0usize;
        for c in 0..self.true_pos.len() {
            let denom = 2 * self.true_pos[c] + self.false_pos[c] + self.false_neg[c];
            if denom == 0 {
                continue;
            }
            total += 2.0 * self.true_pos[c] as f64 / denom as f64;
            classes += 1;
        }
        if classes == 0 {
            return Err(MetricsError::Empty);
        }
        Ok(total / classes as f64)
    }
}

/// Macro-F1 of `predictions` against 1-based `labels`.
pub fn macro_f1(predictions: &[Decision], labels: &[usize]) -> Result<f64, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = ConfusionCounts::new();
    for (d, &label) in predictions.iter().zip(labels) {
        counts.record(label, Some(d.class_index()))?;
    }
    counts.macro_f1()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decisions(classes: &[usize], k: usize) -> Vec<Decision> {
        classes.iter().map(|&c| Decision::new(c, k).unwrap()).collect()
    }

    #[test]
    fn perfect_is_one() {
        let labels = [1, 2, 3, 2, 1];
        assert_eq!(macro_f1(&decisions(&labels, 3), &labels).unwrap(), 1.0);
    }

    #[test]
    fn constant_guess_on_balanced_binary() {
        let labels = [1, 2, 1, 2];
        let f1 = macro_f1(&decisions(&[1, 1, 1, 1], 2), &labels).unwrap();
        assert!((f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_wrong_is_zero() {
        let labels = [1, 2, 1];
        assert_eq!(macro_f1(&decisions(&[2, 1, 2], 2), &labels).unwrap(), 0.0);
    }

    #[test]
    fn zero_support_zero_prediction_excluded() {
        // Class 2 of 3 never appears; the average runs over classes 1 and 3.
        let labels = [1, 3];
        assert_eq!(macro_f1(&decisions(&[1, 3], 3), &labels).unwrap(), 1.0);
    }

    #[test]
    fn abstentions_count_against_label() {
        let mut c = ConfusionCounts::new();
        c.record(1, Some(1)).unwrap();
        c.record(2, None).unwrap();
        // class 1: F1 = 1; class 2: TP=0, FN=1 -> 0
        assert_eq!(c.macro_f1().unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        assert!(matches!(macro_f1(&decisions(&[1], 2), &[1, 2]), Err(MetricsError::LengthMismatch { .. })));
        assert_eq!(macro_f1(&[], &[]), Err(MetricsError::Empty));
        assert_eq!(macro_f1(&decisions(&[1], 2), &[0]), Err(MetricsError::InvalidLabel(0)));
    }
}
