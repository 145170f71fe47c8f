//! Prequential scoring: EN_Accuracy, faded per-class recall, G-mean and the
//! minority false-negative rate, plus the MDC compactness statistic.

use std::collections::{BTreeMap, BTreeSet};

use crate::euclidean;

/// Arithmetic mean of a point set.
pub fn centroid(points: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = points.first() else {
        return Vec::new();
    };
    let mut c = vec![0.0; first.len()];
    for p in points {
        for (a, b) in c.iter_mut().zip(p) {
            *a += b;
        }
    }
    let n = points.len() as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

/// Mean distance to centroid.
pub fn mdc(points: &[Vec<f64>], centroid: &[f64]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|p| euclidean(p, centroid)).sum::<f64>() / points.len() as f64
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Faded {
    correct: f64,
    total: f64,
}

/// Test-then-train scorer for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct PrequentialScorer {
    fading: f64,
    majority_label: usize,
    counts: BTreeMap<usize, Faded>,
    label_map: BTreeMap<usize, usize>,
    seen: u64,
    correct_new: u64,
    correct_old: u64,
    false_negatives: u64,
    true_positives: u64,
}

impl PrequentialScorer {
    /// `initial_labels[i]` is the ground-truth class of internal class `i`.
    pub fn new(fading: f64, initial_labels: &[usize]) -> Self {
        Self {
            fading,
            majority_label: initial_labels.first().copied().unwrap_or(0),
            counts: BTreeMap::new(),
            label_map: initial_labels.iter().copied().enumerate().collect(),
            seen: 0,
            correct_new: 0,
            correct_old: 0,
            false_negatives: 0,
            true_positives: 0,
        }
    }

    pub fn label_map(&self) -> &BTreeMap<usize, usize> {
        &self.label_map
    }

    /// Ground-truth classes the model currently has an internal class for.
    pub fn known_classes(&self) -> BTreeSet<usize> {
        self.label_map.values().copied().collect()
    }

    pub fn map_internal(&self, internal: usize) -> Option<usize> {
        self.label_map.get(&internal).copied()
    }

    /// Scores one step. `predicted` is the internal class, or `None` when the
    /// instance was flagged novel. Returns whether it counted as correct.
    pub fn record(&mut self, true_label: usize, predicted: Option<usize>) -> bool {
        let mapped = predicted.and_then(|i| self.map_internal(i));
        let emerging = !self.label_map.values().any(|&v| v == true_label);
        let correct = if emerging {
            predicted.is_none() || mapped == Some(true_label)
        } else {
            mapped == Some(true_label)
        };
        self.seen += 1;
        if correct {
            if emerging {
                self.correct_new += 1;
            } else {
                self.correct_old += 1;
            }
        }
        for f in self.counts.values_mut() {
            f.correct *= self.fading;
            f.total *= self.fading;
        }
        let f = self.counts.entry(true_label).or_default();
        f.total += 1.0;
        if correct {
            f.correct += 1.0;
        }
        if true_label != self.majority_label {
            if predicted.is_some() && mapped == Some(self.majority_label) {
                self.false_negatives += 1;
            } else {
                self.true_positives += 1;
            }
        }
        correct
    }

    /// Maps a newly promoted internal class to the most common ground truth
    /// in its buffer (smallest label on ties). Unlabelled buffers leave the
    /// class unmapped.
    pub fn update_label_map(&mut self, internal: usize, buffer_truths: &[Option<usize>]) {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for t in buffer_truths.iter().flatten() {
            *votes.entry(*t).or_default() += 1;
        }
        let best = votes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&label, _)| label);
        if let Some(label) = best {
            self.label_map.insert(internal, label);
        }
    }

    pub fn steps(&self) -> u64 {
        self.seen
    }

    pub fn correct_new(&self) -> u64 {
        self.correct_new
    }

    pub fn correct_old(&self) -> u64 {
        self.correct_old
    }

    /// `(A_n + A_o) / N`; 1 before any step.
    pub fn en_accuracy(&self) -> f64 {
        if self.seen == 0 {
            return 1.0;
        }
        (self.correct_new + self.correct_old) as f64 / self.seen as f64
    }

    /// Faded recall of every ground-truth class seen so far.
    pub fn recalls(&self) -> Vec<(usize, f64)> {
        self.counts
            .iter()
            .map(|(&c, f)| (c, if f.total > 0.0 { f.correct / f.total } else { 0.0 }))
            .collect()
    }

    pub fn recall(&self, class: usize) -> Option<f64> {
        self.counts
            .get(&class)
            .map(|f| if f.total > 0.0 { f.correct / f.total } else { 0.0 })
    }

    /// Geometric mean of the faded recalls of all classes seen so far.
    pub fn g_mean(&self) -> f64 {
        g_mean_of(&self.recalls().into_iter().map(|(_, r)| r).collect::<Vec<_>>())
    }

    /// Cumulative `FN / (FN + TP)` with the majority as the negative class.
    pub fn false_negative_rate(&self) -> f64 {
        let denom = self.false_negatives + self.true_positives;
        if denom == 0 {
            0.0
        } else {
            self.false_negatives as f64 / denom as f64
        }
    }
}

/// `(prod r_i)^(1/n)`; zero if any recall is zero, one for an empty set.
pub fn g_mean_of(recalls: &[f64]) -> f64 {
    if recalls.is_empty() {
        return 1.0;
    }
    if recalls.iter().any(|&r| r <= 0.0) {
        return 0.0;
    }
    let log_sum: f64 = recalls.iter().map(|r| r.ln()).sum();
    (log_sum / recalls.len() as f64).exp()
}
