//! Per-class novelty thresholds: `theta_i` is the largest per-instance
//! reconstruction loss among the instances currently in `q_i`.

use crate::memory::DynamicMemory;
use crate::model::{Prediction, UnifiedModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyThresholds {
    pub theta: Vec<f64>,
    pub computed_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    Known(usize),
    Novel,
}

impl NoveltyThresholds {
    pub fn get(&self, class: usize) -> Option<f64> {
        self.theta.get(class).copied()
    }
}

pub fn compute_thresholds(model: &UnifiedModel, memory: &DynamicMemory, now: u64) -> Result<NoveltyThresholds> {
    let theta = (0..memory.class_count())
        .map(|c| {
            let q = memory.queue(c).ok_or(Error::Threshold { class: c })?;
            if q.is_empty() {
                return Err(Error::Threshold { class: c });
            }
            q.items().try_fold(f64::NEG_INFINITY, |acc, it| {
                Ok(acc.max(model.reconstruction_loss(&it.features)?))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoveltyThresholds {
        theta,
        computed_at: now,
    })
}

/// `Novel` iff the loss strictly exceeds the predicted class's threshold.
pub fn detect(prediction: &Prediction, thresholds: &NoveltyThresholds) -> Detection {
    match thresholds.get(prediction.label) {
        Some(theta) if prediction.recon_loss > theta => Detection::Novel,
        Some(_) => Detection::Known(prediction.label),
        // A class without a threshold has never been characterized.
        None => Detection::Novel,
    }
}
