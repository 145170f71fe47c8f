//! SMOTE oversampling of minority queues.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::memory::DynamicMemory;
use crate::{euclidean, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    /// Rows per minority class after oversampling. `None` means the majority
    /// queue capacity `m`.
    pub target_count: Option<usize>,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            target_count: None,
        }
    }
}

/// One synthetic point and how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub point: Vec<f64>,
    /// Index of the seed member `x^a`.
    pub a: usize,
    /// Index of the chosen neighbour `x^b`.
    pub b: usize,
    /// Interpolation factor in `[0, 1)`.
    pub gap: f64,
}

/// `x^a + (x^b - x^a) * gap`.
pub fn interpolate(a: &[f64], b: &[f64], gap: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + (y - x) * gap).collect()
}

/// Indices of the `k` nearest other members of every point, ties broken by
/// index.
fn neighbours(queue: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    queue
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<(f64, usize)> = queue
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| (euclidean(p, q), j))
                .collect();
            d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Generates `count` synthetic members of `queue`.
pub fn synthesize<R: Rng + ?Sized>(
    queue: &[Vec<f64>],
    count: usize,
    k_neighbors: usize,
    rng: &mut R,
) -> Result<Vec<Synthetic>> {
    if k_neighbors == 0 {
        return Err(Error::config("SMOTE needs k_neighbors >= 1"));
    }
    if queue.len() < 2 {
        return Err(Error::Precondition("SMOTE needs at least two members".into()));
    }
    let k = k_neighbors.min(queue.len() - 1);
    let nn = neighbours(queue, k);
    Ok((0..count)
        .map(|_| {
            let a = rng.random_range(0..queue.len());
            let b = nn[a][rng.random_range(0..k)];
            let gap: f64 = rng.random();
            Synthetic {
                point: interpolate(&queue[a], &queue[b], gap),
                a,
                b,
                gap,
            }
        })
        .collect())
}

/// Originals followed by enough synthetics to reach `target`. Queues with
/// fewer than two members pass through unchanged.
pub fn smote_class<R: Rng + ?Sized>(
    queue: &[Vec<f64>],
    target: usize,
    k_neighbors: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut out = queue.to_vec();
    if queue.len() >= target {
        return Ok(out);
    }
    if queue.len() < 2 {
        log::warn!("SMOTE skipped for a queue of {} member(s)", queue.len());
        return Ok(out);
    }
    out.extend(
        synthesize(queue, target - queue.len(), k_neighbors, rng)?
            .into_iter()
            .map(|s| s.point),
    );
    Ok(out)
}

/// Majority rows as stored, each minority queue oversampled to the target,
/// labelled by queue index and shuffled.
pub fn build_training_set<R: Rng + ?Sized>(
    memory: &DynamicMemory,
    config: &SmoteConfig,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, usize)>> {
    let majority = memory.queue(0).expect("majority queue exists");
    let target = config.target_count.unwrap_or(majority.capacity());
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
    for c in 0..memory.class_count() {
        let q = memory.queue(c).expect("class in range");
        if q.is_empty() {
            return Err(Error::Precondition(format!("queue {c} is empty")));
        }
        let pts = q.features();
        let class_rows = if c == 0 {
            pts
        } else {
            smote_class(&pts, target, config.k_neighbors, rng)?
        };
        rows.extend(class_rows.into_iter().map(|x| (x, c)));
    }
    rows.shuffle(rng);
    Ok(rows)
}
