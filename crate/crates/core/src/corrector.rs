//! Purification of minority queues before oversampling.
//!
//! For each minority class the corrector estimates a local density (inverse
//! median k-NN distance) and a scale (mean distance to the geometric median),
//! turns the compensated density `rho * s` and the queue size into a retention
//! ratio, and keeps the `k_i` members closest to the geometric median under
//! the Mahalanobis metric of a covariance centred on that median.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::memory::DynamicMemory;
use crate::metrics::{centroid, mdc};
use crate::{euclidean, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetentionPolicy {
    pub keep_min: f64,
    pub keep_max: f64,
    pub lambda: f64,
    pub min_keep: usize,
    /// Neighbour rank used for the density estimate.
    pub k_density: usize,
    /// Density reported when the median k-NN distance is zero.
    pub rho_cap: f64,
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        Self {
            keep_min: 0.5,
            keep_max: 0.95,
            lambda: 0.5,
            min_keep: 5,
            k_density: 5,
            rho_cap: 1e6,
        }
    }
}

impl RetentionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_min > 0.0 && self.keep_min <= 1.0) {
            return Err(Error::config("keep_min must lie in (0, 1]"));
        }
        if !(self.keep_max >= self.keep_min && self.keep_max <= 1.0) {
            return Err(Error::config("keep_max must lie in [keep_min, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda must lie in [0, 1]"));
        }
        if self.min_keep == 0 || self.k_density == 0 {
            return Err(Error::config("min_keep and k_density must be positive"));
        }
        if !(self.rho_cap > 0.0) {
            return Err(Error::config("rho_cap must be positive"));
        }
        Ok(())
    }
}

/// Robust statistics of one class queue.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub rho: f64,
    pub s: f64,
    pub mu: Vec<f64>,
    pub rho_comp: f64,
    pub sigma: DMatrix<f64>,
    pub queue_size: usize,
}

/// Inverse of the median distance from each point to its `k`-th nearest
/// other point.
pub fn local_density(points: &[Vec<f64>], k: usize, rho_cap: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Precondition("density needs at least two points".into()));
    }
    if k == 0 || k >= points.len() {
        return Err(Error::Precondition(format!(
            "k = {k} must lie in 1..{}",
            points.len()
        )));
    }
    let mut kth: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| euclidean(p, q))
                .collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    let med = median(&mut kth);
    Ok(if med > 0.0 { 1.0 / med } else { rho_cap })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

const GM_TOL: f64 = 1e-7;
const GM_MAX_ITER: usize = 500;
const GM_COINCIDE: f64 = 1e-12;

/// Geometric median by Weiszfeld iteration from the coordinate-wise median,
/// with the Vardi-Zhang step when an iterate lands on a data point.
pub fn geometric_median(points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = points
        .first()
        .ok_or_else(|| Error::Precondition("geometric median of an empty set".into()))?;
    let d = first.len();
    if points.len() == 1 {
        return Ok(first.clone());
    }
    let mut y: Vec<f64> = (0..d)
        .map(|j| {
            let mut col: Vec<f64> = points.iter().map(|p| p[j]).collect();
            median(&mut col)
        })
        .collect();
    let mut num = vec![0.0; d];
    let mut resid = vec![0.0; d];
    for _ in 0..GM_MAX_ITER {
        num.fill(0.0);
        resid.fill(0.0);
        let mut denom = 0.0;
        let mut coincident = 0usize;
        for p in points {
            let dist = euclidean(p, &y);
            if dist <= GM_COINCIDE {
                coincident += 1;
                continue;
            }
            let w = 1.0 / dist;
            denom += w;
            for j in 0..d {
                num[j] += w * p[j];
                resid[j] += w * (p[j] - y[j]);
            }
        }
        if denom == 0.0 {
            // Every point coincides with y.
            break;
        }
        let next: Vec<f64> = if coincident == 0 {
            num.iter().map(|v| v / denom).collect()
        } else {
            let r = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r <= coincident as f64 {
                // The data point itself satisfies the optimality condition.
                break;
            }
            let eta = coincident as f64 / r;
            num.iter()
                .zip(&y)
                .map(|(v, yj)| (1.0 - eta) * (v / denom) + eta * yj)
                .collect()
        };
        let step = euclidean(&next, &y);
        y = next;
        if step < GM_TOL {
            break;
        }
    }
    Ok(y)
}

/// Mean Euclidean distance to `mu`.
pub fn class_scale(points: &[Vec<f64>], mu: &[f64]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|p| euclidean(p, mu)).sum::<f64>() / points.len() as f64
}

/// Covariance around `mu` with diagonal loading `1e-6 * trace / d`.
pub fn robust_covariance(points: &[Vec<f64>], mu: &[f64]) -> DMatrix<f64> {
    let d = mu.len();
    let mut sigma = DMatrix::<f64>::zeros(d, d);
    for p in points {
        let c = DVector::from_iterator(d, p.iter().zip(mu).map(|(a, b)| a - b));
        sigma += &c * c.transpose();
    }
    if !points.is_empty() {
        sigma /= points.len() as f64;
    }
    let load = 1e-6 * sigma.trace() / d as f64;
    for i in 0..d {
        sigma[(i, i)] += load;
    }
    sigma
}

/// Mahalanobis distances to `mu`, or `None` if `sigma` is not positive
/// definite.
pub fn mahalanobis_distances(points: &[Vec<f64>], mu: &[f64], sigma: &DMatrix<f64>) -> Option<Vec<f64>> {
    let chol = sigma.clone().cholesky()?;
    let d = mu.len();
    Some(
        points
            .iter()
            .map(|p| {
                let c = DVector::from_iterator(d, p.iter().zip(mu).map(|(a, b)| a - b));
                let z = chol.l_dirty().solve_lower_triangular(&c).unwrap_or(c);
                z.norm()
            })
            .collect(),
    )
}

pub fn class_stats(points: &[Vec<f64>], policy: &RetentionPolicy) -> Result<ClassStats> {
    let mu = geometric_median(points)?;
    let rho = if points.len() < 2 {
        policy.rho_cap
    } else {
        local_density(points, policy.k_density.min(points.len() - 1), policy.rho_cap)?
    };
    let s = class_scale(points, &mu);
    let sigma = robust_covariance(points, &mu);
    Ok(ClassStats {
        rho,
        s,
        rho_comp: rho * s,
        mu,
        sigma,
        queue_size: points.len(),
    })
}

fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; values.len()]
    }
}

/// Retention ratio per class from min-max normalized compensated density and
/// queue size.
pub fn retention_ratios(stats: &[ClassStats], policy: &RetentionPolicy) -> Vec<f64> {
    let rho_hat = min_max_normalize(&stats.iter().map(|s| s.rho_comp).collect::<Vec<_>>());
    let size_hat = min_max_normalize(&stats.iter().map(|s| s.queue_size as f64).collect::<Vec<_>>());
    rho_hat
        .iter()
        .zip(&size_hat)
        .map(|(r, l)| ratio_from_normalized(*r, *l, policy))
        .collect()
}

/// `keep_min + (lambda * rho_hat + (1 - lambda) * size_hat) * (keep_max - keep_min)`.
pub fn ratio_from_normalized(rho_hat: f64, size_hat: f64, policy: &RetentionPolicy) -> f64 {
    let mix = policy.lambda * rho_hat + (1.0 - policy.lambda) * size_hat;
    let r = policy.keep_min + mix * (policy.keep_max - policy.keep_min);
    r.clamp(policy.keep_min, policy.keep_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreSubset {
    /// Retained positions in the queue, ascending.
    pub indices: Vec<usize>,
    pub k: usize,
    /// Distance of the `k`-th closest member.
    pub tau: f64,
    pub distances: Vec<f64>,
    pub euclidean_fallback: bool,
}

/// `min(|queue|, max(min_keep, floor(r * |queue|)))`.
pub fn core_size(len: usize, r: f64, min_keep: usize) -> usize {
    // The small offset keeps products like 0.7 * 30 from flooring to 20.
    let k = (r * len as f64 + 1e-9).floor() as usize;
    k.max(min_keep).min(len)
}

pub fn core_subset(
    points: &[Vec<f64>],
    mu: &[f64],
    sigma: &DMatrix<f64>,
    r: f64,
    policy: &RetentionPolicy,
) -> Result<CoreSubset> {
    if points.is_empty() {
        return Err(Error::Precondition("core subset of an empty queue".into()));
    }
    let (distances, euclidean_fallback) = match mahalanobis_distances(points, mu, sigma) {
        Some(d) => (d, false),
        None => {
            log::warn!("covariance is not positive definite; ranking by Euclidean distance");
            (points.iter().map(|p| euclidean(p, mu)).collect(), true)
        }
    };
    let k = core_size(points.len(), r, policy.min_keep);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let tau = distances[order[k - 1]];
    let mut indices = order[..k].to_vec();
    indices.sort_unstable();
    Ok(CoreSubset {
        indices,
        k,
        tau,
        distances,
        euclidean_fallback,
    })
}

/// One row of the correction diagnostic dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectionRecord {
    pub class: usize,
    pub rho: f64,
    pub s: f64,
    pub rho_comp: f64,
    pub r: f64,
    pub k: usize,
    pub tau: f64,
    pub mdc_before: f64,
    pub mdc_after: f64,
}

/// Replaces every minority queue `q_1..q_n` by its core subset. The majority
/// queue is left alone.
pub fn correct(memory: &mut DynamicMemory, policy: &RetentionPolicy) -> Result<Vec<CorrectionRecord>> {
    policy.validate()?;
    let classes: Vec<usize> = (1..memory.class_count()).collect();
    let mut all_points = Vec::with_capacity(classes.len());
    let mut stats = Vec::with_capacity(classes.len());
    for &c in &classes {
        let q = memory.queue(c).expect("class in range");
        if q.is_empty() {
            return Err(Error::Precondition(format!("minority queue {c} is empty")));
        }
        let pts = q.features();
        stats.push(class_stats(&pts, policy)?);
        all_points.push(pts);
    }
    let ratios = retention_ratios(&stats, policy);
    let mut records = Vec::with_capacity(classes.len());
    for (((&c, pts), st), &r) in classes.iter().zip(&all_points).zip(&stats).zip(&ratios) {
        let subset = core_subset(pts, &st.mu, &st.sigma, r, policy)?;
        let kept: Vec<Vec<f64>> = subset.indices.iter().map(|&i| pts[i].clone()).collect();
        records.push(CorrectionRecord {
            class: c,
            rho: st.rho,
            s: st.s,
            rho_comp: st.rho_comp,
            r,
            k: subset.k,
            tau: subset.tau,
            mdc_before: mdc(pts, &centroid(pts)),
            mdc_after: mdc(&kept, &centroid(&kept)),
        });
        memory
            .queue_mut(c)
            .expect("class in range")
            .retain_indices(&subset.indices)?;
    }
    Ok(records)
}
