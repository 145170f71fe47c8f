//! Brute-force oracles shared by the property and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use scil_core::corrector::{correct, RetentionPolicy};
use scil_core::euclidean;
use scil_core::memory::{DynamicMemory, QueueItem, Slot};
use scil_core::model::{ModelConfig, UnifiedModel};
use scil_core::nn::{Activation, Network, ReconLoss, CLIP_EPS};

pub fn sum_dist(points: &[Vec<f64>], y: &[f64]) -> f64 {
    points.iter().map(|p| euclidean(p, y)).sum()
}

/// Brute-force minimizer of the summed distance: a dense grid over the
/// bounding box, zoomed around the best cell until the cell is below 1e-4.
pub fn grid_minimizer(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    let mut lo: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min)).collect();
    let mut hi: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let steps = if d == 1 { 2000 } else { 200 };
    let mut best = lo.clone();
    loop {
        let cell: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a) / steps as f64).collect();
        let mut best_val = f64::INFINITY;
        let mut idx = vec![0usize; d];
        loop {
            let y: Vec<f64> = (0..d).map(|j| lo[j] + idx[j] as f64 * cell[j]).collect();
            let v = sum_dist(points, &y);
            if v < best_val {
                best_val = v;
                best = y;
            }
            let mut j = 0;
            while j < d {
                idx[j] += 1;
                if idx[j] <= steps {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == d {
                break;
            }
        }
        if cell.iter().all(|c| *c < 1e-4) {
            return best;
        }
        for j in 0..d {
            lo[j] = best[j] - 2.0 * cell[j];
            hi[j] = best[j] + 2.0 * cell[j];
        }
    }
}

pub fn collinear(points: &[Vec<f64>]) -> bool {
    if points[0].len() == 1 {
        return true;
    }
    let o = &points[0];
    let Some(far) = points.iter().max_by(|a, b| euclidean(a, o).total_cmp(&euclidean(b, o))) else {
        return true;
    };
    let (ux, uy) = (far[0] - o[0], far[1] - o[1]);
    points.iter().all(|p| (ux * (p[1] - o[1]) - uy * (p[0] - o[0])).abs() < 1e-9)
}

/// Finds members `a`, `b` and a gap in [0, 1] with `s = a + gap (b - a)` in
/// every coordinate to 1e-9.
pub fn on_some_segment(s: &[f64], members: &[Vec<f64>]) -> bool {
    for (i, a) in members.iter().enumerate() {
        for b in &members[i + 1..] {
            for (x, y) in [(a, b), (b, a)] {
                let Some(j) = (0..s.len()).max_by(|&p, &q| (y[p] - x[p]).abs().total_cmp(&(y[q] - x[q]).abs())) else {
                    continue;
                };
                let span = y[j] - x[j];
                if span.abs() < 1e-12 {
                    continue;
                }
                let gap = (s[j] - x[j]) / span;
                if !(-1e-9..=1.0 + 1e-9).contains(&gap) {
                    continue;
                }
                if s.iter().zip(x).zip(y).all(|((sv, xv), yv)| (xv + gap * (yv - xv) - sv).abs() <= 1e-9) {
                    return true;
                }
            }
        }
    }
    false
}

/// `sum gamma^(T-t) [correct_t]` over the steps of one class, divided by the
/// same sum without the indicator.
pub fn brute_recall(history: &[(usize, bool)], class: usize, gamma: f64) -> Option<f64> {
    let last = history.len();
    let (mut num, mut den) = (0.0, 0.0);
    for (t, &(y, ok)) in history.iter().enumerate() {
        if y == class {
            let w = gamma.powi((last - 1 - t) as i32);
            den += w;
            if ok {
                num += w;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// `(prod r)^(1/n)`, zero if any recall is zero.
pub fn brute_g_mean(recalls: &[f64]) -> f64 {
    if recalls.iter().any(|r| *r == 0.0) {
        0.0
    } else {
        recalls.iter().product::<f64>().powf(1.0 / recalls.len() as f64)
    }
}

pub const H: f64 = 1e-5;

fn random_config(rng: &mut ChaCha8Rng, recon: ReconLoss) -> (ModelConfig, usize) {
    let smooth = [Activation::Sigmoid, Activation::Tanh, Activation::LeakyRelu, Activation::Identity];
    let d = rng.random_range(1..=4);
    let mut cfg = ModelConfig::small(d);
    cfg.encoder_hidden = (0..rng.random_range(0..=2)).map(|_| rng.random_range(1..=5)).collect();
    cfg.embedding_dim = rng.random_range(1..=3);
    cfg.head_hidden = (0..rng.random_range(0..=1)).map(|_| rng.random_range(1..=4)).collect();
    cfg.hidden_activation = smooth[rng.random_range(0..smooth.len())];
    cfg.embedding_activation = smooth[rng.random_range(0..smooth.len())];
    cfg.recon_loss = recon;
    cfg.alpha = rng.random_range(0.05..0.95);
    (cfg, rng.random_range(2..=4))
}

fn batch(rng: &mut ChaCha8Rng, d: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let b = rng.random_range(1..=6);
    let xs = (0..b).map(|_| (0..d).map(|_| rng.random_range(0.05..0.95)).collect()).collect();
    let ys = (0..b)
        .map(|_| {
            let c = rng.random_range(0..classes);
            (0..classes).map(|i| f64::from(u8::from(i == c))).collect()
        })
        .collect();
    (xs, ys)
}

/// True when some probability in the batch falls outside the log clip. The
/// clipped loss is flat there while the analytic gradient keeps the
/// unclipped softmax term, so such draws are not comparable.
fn clip_active(model: &UnifiedModel, xs: &[Vec<f64>]) -> bool {
    let outside = |v: f64| !(CLIP_EPS..=1.0 - CLIP_EPS).contains(&v);
    let bce = model.config().recon_loss == ReconLoss::BinaryCrossEntropy;
    xs.iter().any(|x| {
        let p = model.predict(x).unwrap();
        p.probabilities.iter().any(|&v| outside(v))
            || (bce && model.reconstruct(x).unwrap().into_iter().any(outside))
    })
}

/// Margin around the LeakyReLU kink. A step of `H` in one parameter moves
/// any preactivation by far less than this.
const KINK_MARGIN: f64 = 1e-3;

/// True when a LeakyReLU preactivation on some batch row lies within
/// `KINK_MARGIN` of zero, where central differences straddle the kink.
fn near_kink(model: &UnifiedModel, xs: &[Vec<f64>]) -> bool {
    fn scan(net: &Network, input: &[f64]) -> (bool, Vec<f64>) {
        let mut cur = input.to_vec();
        let mut hit = false;
        for layer in net.layers() {
            let (n, w, b) = (layer.in_dim(), layer.weights(), layer.biases());
            let z: Vec<f64> = (0..layer.out_dim())
                .map(|o| b[o] + w[o * n..(o + 1) * n].iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            if layer.activation() == Activation::LeakyRelu {
                hit |= z.iter().any(|v| v.abs() < KINK_MARGIN);
            }
            cur = z.into_iter().map(|v| layer.activation().apply(v)).collect();
        }
        (hit, cur)
    }
    xs.iter().any(|x| {
        let (enc_hit, emb) = scan(model.encoder(), x);
        enc_hit || scan(model.decoder(), &emb).0 || scan(model.classifier(), &emb).0
    })
}

/// Largest relative error over one network, `|a - n| / max(|a|, |n|, 1e-6)`.
/// The floor keeps gradients near zero, where the finite difference is pure
/// rounding noise (about `eps * loss / H`), from dominating.
pub fn max_gradient_error(seed: u64, recon: ReconLoss) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut model, xs, ys) = loop {
        let (cfg, classes) = random_config(&mut rng, recon);
        let d = cfg.input_dim;
        let model = UnifiedModel::new(cfg, classes, seed, &mut rng).unwrap();
        let (xs, ys) = batch(&mut rng, d, classes);
        if !clip_active(&model, &xs) && !near_kink(&model, &xs) {
            break (model, xs, ys);
        }
    };
    let (_, grads) = model.loss_gradients(&xs, &ys).unwrap();
    let analytic = grads.flatten();
    assert_eq!(analytic.len(), model.param_count());

    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let p = model.param(i);
        model.set_param(i, p + H);
        let up = model.total_loss(&xs, &ys).unwrap();
        model.set_param(i, p - H);
        let down = model.total_loss(&xs, &ys).unwrap();
        model.set_param(i, p);
        let numeric = (up - down) / (2.0 * H);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

/// One planted-contaminant trial: a 30-point Gaussian cluster plus five
/// points at 10 to 15 standard deviations, corrected with a retention ratio
/// that keeps exactly 30. True if every contaminant was dropped.
pub fn planted_trial(trial: u64) -> bool {
    let sigma = 1.0;
    let normal = Normal::new(0.0, sigma).unwrap();
    let keep = 30.0 / 35.0;
    let policy = RetentionPolicy {
        keep_min: keep,
        keep_max: keep,
        ..RetentionPolicy::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
    let d = 2 + (trial % 3) as usize;
    let center: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut points: Vec<(Vec<f64>, bool)> = (0..30)
        .map(|_| (center.iter().map(|c| c + normal.sample(&mut rng)).collect(), false))
        .collect();
    for _ in 0..5 {
        let dir: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = sigma * rng.random_range(10.0..15.0);
        points.push((center.iter().zip(&dir).map(|(c, v)| c + r * v / norm).collect(), true));
    }
    let mut memory = DynamicMemory::new(100, 35, 1).unwrap();
    memory.append(Slot::Class(0), QueueItem::new(vec![0.0; d], 0, None)).unwrap();
    for (t, (p, bad)) in points.iter().enumerate() {
        let truth = Some(usize::from(*bad));
        memory.append(Slot::Class(1), QueueItem::new(p.clone(), t as u64, truth)).unwrap();
    }
    let records = correct(&mut memory, &policy).unwrap();
    let q = memory.queue(1).unwrap();
    records[0].k == 30 && q.len() == 30 && q.items().all(|it| it.ground_truth_for_eval() == Some(0))
}
