#![allow(dead_code)]

use fairm2s::autodiff::{ParamSet, Tape, Tensor, Var};
use fairm2s::backbone::{Backbone, BackboneConfig, Mode};
use fairm2s::data::ParticipantRecord;
use fairm2s::meta::EpisodeTask;
use fairm2s::objectives::{bce_loss, inner_loss, LabeledBatch, LossWeights};
use fairm2s::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> BackboneConfig {
    BackboneConfig {
        input_dim: 3,
        seq_len: 4,
        lstm_hidden: 2,
        gru_hidden: 2,
        dropout_rate: 0.25,
    }
}

/// A random labelled batch with both groups and both classes present.
pub struct Batch {
    pub xs: Vec<Tensor<f64>>,
    pub labels: Vec<u8>,
    pub groups: Vec<usize>,
}

pub fn random_batch(cfg: &BackboneConfig, n: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..n)
        .map(|_| {
            let data = (0..cfg.seq_len * cfg.input_dim)
                .map(|_| rng.random_range(-1.5..1.5))
                .collect();
            Tensor::matrix(cfg.seq_len, cfg.input_dim, data).unwrap()
        })
        .collect();
    let labels = (0..n).map(|i| (i % 2) as u8).collect();
    let groups = (0..n).map(|i| (i / 2) % 2).collect();
    Batch { xs, labels, groups }
}

/// Inner loss of the backbone on `batch` and its flat gradient, built
/// directly on a tape.
pub fn loss_and_grad<S: Real>(
    bb: &Backbone,
    params: &ParamSet<S>,
    batch: &Batch,
    weights: &LossWeights,
    mode: Mode,
    seed: u64,
) -> (f64, Vec<S>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let xs: Vec<Tensor<S>> = batch.xs.iter().map(|x| x.cast()).collect();
    let refs: Vec<&Tensor<S>> = xs.iter().collect();
    let input = tape.constant(bb.stack(&refs).unwrap());
    let probs = bb
        .forward_on_tape(&mut tape, &vars, input, mode, seed)
        .unwrap();
    let lb = LabeledBatch::new(&batch.labels, &batch.groups).unwrap();
    let loss = inner_loss(&mut tape, probs, lb, weights).unwrap();
    let value = tape.value(loss.total).item().as_f64();
    let mut grads = tape.backward(loss.total).unwrap();
    (value, params.flat_gradient(&mut grads, &vars))
}

pub fn loss_at(
    bb: &Backbone,
    params: &ParamSet<f64>,
    batch: &Batch,
    weights: &LossWeights,
    mode: Mode,
    seed: u64,
) -> f64 {
    loss_and_grad(bb, params, batch, weights, mode, seed).0
}

/// Central finite differences of the inner loss, evaluated in f64.
pub fn finite_difference(
    bb: &Backbone,
    params: &ParamSet<f64>,
    batch: &Batch,
    weights: &LossWeights,
    mode: Mode,
    seed: u64,
    step: f64,
) -> Vec<f64> {
    let flat = params.flatten();
    (0..flat.len())
        .map(|i| {
            let h = step * flat[i].abs().max(1.0);
            let mut plus = flat.clone();
            plus[i] += h;
            let mut minus = flat.clone();
            minus[i] -= h;
            let lp = loss_at(
                bb,
                &ParamSet::unflatten(&plus, params).unwrap(),
                batch,
                weights,
                mode,
                seed,
            );
            let lm = loss_at(
                bb,
                &ParamSet::unflatten(&minus, params).unwrap(),
                batch,
                weights,
                mode,
                seed,
            );
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖b‖, 1e-12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Weights that switch on every inner-loss term.
pub fn all_terms() -> LossWeights {
    LossWeights {
        gamma: 0.5,
        alpha: 0.2,
        lambda_smooth: 0.1,
        margin_m: 0.5,
        smooth_amount: 0.1,
    }
}

/// `(f32 error, f64 error)` of analytic gradients against finite differences
/// on the tiny config with a batch of six.
pub fn gradient_check(seed: u64) -> (f64, f64) {
    let cfg = tiny_config();
    let bb = Backbone::new(cfg).unwrap();
    let batch = random_batch(&cfg, 6, seed);
    let weights = all_terms();
    let p64: ParamSet<f64> = perturbed_init(&bb, seed);
    let p32: ParamSet<f32> = p64.cast();
    // f32 check: analytic gradient in f32 at the f32-rounded point
    let p32_as_64: ParamSet<f64> = p32.cast();
    let (_, g32) = loss_and_grad(&bb, &p32, &batch, &weights, Mode::Train, seed);
    let g32: Vec<f64> = g32.iter().map(|&v| f64::from(v)).collect();
    let fd32 = finite_difference(&bb, &p32_as_64, &batch, &weights, Mode::Train, seed, 1e-5);
    let (_, g64) = loss_and_grad(&bb, &p64, &batch, &weights, Mode::Train, seed);
    let fd64 = finite_difference(&bb, &p64, &batch, &weights, Mode::Train, seed, 1e-5);
    (relative_error(&g32, &fd32), relative_error(&g64, &fd64))
}

/// Initial parameters with non-zero biases so every path carries gradient.
pub fn perturbed_init(bb: &Backbone, seed: u64) -> ParamSet<f64> {
    let init: ParamSet<f64> = bb.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let flat: Vec<f64> = init
        .flatten()
        .iter()
        .map(|v| v + rng.random_range(-0.3..0.3))
        .collect();
    ParamSet::unflatten(&flat, &init).unwrap()
}

fn bce_gradient(
    bb: &Backbone,
    params: &ParamSet<f32>,
    items: &[&ParticipantRecord<f32>],
    mode: Mode,
    seed: u64,
) -> Vec<f32> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let xs: Vec<&Tensor<f32>> = items.iter().map(|r| &r.features).collect();
    let input = tape.constant(bb.stack(&xs).unwrap());
    let probs = bb
        .forward_on_tape(&mut tape, &vars, input, mode, seed)
        .unwrap();
    let labels: Vec<u8> = items.iter().map(|r| r.label).collect();
    let loss = bce_loss(&mut tape, probs, &labels).unwrap();
    let mut grads = tape.backward(loss).unwrap();
    params.flat_gradient(&mut grads, &vars)
}

/// Plain first-order MAML with an SGD outer step: adapt on the support BCE,
/// take the query BCE gradient at the adapted point, average over tasks.
pub fn fomaml_step(
    bb: &Backbone,
    theta: &ParamSet<f32>,
    tasks: &[EpisodeTask<'_, f32>],
    eta: f64,
    inner_steps: usize,
    beta: f64,
) -> ParamSet<f32> {
    let eta = eta as f32;
    let mut total = vec![0.0f32; theta.numel()];
    for task in tasks {
        let mut phi = theta.clone();
        for _ in 0..inner_steps {
            let g = bce_gradient(bb, &phi, &task.support, Mode::Train, task.seed);
            let flat: Vec<f32> = phi
                .flatten()
                .iter()
                .zip(&g)
                .map(|(p, g)| p - eta * g)
                .collect();
            phi = ParamSet::unflatten(&flat, theta).unwrap();
        }
        let g = bce_gradient(bb, &phi, &task.query, Mode::Eval, 0);
        for (t, g) in total.iter_mut().zip(&g) {
            *t += g;
        }
    }
    let n = tasks.len() as f32;
    let beta = beta as f32;
    let flat: Vec<f32> = theta
        .flatten()
        .iter()
        .zip(&total)
        .map(|(p, g)| p - beta * (g / n))
        .collect();
    ParamSet::unflatten(&flat, theta).unwrap()
}

/// Brute-force `(accuracy, DI, Eopp, Eodd)` straight from the item lists.
pub fn metric_oracle(
    preds: &[u8],
    labels: &[u8],
    groups: &[usize],
    n_groups: usize,
) -> (f64, Option<f64>, Option<f64>, Option<f64>) {
    let n = preds.len();
    let acc = (0..n).filter(|&i| preds[i] == labels[i]).count() as f64 / n as f64;
    let rate = |g: usize, cond: &dyn Fn(usize) -> bool| -> Option<f64> {
        let idx: Vec<usize> = (0..n).filter(|&i| groups[i] == g && cond(i)).collect();
        (!idx.is_empty())
            .then(|| idx.iter().filter(|&&i| preds[i] == 1).count() as f64 / idx.len() as f64)
    };
    let all = |cond: &dyn Fn(usize) -> bool| -> Option<Vec<f64>> {
        (0..n_groups).map(|g| rate(g, cond)).collect()
    };
    let spread = |v: &[f64]| {
        let mut worst = 0.0f64;
        for a in v {
            for b in v {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    };
    let di = all(&|_| true).map(|r| {
        let hi = r.iter().copied().fold(0.0, f64::max);
        let lo = r.iter().copied().fold(1.0, f64::min);
        if hi == 0.0 {
            1.0
        } else {
            lo / hi
        }
    });
    let tpr = all(&|i| labels[i] == 1);
    let fpr = all(&|i| labels[i] == 0);
    let eopp = tpr.as_ref().map(|t| spread(t));
    let eodd = match (&tpr, &fpr) {
        (Some(t), Some(f)) => Some(0.5 * (spread(t) + spread(f))),
        _ => None,
    };
    (acc, di, eopp, eodd)
}

/// Indices of points no other point dominates, by pairwise comparison.
pub fn pareto_oracle(points: &[(f64, f64)]) -> Vec<usize> {
    let beats = |a: (f64, f64), b: (f64, f64)| a.0 >= b.0 && a.1 <= b.1 && (a.0 > b.0 || a.1 < b.1);
    (0..points.len())
        .filter(|&i| !points.iter().any(|&q| beats(q, points[i])))
        .collect()
}
