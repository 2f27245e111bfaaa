use fairm2s::autodiff::{Tape, Tensor, Var};
use fairm2s::objectives::{
    bce_loss, eodd_loss, inner_loss, margin_loss, smooth_loss, LabeledBatch, LossWeights,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    p: Vec<f64>,
    y: Vec<u8>,
    g: Vec<usize>,
}

fn case(n: usize, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Case {
        p: (0..n).map(|_| rng.random_range(0.02..0.98)).collect(),
        y: (0..n).map(|_| rng.random_range(0..2)).collect(),
        g: (0..n).map(|_| rng.random_range(0..2)).collect(),
    }
}

fn probs(tape: &mut Tape<f64>, p: &[f64]) -> Var {
    tape.leaf(Tensor::matrix(p.len(), 1, p.to_vec()).unwrap())
}

fn bce_oracle(p: &[f64], t: &[f64]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(t)
        .map(|(p, t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum();
    total / p.len() as f64
}

fn mean_where(p: &[f64], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let v: Vec<f64> = (0..p.len()).filter(|&i| keep(i)).map(|i| p[i]).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn eodd_oracle(c: &Case) -> f64 {
    let rate = |g: usize, y: u8| mean_where(&c.p, |i| c.g[i] == g && c.y[i] == y);
    let mut terms = Vec::new();
    for y in [1, 0] {
        if let (Some(a), Some(b)) = (rate(0, y), rate(1, y)) {
            terms.push((a - b).abs());
        }
    }
    terms.iter().sum::<f64>() / terms.len() as f64
}

fn margin_oracle(c: &Case, m: f64) -> f64 {
    let pos = mean_where(&c.p, |i| c.y[i] == 1).unwrap();
    let neg = mean_where(&c.p, |i| c.y[i] == 0).unwrap();
    (m - (pos - neg)).max(0.0)
}

#[test]
fn bce_matches_per_item_sum() {
    let c = case(10, 1);
    let mut tape = Tape::new();
    let p = probs(&mut tape, &c.p);
    let l = bce_loss(&mut tape, p, &c.y).unwrap();
    let t: Vec<f64> = c.y.iter().map(|&y| f64::from(y)).collect();
    assert!((tape.value(l).item() - bce_oracle(&c.p, &t)).abs() < 1e-12);
}

#[test]
fn smoothing_matches_formula() {
    let c = case(10, 2);
    let mut tape = Tape::new();
    let p = probs(&mut tape, &c.p);
    let l = smooth_loss(&mut tape, p, &c.y, 0.1).unwrap();
    let t: Vec<f64> =
        c.y.iter()
            .map(|&y| if y == 1 { 0.9 } else { 0.1 })
            .collect();
    assert!((tape.value(l).item() - bce_oracle(&c.p, &t)).abs() < 1e-12);
}

#[test]
fn eodd_matches_partition_and_average() {
    for seed in 0..20 {
        let mut c = case(12, 100 + seed);
        // guarantee both groups and both classes
        c.g[..4].copy_from_slice(&[0, 0, 1, 1]);
        c.y[..4].copy_from_slice(&[0, 1, 0, 1]);
        let mut tape = Tape::new();
        let p = probs(&mut tape, &c.p);
        let t = eodd_loss(&mut tape, p, LabeledBatch::new(&c.y, &c.g).unwrap()).unwrap();
        assert!(t.warning.is_none());
        assert!((tape.value(t.value).item() - eodd_oracle(&c)).abs() < 1e-12);
    }
}

#[test]
fn margin_matches_mean_and_hinge() {
    for seed in 0..20 {
        let mut c = case(10, 200 + seed);
        c.y[0] = 0;
        c.y[1] = 1;
        let mut tape = Tape::new();
        let p = probs(&mut tape, &c.p);
        let t = margin_loss(&mut tape, p, &c.y, 0.5).unwrap();
        assert!((tape.value(t.value).item() - margin_oracle(&c, 0.5)).abs() < 1e-12);
    }
}

#[test]
fn inner_loss_is_component_sum() {
    let mut c = case(16, 3);
    c.g[..4].copy_from_slice(&[0, 0, 1, 1]);
    c.y[..4].copy_from_slice(&[0, 1, 0, 1]);
    let w = LossWeights {
        gamma: 0.5,
        alpha: 0.2,
        lambda_smooth: 0.1,
        margin_m: 0.5,
        smooth_amount: 0.1,
    };
    let mut tape = Tape::new();
    let p = probs(&mut tape, &c.p);
    let l = inner_loss(&mut tape, p, LabeledBatch::new(&c.y, &c.g).unwrap(), &w).unwrap();
    let hard: Vec<f64> = c.y.iter().map(|&y| f64::from(y)).collect();
    let soft: Vec<f64> =
        c.y.iter()
            .map(|&y| if y == 1 { 0.9 } else { 0.1 })
            .collect();
    let expect = bce_oracle(&c.p, &hard)
        + 0.5 * eodd_oracle(&c)
        + 0.2 * margin_oracle(&c, 0.5)
        + 0.1 * bce_oracle(&c.p, &soft);
    assert!((tape.value(l.total).item() - expect).abs() < 1e-12);
}
