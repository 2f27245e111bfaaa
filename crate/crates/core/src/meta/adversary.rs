use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adapt::GradientBundle;
use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::vector;

/// Initial output bias; `tanh(2) ≈ 0.964`, close to passthrough.
pub const OUTPUT_BIAS: f64 = 2.0;

const NAMES: [&str; 4] = ["adv.w1", "adv.b1", "adv.w2", "adv.b2"];

/// Summary of one mask.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MaskStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl MaskStats {
    pub fn of<S: Real>(mask: &[S]) -> Self {
        if mask.is_empty() {
            return Self::default();
        }
        let vals: Vec<f64> = mask.iter().map(|m| m.as_f64()).collect();
        let (mean, std) = vector::mean_std(&vals);
        Self {
            mean,
            std,
            min: vals.iter().copied().fold(f64::INFINITY, f64::min),
            max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Elementwise `3 → h → 1` tanh network producing a gradient mask.
///
/// Each coordinate's input is `(g_i, g^a_i, g^b_i)` scaled by the RMS of the
/// full gradient, where `a, b` are the two groups whose gradients differ most.
#[derive(Debug, Clone, PartialEq)]
pub struct Adversary<S> {
    params: ParamSet<S>,
}

impl<S: Real> Adversary<S> {
    pub fn new(hidden: usize, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config(
                "adversary needs at least one hidden unit".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, bound: f64| -> Vec<S> {
            (0..n)
                .map(|_| S::lit(rng.random_range(-bound..bound)))
                .collect()
        };
        let w1 = uniform(3 * hidden, 1.0 / 3f64.sqrt());
        let w2 = uniform(hidden, 1.0 / (hidden as f64).sqrt());
        Self::from_params(
            ParamSet::new()
                .with(NAMES[0], Tensor::matrix(3, hidden, w1)?)?
                .with(NAMES[1], Tensor::zeros(&[hidden]))?
                .with(NAMES[2], Tensor::matrix(hidden, 1, w2)?)?
                .with(NAMES[3], Tensor::vector(vec![S::lit(OUTPUT_BIAS)]))?,
        )
    }

    pub fn from_params(params: ParamSet<S>) -> Result<Self> {
        let names: Vec<&str> = params.names().collect();
        if names != NAMES {
            return Err(Error::shape("adversary", format!("parameters {names:?}")));
        }
        let w1 = params.tensor(0).shape();
        let h = if w1.len() == 2 && w1[0] == 3 {
            w1[1]
        } else {
            0
        };
        let ok = h > 0
            && params.tensor(1).shape() == [h]
            && params.tensor(2).shape() == [h, 1]
            && params.tensor(3).shape() == [1];
        if !ok {
            let shapes: Vec<&[usize]> = params.iter().map(|(_, t)| t.shape()).collect();
            return Err(Error::shape("adversary", format!("shapes {shapes:?}")));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn hidden(&self) -> usize {
        self.params.tensor(1).len()
    }

    fn bound() -> S {
        S::one() - S::lit(4.0) * S::epsilon()
    }

    /// `n×3` mask inputs for a bundle.
    pub fn features(bundle: &GradientBundle<S>) -> Result<Tensor<S>> {
        bundle.check()?;
        let n = bundle.len();
        let (a, b) = most_disparate(&bundle.g_group);
        let zeros = vec![S::zero(); n];
        let ga = a.map_or(&zeros, |i| &bundle.g_group[i]);
        let gb = b.map_or(&zeros, |i| &bundle.g_group[i]);
        let rms = if n == 0 {
            S::zero()
        } else {
            (vector::norm_sq(&bundle.g_full) / S::lit(n as f64)).sqrt()
        };
        let inv = if rms > S::zero() {
            S::one() / rms
        } else {
            S::one()
        };
        let mut data = Vec::with_capacity(3 * n);
        for i in 0..n {
            data.extend([bundle.g_full[i] * inv, ga[i] * inv, gb[i] * inv]);
        }
        Tensor::matrix(n, 3, data)
    }

    fn mask_on_tape(tape: &mut Tape<S>, vars: &[Var], x: Var) -> Result<Var> {
        let h = tape.matmul(x, vars[0])?;
        let h = tape.add_row(h, vars[1])?;
        let h = tape.tanh(h)?;
        let o = tape.matmul(h, vars[2])?;
        let o = tape.add_row(o, vars[3])?;
        let o = tape.tanh(o)?;
        let bound = Self::bound();
        tape.clamp(o, -bound, bound)
    }

    /// Mask coordinates, each strictly inside `(-1, 1)`.
    pub fn mask(&self, bundle: &GradientBundle<S>) -> Result<Vec<S>> {
        if bundle.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| tape.constant(t.clone()))
            .collect();
        let x = tape.constant(Self::features(bundle)?);
        let m = Self::mask_on_tape(&mut tape, &vars, x)?;
        Ok(tape.value(m).data().to_vec())
    }

    /// `m ⊙ g_full` and the mask statistics.
    pub fn apply(&self, bundle: &GradientBundle<S>) -> Result<(Vec<S>, MaskStats)> {
        let mask = self.mask(bundle)?;
        let g_adv = mask
            .iter()
            .zip(&bundle.g_full)
            .map(|(&m, &g)| m * g)
            .collect();
        Ok((g_adv, MaskStats::of(&mask)))
    }

    /// Adversary objective on a frozen bundle:
    /// `⟨g_adv, d⟩² / (‖d‖²‖g‖² + ε) + λ_keep (1 - ‖g_adv‖² / (‖g‖² + ε))²`.
    ///
    /// `g` and `d` are rescaled to unit RMS first; the objective is invariant
    /// to that apart from `ε`.
    pub fn loss_and_gradient(
        &self,
        bundle: &GradientBundle<S>,
        lambda_keep: f64,
        epsilon: f64,
    ) -> Result<(S, Vec<S>)> {
        let n = bundle.len();
        if n == 0 {
            return Err(Error::EmptyBatch("adversary bundle"));
        }
        let unit = |v: &[S]| -> Vec<S> {
            let rms = (vector::norm_sq(v) / S::lit(n as f64)).sqrt();
            if rms > S::zero() {
                vector::scale(v, S::one() / rms)
            } else {
                v.to_vec()
            }
        };
        let g = unit(&bundle.g_full);
        let d = unit(&bundle.d);
        let (g_sq, d_sq) = (vector::norm_sq(&g).as_f64(), vector::norm_sq(&d).as_f64());

        let mut tape = Tape::new();
        let vars = self.params.to_tape(&mut tape);
        let x = tape.constant(Self::features(bundle)?);
        let m = Self::mask_on_tape(&mut tape, &vars, x)?;
        let gv = tape.constant(Tensor::matrix(n, 1, g)?);
        let dv = tape.constant(Tensor::matrix(n, 1, d)?);
        let g_adv = tape.mul(m, gv)?;

        let along = tape.dot(g_adv, dv)?;
        let along_sq = tape.mul(along, along)?;
        let ortho = tape.mul_scalar(along_sq, S::lit(1.0 / (d_sq * g_sq + epsilon)))?;
        let kept = tape.dot(g_adv, g_adv)?;
        let ratio = tape.mul_scalar(kept, S::lit(1.0 / (g_sq + epsilon)))?;
        let shortfall = tape.one_minus(ratio)?;
        let shortfall_sq = tape.mul(shortfall, shortfall)?;
        let keep = tape.mul_scalar(shortfall_sq, S::lit(lambda_keep))?;
        let total = tape.add(ortho, keep)?;

        let value = tape.value(total).item();
        let mut grads = tape.backward(total)?;
        Ok((value, self.params.flat_gradient(&mut grads, &vars)))
    }

    /// One SGD step on the adversary objective. Returns the pre-step loss.
    pub fn update(
        &mut self,
        bundle: &GradientBundle<S>,
        lambda_keep: f64,
        rate: f64,
        epsilon: f64,
    ) -> Result<S> {
        let (loss, grad) = self.loss_and_gradient(bundle, lambda_keep, epsilon)?;
        self.params = self.params.descend(&grad, S::lit(rate))?;
        Ok(loss)
    }
}

/// The pair of groups whose gradient difference has the largest norm; ties go
/// to the lexicographically first pair. `None` fills in for missing groups.
fn most_disparate<S: Real>(groups: &[Vec<S>]) -> (Option<usize>, Option<usize>) {
    match groups.len() {
        0 => (None, None),
        1 => (Some(0), None),
        _ => {
            let mut best = (0, 1);
            let mut best_norm = S::neg_infinity();
            for a in 0..groups.len() {
                for b in a + 1..groups.len() {
                    let n = vector::norm_sq(&vector::sub(&groups[a], &groups[b]));
                    if n > best_norm {
                        best_norm = n;
                        best = (a, b);
                    }
                }
            }
            (Some(best.0), Some(best.1))
        }
    }
}
