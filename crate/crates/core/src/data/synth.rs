use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{DatasetHeader, ParticipantRecord};
use crate::error::{Error, Result};

const LATENT: usize = 4;

/// Controls the synthetic population.
///
/// Groups other than 0 have their class-discriminative signal scaled by
/// `1 - delta`, so a classifier fitted mostly on group 0 misses more of their
/// positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub delta: f64,
    /// Fraction of participants in group 0.
    pub group_ratio: f64,
    /// Positive rate per group.
    pub label_skew: Vec<f64>,
    pub noise_sigma: f64,
    /// Amplitude of the class-discriminative component before attenuation.
    pub signal: f64,
    pub seed: u64,
}

impl Default for BiasSpec {
    fn default() -> Self {
        Self {
            delta: 0.8,
            group_ratio: 0.7,
            label_skew: vec![0.5, 0.5],
            noise_sigma: 1.0,
            signal: 1.0,
            seed: 0,
        }
    }
}

impl BiasSpec {
    pub fn validate(&self, n_groups: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        if !(self.group_ratio > 0.0 && self.group_ratio < 1.0) {
            return Err(Error::Config(format!(
                "group_ratio must lie in (0, 1), got {}",
                self.group_ratio
            )));
        }
        if self.label_skew.len() != n_groups {
            return Err(Error::Config(format!(
                "label_skew needs {n_groups} entries, got {}",
                self.label_skew.len()
            )));
        }
        if let Some(p) = self.label_skew.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Config(format!(
                "label_skew entries must lie in (0, 1), got {p}"
            )));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        if !(self.signal >= 0.0 && self.signal.is_finite()) {
            return Err(Error::Config(format!(
                "signal must be nonnegative, got {}",
                self.signal
            )));
        }
        Ok(())
    }
}

/// Smooth latent trajectories shared by the whole population.
struct Prototypes {
    /// `LATENT × d` projection into feature space.
    projection: Vec<f64>,
    /// `T × LATENT` class-independent background.
    common: Vec<f64>,
    /// `T × LATENT` difference between the positive and negative prototypes.
    contrast: Vec<f64>,
}

impl Prototypes {
    fn new(rng: &mut ChaCha8Rng, steps: usize, dim: usize) -> Self {
        let projection = (0..LATENT * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z / (LATENT as f64).sqrt()
            })
            .collect();
        let mut wave = |amp: f64, with_drift: bool| -> Vec<f64> {
            let params: Vec<(f64, f64, f64, f64)> = (0..LATENT)
                .map(|_| {
                    let freq = rng.random_range(0.5..2.5);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    let drift = if with_drift {
                        rng.random_range(-1.0..1.0)
                    } else {
                        0.0
                    };
                    let offset = if with_drift {
                        let s: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        s * rng.random_range(0.5..1.0)
                    } else {
                        0.0
                    };
                    (freq, phase, drift, offset)
                })
                .collect();
            let mut out = Vec::with_capacity(steps * LATENT);
            for t in 0..steps {
                let u = t as f64 / steps as f64;
                for &(freq, phase, drift, offset) in &params {
                    out.push(
                        amp * (std::f64::consts::TAU * freq * u + phase).sin() + drift * u + offset,
                    );
                }
            }
            out
        };
        let common = wave(1.0, false);
        let contrast = wave(0.5, true);
        Self {
            projection,
            common,
            contrast,
        }
    }

    fn latent_to_features(&self, latent: &[f64], dim: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate().take(dim) {
            *o = (0..LATENT)
                .map(|k| latent[k] * self.projection[k * dim + j])
                .sum();
        }
    }
}

/// Draws `n` participants. Pure function of `(n, header, bias)`.
pub fn generate_synthetic(
    n: usize,
    header: &DatasetHeader,
    bias: &BiasSpec,
) -> Result<Vec<ParticipantRecord>> {
    if n < 4 {
        return Err(Error::Config(format!(
            "need at least 4 participants, got {n}"
        )));
    }
    if header.seq_len == 0 || header.input_dim == 0 || header.n_groups < 2 {
        return Err(Error::Config(
            "header needs T, d >= 1 and at least 2 groups".into(),
        ));
    }
    bias.validate(header.n_groups)?;
    let (steps, dim) = (header.seq_len, header.input_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(bias.seed);
    let protos = Prototypes::new(&mut rng, steps, dim);

    let mut records = Vec::with_capacity(n);
    let mut latent = [0f64; LATENT];
    let mut feat = vec![0f64; dim];
    for i in 0..n {
        let u_group: f64 = rng.random();
        let u_label: f64 = rng.random();
        let group = if u_group < bias.group_ratio {
            0
        } else {
            let rest = (u_group - bias.group_ratio) / (1.0 - bias.group_ratio);
            1 + ((rest * (header.n_groups - 1) as f64) as usize).min(header.n_groups - 2)
        };
        let label = u8::from(u_label < bias.label_skew[group]);
        let strength = if group == 0 { 1.0 } else { 1.0 - bias.delta };
        let sign = if label == 1 { 0.5 } else { -0.5 };
        let scale = bias.signal * strength * sign;

        let intercept: Vec<f64> = (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.5 * bias.noise_sigma * z
            })
            .collect();
        let mut values = Vec::with_capacity(steps * dim);
        for t in 0..steps {
            for k in 0..LATENT {
                latent[k] = protos.common[t * LATENT + k] + scale * protos.contrast[t * LATENT + k];
            }
            protos.latent_to_features(&latent, dim, &mut feat);
            for j in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut rng);
                values.push((feat[j] + intercept[j] + bias.noise_sigma * noise) as f32);
            }
        }
        records.push(ParticipantRecord {
            id: format!("p{i:04}"),
            group,
            label,
            features: Tensor::matrix(steps, dim, values)?,
        });
    }
    Ok(records)
}
