//! Sequence classifier: bidirectional LSTM, GRU, temporal mean pooling,
//! dropout and a sigmoid head.
//!
//! Cell equations (row-vector convention, `[a, b]` is column concatenation):
//!
//! ```text
//! LSTM  [i f g o] = [x, h] W + b
//!       c' = σ(f) c + σ(i) tanh(g)        h' = σ(o) tanh(c')
//! GRU   [z r]     = σ([x, h] Wg + bg)
//!       n  = tanh([x, r h] Wc + bc)       h' = (1 - z) n + z h
//! ```
//!
//! All matrices multiply a whole batch at once; each output row is
//! accumulated independently, so a batch gives the same bits as running its
//! items one at a time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub seq_len: usize,
    pub lstm_hidden: usize,
    pub gru_hidden: usize,
    pub dropout_rate: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            seq_len: 20,
            lstm_hidden: 32,
            gru_hidden: 32,
            dropout_rate: 0.3,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("seq_len", self.seq_len),
            ("lstm_hidden", self.lstm_hidden),
            ("gru_hidden", self.gru_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Parameter names and shapes, in flatten order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (d, h, g) = (self.input_dim, self.lstm_hidden, self.gru_hidden);
        vec![
            ("lstm_fwd.w", vec![d + h, 4 * h]),
            ("lstm_fwd.b", vec![4 * h]),
            ("lstm_bwd.w", vec![d + h, 4 * h]),
            ("lstm_bwd.b", vec![4 * h]),
            ("gru.w_gates", vec![2 * h + g, 2 * g]),
            ("gru.b_gates", vec![2 * g]),
            ("gru.w_cand", vec![2 * h + g, g]),
            ("gru.b_cand", vec![g]),
            ("head.w", vec![g, 1]),
            ("head.b", vec![1]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Differentiable handles for one parameter set on a tape.
#[derive(Debug, Clone, Copy)]
struct Handles {
    lstm_fwd: (Var, Var),
    lstm_bwd: (Var, Var),
    gru_gates: (Var, Var),
    gru_cand: (Var, Var),
    head: (Var, Var),
}

impl Handles {
    fn from_slice(vars: &[Var]) -> Result<Self> {
        match *vars {
            [a, b, c, d, e, f, g, h, i, j] => Ok(Self {
                lstm_fwd: (a, b),
                lstm_bwd: (c, d),
                gru_gates: (e, f),
                gru_cand: (g, h),
                head: (i, j),
            }),
            _ => Err(Error::Length {
                expected: 10,
                got: vars.len(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
}

impl Backbone {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Weights uniform in `(-1/√fan_in, 1/√fan_in)` with fan-in the row count;
    /// biases zero.
    pub fn init_params<S: Real>(&self, seed: u64) -> ParamSet<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape) in self.config.layout() {
            let numel = shape.iter().product();
            let data = if shape.len() == 1 {
                vec![S::zero(); numel]
            } else {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                (0..numel)
                    .map(|_| S::lit(rng.random_range(-bound..bound)))
                    .collect()
            };
            params
                .push(name, Tensor::from_parts(shape, data))
                .expect("layout names are unique");
        }
        params
    }

    pub fn check_params<S: Real>(&self, params: &ParamSet<S>) -> Result<()> {
        let layout = self.config.layout();
        if params.len() != layout.len() {
            return Err(Error::Length {
                expected: layout.len(),
                got: params.len(),
            });
        }
        for ((name, shape), (pname, t)) in layout.iter().zip(params.iter()) {
            if *name != pname || t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "backbone params",
                    format!("expected {name} {shape:?}, found {pname} {:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Stacks `T×d` sequences into a `B×T×d` batch tensor.
    pub fn stack<S: Real>(&self, batch: &[&Tensor<S>]) -> Result<Tensor<S>> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("backbone"));
        }
        let want = [self.config.seq_len, self.config.input_dim];
        let mut data = Vec::with_capacity(batch.len() * want[0] * want[1]);
        for (i, x) in batch.iter().enumerate() {
            if x.shape() != want {
                return Err(Error::shape(
                    "backbone input",
                    format!("item {i} has shape {:?}, expected {want:?}", x.shape()),
                ));
            }
            data.extend_from_slice(x.data());
        }
        Ok(Tensor::from_parts(
            vec![batch.len(), want[0], want[1]],
            data,
        ))
    }

    /// Inverted-dropout mask for `batch` items; item `i` draws from `seed + i`.
    pub fn dropout_mask<S: Real>(&self, batch: usize, seed: u64) -> Option<Tensor<S>> {
        let rate = self.config.dropout_rate;
        if rate <= 0.0 {
            return None;
        }
        let g = self.config.gru_hidden;
        let keep = S::lit(1.0 / (1.0 - rate));
        let mut data = Vec::with_capacity(batch * g);
        for i in 0..batch {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            for _ in 0..g {
                data.push(if rng.random::<f64>() < rate {
                    S::zero()
                } else {
                    keep
                });
            }
        }
        Some(Tensor::from_parts(vec![batch, g], data))
    }

    fn lstm_pass<S: Real>(
        &self,
        tape: &mut Tape<S>,
        (w, b): (Var, Var),
        input: Var,
        batch: usize,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let (steps, hdim) = (self.config.seq_len, self.config.lstm_hidden);
        let mut h = tape.constant(Tensor::zeros(&[batch, hdim]));
        let mut c = tape.constant(Tensor::zeros(&[batch, hdim]));
        let mut out = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let x = tape.time_slice(input, t)?;
            let xh = tape.concat_cols(x, h)?;
            let pre = tape.matmul(xh, w)?;
            let pre = tape.add_row(pre, b)?;
            let i = tape.slice_cols(pre, 0, hdim)?;
            let f = tape.slice_cols(pre, hdim, 2 * hdim)?;
            let g = tape.slice_cols(pre, 2 * hdim, 3 * hdim)?;
            let o = tape.slice_cols(pre, 3 * hdim, 4 * hdim)?;
            let i = tape.sigmoid(i)?;
            let f = tape.sigmoid(f)?;
            let g = tape.tanh(g)?;
            let o = tape.sigmoid(o)?;
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, g)?;
            c = tape.add(keep, write)?;
            let squashed = tape.tanh(c)?;
            h = tape.mul(o, squashed)?;
            out[t] = h;
        }
        Ok(out)
    }

    /// Per-step `[forward, backward]` LSTM states, each `B×2H`.
    pub fn bilstm<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        input: Var,
    ) -> Result<Vec<Var>> {
        let hv = Handles::from_slice(params)?;
        let batch = tape.value(input).shape()[0];
        let fwd = self.lstm_pass(tape, hv.lstm_fwd, input, batch, false)?;
        let bwd = self.lstm_pass(tape, hv.lstm_bwd, input, batch, true)?;
        fwd.into_iter()
            .zip(bwd)
            .map(|(a, b)| tape.concat_cols(a, b))
            .collect()
    }

    /// Probabilities (`B×1`) for a stacked batch. `params` are the handles
    /// returned by [`ParamSet::to_tape`].
    pub fn forward_on_tape<S: Real>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        input: Var,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Var> {
        let hv = Handles::from_slice(params)?;
        let batch = tape.value(input).shape()[0];
        let g = self.config.gru_hidden;
        let seq = self.bilstm(tape, params, input)?;

        let (wg, bg) = hv.gru_gates;
        let (wc, bc) = hv.gru_cand;
        let mut h = tape.constant(Tensor::zeros(&[batch, g]));
        let mut pooled: Option<Var> = None;
        for x in seq {
            let xh = tape.concat_cols(x, h)?;
            let gates = tape.matmul(xh, wg)?;
            let gates = tape.add_row(gates, bg)?;
            let gates = tape.sigmoid(gates)?;
            let z = tape.slice_cols(gates, 0, g)?;
            let r = tape.slice_cols(gates, g, 2 * g)?;
            let rh = tape.mul(r, h)?;
            let xrh = tape.concat_cols(x, rh)?;
            let cand = tape.matmul(xrh, wc)?;
            let cand = tape.add_row(cand, bc)?;
            let n = tape.tanh(cand)?;
            let gap = tape.sub(h, n)?;
            let carried = tape.mul(z, gap)?;
            h = tape.add(n, carried)?;
            pooled = Some(match pooled {
                Some(acc) => tape.add(acc, h)?,
                None => h,
            });
        }
        let pooled = pooled.expect("seq_len >= 1");
        let mut pooled = tape.mul_scalar(pooled, S::one() / S::lit(self.config.seq_len as f64))?;

        if mode == Mode::Train {
            if let Some(mask) = self.dropout_mask(batch, dropout_seed) {
                let mask = tape.constant(mask);
                pooled = tape.mul(pooled, mask)?;
            }
        }

        let (hw, hb) = hv.head;
        let logit = tape.matmul(pooled, hw)?;
        let logit = tape.add_row(logit, hb)?;
        let prob = tape.sigmoid(logit)?;
        // keep strictly inside (0, 1) after rounding
        tape.clamp(prob, S::epsilon(), S::one() - S::epsilon())
    }

    pub fn forward<S: Real>(
        &self,
        params: &ParamSet<S>,
        x: &Tensor<S>,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<S> {
        Ok(self.forward_batch(params, &[x], mode, dropout_seed)?[0])
    }

    /// Probabilities for each sequence; item `i` uses dropout seed `seed + i`.
    pub fn forward_batch<S: Real>(
        &self,
        params: &ParamSet<S>,
        batch: &[&Tensor<S>],
        mode: Mode,
        seed: u64,
    ) -> Result<Vec<S>> {
        self.check_params(params)?;
        let input = self.stack(batch)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .map(|(_, t)| tape.constant(t.clone()))
            .collect();
        let x = tape.constant(input);
        let probs = self.forward_on_tape(&mut tape, &vars, x, mode, seed)?;
        Ok(tape.value(probs).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Backbone {
        Backbone::new(BackboneConfig {
            input_dim: 3,
            seq_len: 4,
            lstm_hidden: 2,
            gru_hidden: 2,
            dropout_rate: 0.3,
        })
        .unwrap()
    }

    fn seq(seed: u64, cfg: &BackboneConfig) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..cfg.seq_len * cfg.input_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor::matrix(cfg.seq_len, cfg.input_dim, data).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let b = Backbone::new(BackboneConfig {
            input_dim: 8,
            lstm_hidden: 8,
            ..Default::default()
        })
        .unwrap();
        let p: ParamSet<f32> = b.init_params(7);
        assert_eq!(p, b.init_params(7));
        assert_ne!(p, b.init_params(8));
        for (name, t) in p.iter() {
            if name.ends_with(".b") || name.starts_with("gru.b") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        // lstm_fwd.w has fan-in d + h = 16
        assert!(p
            .get("lstm_fwd.w")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() < 0.25));
    }

    #[test]
    fn zero_params_give_half() {
        let b = tiny();
        let zero = ParamSet::unflatten(
            &vec![0.0; b.config().param_count()],
            &b.init_params::<f64>(0),
        )
        .unwrap();
        let x = seq(1, b.config());
        assert_eq!(b.forward(&zero, &x, Mode::Eval, 0).unwrap(), 0.5);
        assert_eq!(b.forward(&zero, &x, Mode::Train, 3).unwrap(), 0.5);
    }

    #[test]
    fn eval_is_pure() {
        let b = tiny();
        let p = b.init_params::<f64>(3);
        let x = seq(2, b.config());
        let a = b.forward(&p, &x, Mode::Eval, 1).unwrap();
        let c = b.forward(&p, &x, Mode::Eval, 99).unwrap();
        assert_eq!(a.to_bits(), c.to_bits());
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let b = tiny();
        let p = b.init_params::<f64>(3);
        let x = Tensor::<f64>::zeros(&[5, 3]);
        assert!(matches!(
            b.forward(&p, &x, Mode::Eval, 0),
            Err(Error::Shape { .. })
        ));
        let y = seq(1, b.config());
        assert!(b.forward_batch(&p, &[&y, &x], Mode::Eval, 0).is_err());
    }

    #[test]
    fn batch_matches_singletons_with_offset_seeds() {
        let b = tiny();
        let p = b.init_params::<f64>(5);
        let xs: Vec<_> = (0..5).map(|s| seq(10 + s, b.config())).collect();
        let refs: Vec<_> = xs.iter().collect();
        for mode in [Mode::Eval, Mode::Train] {
            let batch = b.forward_batch(&p, &refs, mode, 40).unwrap();
            for (i, x) in xs.iter().enumerate() {
                let single = b.forward(&p, x, mode, 40 + i as u64).unwrap();
                assert_eq!(batch[i].to_bits(), single.to_bits());
            }
        }
    }

    #[test]
    fn eval_batch_permutation_equivariant() {
        let b = tiny();
        let p = b.init_params::<f64>(5);
        let xs: Vec<_> = (0..4).map(|s| seq(20 + s, b.config())).collect();
        let fwd: Vec<_> = xs.iter().collect();
        let rev: Vec<_> = xs.iter().rev().collect();
        let a = b.forward_batch(&p, &fwd, Mode::Eval, 0).unwrap();
        let mut c = b.forward_batch(&p, &rev, Mode::Eval, 0).unwrap();
        c.reverse();
        assert_eq!(a, c);
    }
}
