use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::real::Real;
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OuterOptimizer {
    /// Adam with `(0.9, 0.999, 1e-8)`.
    Adam,
    Sgd,
}

impl OuterOptimizer {
    pub fn name(self) -> &'static str {
        match self {
            OuterOptimizer::Adam => "adam",
            OuterOptimizer::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Some(Self::Adam),
            "sgd" => Some(Self::Sgd),
            _ => None,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Outer-loop optimizer with its moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub kind: OuterOptimizer,
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

impl<S: Real> OptimizerState<S> {
    pub fn new(kind: OuterOptimizer, len: usize) -> Self {
        let moments = if kind == OuterOptimizer::Adam { len } else { 0 };
        Self {
            kind,
            m: vec![S::zero(); moments],
            v: vec![S::zero(); moments],
            t: 0,
        }
    }

    /// Returns the updated parameter vector.
    pub fn step(&mut self, params: &[S], grad: &[S], rate: f64) -> Result<Vec<S>> {
        vector::check_len(params, grad)?;
        let lr = S::lit(rate);
        self.t += 1;
        match self.kind {
            OuterOptimizer::Sgd => Ok(params.iter().zip(grad).map(|(&p, &g)| p - lr * g).collect()),
            OuterOptimizer::Adam => {
                vector::check_len(params, &self.m)?;
                let (b1, b2) = (S::lit(BETA1), S::lit(BETA2));
                let c1 = S::one() - S::lit(BETA1.powi(self.t as i32));
                let c2 = S::one() - S::lit(BETA2.powi(self.t as i32));
                let eps = S::lit(EPS);
                let mut out = Vec::with_capacity(params.len());
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = b1 * self.m[i] + (S::one() - b1) * g;
                    self.v[i] = b2 * self.v[i] + (S::one() - b2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    out.push(params[i] - lr * m_hat / (v_hat.sqrt() + eps));
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut opt = OptimizerState::<f64>::new(OuterOptimizer::Sgd, 2);
        assert_eq!(
            opt.step(&[1.0, 2.0], &[0.5, -1.0], 0.1).unwrap(),
            vec![0.95, 2.1]
        );
    }

    #[test]
    fn adam_first_step_is_sign_times_rate() {
        let mut opt = OptimizerState::<f64>::new(OuterOptimizer::Adam, 3);
        let out = opt.step(&[0.0; 3], &[2.0, -0.001, 0.0], 0.01).unwrap();
        assert!((out[0] + 0.01).abs() < 1e-9);
        assert!((out[1] - 0.01).abs() < 1e-7);
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn adam_matches_reference_trajectory() {
        let grads = [[0.3, -0.2], [0.1, 0.4], [-0.5, 0.05]];
        let mut opt = OptimizerState::<f64>::new(OuterOptimizer::Adam, 2);
        let mut p = vec![1.0, -1.0];
        let (mut m, mut v, mut q) = ([0.0; 2], [0.0; 2], [1.0, -1.0]);
        for (t, g) in grads.iter().enumerate() {
            p = opt.step(&p, g, 1e-2).unwrap();
            let t = (t + 1) as i32;
            for i in 0..2 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                q[i] -= 1e-2 * mh / (vh.sqrt() + 1e-8);
            }
        }
        for i in 0..2 {
            assert!((p[i] - q[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rate_keeps_params() {
        let mut opt = OptimizerState::<f32>::new(OuterOptimizer::Adam, 2);
        assert_eq!(
            opt.step(&[1.5, -2.0], &[3.0, 1.0], 0.0).unwrap(),
            vec![1.5, -2.0]
        );
    }
}
