//! Episodic meta-training with a fairness-regularized inner loop and an
//! adversarially masked, disparity-projected outer update.
//!
//! Per task: adapt a copy of the shared initialization on the support set,
//! take query-set gradients overall and per group at the adapted point
//! (first-order), mask the overall gradient with the adversary, remove its
//! component along the group-disparity direction, and average the result
//! over the task batch to drive the outer optimizer.

mod adapt;
mod adversary;
mod evaluate;
mod optimizer;
mod projection;
mod step;
mod task;
mod train;

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::objectives::LossWeights;

pub use adapt::{Adaptation, GradientBundle};
pub use adversary::{Adversary, MaskStats};
pub use evaluate::{evaluate, AdaptingModel, EpisodeModel, Evaluation};
pub use optimizer::{OptimizerState, OuterOptimizer};
pub use projection::project_gradient;
pub use step::{MetaState, StepDiagnostics, TaskOutcome};
pub use task::{sample_task, sample_task_with_retries, EpisodeTask, TASK_RETRIES};
pub use train::{iterations_per_epoch, train, EpochLog, TrainOutcome};

/// Switches for each fairness component; all on is the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_agm: bool,
    pub use_fcgp: bool,
    pub use_eodd: bool,
    pub use_margin: bool,
    pub use_smooth: bool,
}

impl AblationFlags {
    pub const ALL: Self = Self {
        use_agm: true,
        use_fcgp: true,
        use_eodd: true,
        use_margin: true,
        use_smooth: true,
    };

    pub const NONE: Self = Self {
        use_agm: false,
        use_fcgp: false,
        use_eodd: false,
        use_margin: false,
        use_smooth: false,
    };
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub eta_inner: f64,
    pub beta_meta: f64,
    pub inner_steps: usize,
    pub tasks_per_batch: usize,
    pub epochs: usize,
    pub shots: usize,
    pub query_size: usize,
    pub weights: LossWeights,
    pub epsilon_proj: f64,
    pub flags: AblationFlags,
    pub seed: u64,
    /// Only first-order meta-gradients are implemented.
    pub first_order: bool,
    pub optimizer: OuterOptimizer,
    pub adv_hidden: usize,
    pub adv_rate: f64,
    pub lambda_keep: f64,
    /// Evaluation snapshot period in epochs for the training log; 0 disables.
    pub eval_every: usize,
    pub eval_tasks: usize,
    pub threads: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            eta_inner: 1e-3,
            beta_meta: 1e-3,
            inner_steps: 3,
            tasks_per_batch: 32,
            epochs: 50,
            shots: 5,
            query_size: 15,
            weights: LossWeights::default(),
            epsilon_proj: 1e-8,
            flags: AblationFlags::ALL,
            seed: 0,
            first_order: true,
            optimizer: OuterOptimizer::Adam,
            adv_hidden: 8,
            adv_rate: 1e-3,
            lambda_keep: 1.0,
            eval_every: 0,
            eval_tasks: 50,
            threads: 1,
        }
    }
}

impl MetaConfig {
    /// Plain first-order MAML: every fairness component off.
    pub fn maml(&self) -> Self {
        Self {
            flags: AblationFlags::NONE,
            weights: LossWeights {
                gamma: 0.0,
                alpha: 0.0,
                lambda_smooth: 0.0,
                ..self.weights
            },
            ..self.clone()
        }
    }

    /// Loss weights after ablation flags are applied.
    pub fn effective_weights(&self) -> LossWeights {
        let w = self.weights;
        LossWeights {
            gamma: if self.flags.use_eodd { w.gamma } else { 0.0 },
            alpha: if self.flags.use_margin { w.alpha } else { 0.0 },
            lambda_smooth: if self.flags.use_smooth {
                w.lambda_smooth
            } else {
                0.0
            },
            ..w
        }
    }

    /// Collects every problem rather than stopping at the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("eta_inner", self.eta_inner),
            ("beta_meta", self.beta_meta),
            ("epsilon_proj", self.epsilon_proj),
            ("adv_rate", self.adv_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.lambda_keep >= 0.0 && self.lambda_keep.is_finite()) {
            out.push(format!(
                "lambda_keep must be nonnegative, got {}",
                self.lambda_keep
            ));
        }
        if !matches!(self.shots, 1 | 3 | 5) {
            out.push(format!("shots must be 1, 3 or 5, got {}", self.shots));
        }
        for (name, v) in [
            ("query_size", self.query_size),
            ("tasks_per_batch", self.tasks_per_batch),
            ("adv_hidden", self.adv_hidden),
        ] {
            if v == 0 {
                out.push(format!("{name} must be at least 1"));
            }
        }
        if !self.first_order {
            out.push(
                "second-order meta-gradients are not supported; set first_order = true".into(),
            );
        }
        if let Err(e) = self.weights.validate() {
            out.push(e.to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Backbone plus meta-learning hyperparameters for a dataset with `n_groups`
/// sensitive groups.
#[derive(Debug, Clone)]
pub struct MetaLearner {
    backbone: Backbone,
    config: MetaConfig,
    n_groups: usize,
}

impl MetaLearner {
    pub fn new(backbone: BackboneConfig, config: MetaConfig, n_groups: usize) -> Result<Self> {
        if n_groups < 1 {
            return Err(Error::Config("n_groups must be at least 1".into()));
        }
        Ok(Self {
            backbone: Backbone::new(backbone)?,
            config,
            n_groups,
        })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn config(&self) -> &MetaConfig {
        &self.config
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_weights_follow_flags() {
        let cfg = MetaConfig {
            flags: AblationFlags {
                use_eodd: false,
                ..AblationFlags::ALL
            },
            ..Default::default()
        };
        let w = cfg.effective_weights();
        assert_eq!(w.gamma, 0.0);
        assert_eq!(w.alpha, cfg.weights.alpha);
        let maml = cfg.maml().effective_weights();
        assert_eq!(
            (maml.gamma, maml.alpha, maml.lambda_smooth),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn validation_reports_everything() {
        let cfg = MetaConfig {
            eta_inner: 0.0,
            shots: 2,
            query_size: 0,
            first_order: false,
            ..Default::default()
        };
        assert_eq!(cfg.problems().len(), 4);
        assert!(MetaConfig::default().validate().is_ok());
    }
}
