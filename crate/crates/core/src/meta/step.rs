use serde::{Deserialize, Serialize};

use super::adapt::{group_gradients, inner_adapt, GradientBundle};
use super::adversary::{Adversary, MaskStats};
use super::optimizer::OptimizerState;
use super::projection::project_gradient;
use super::task::EpisodeTask;
use super::MetaLearner;
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::real::Real;
use crate::vector;

/// Everything one task contributes to a meta-step.
#[derive(Debug, Clone)]
pub struct TaskOutcome<S> {
    pub g_fair: Vec<S>,
    pub bundle: GradientBundle<S>,
    pub mask: Option<MaskStats>,
    /// `⟨g_fair, d⟩`
    pub fair_dot: f64,
    /// `cos(g_full, d)`
    pub full_cos_d: f64,
    pub inner_warnings: usize,
}

/// Batch-level diagnostics of one meta-step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub tasks_used: usize,
    pub tasks_failed: usize,
    pub mean_query_loss: f64,
    pub mean_abs_fair_dot: f64,
    pub mean_abs_cos_full_d: f64,
    pub mask_mean: Option<f64>,
    pub mask_std: Option<f64>,
    pub adversary_loss: Option<f64>,
    pub inner_warnings: usize,
}

/// Shared initialization, adversary and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaState<S> {
    pub theta: ParamSet<S>,
    pub adversary: Adversary<S>,
    pub optimizer: OptimizerState<S>,
    pub iteration: u64,
}

/// Small constant in the adversary objective's denominators.
const ADV_EPSILON: f64 = 1e-8;

impl<S: Real> MetaState<S> {
    /// Fresh state: backbone init from `seed`, adversary from a derived seed.
    pub fn init(learner: &MetaLearner) -> Result<Self> {
        let cfg = learner.config();
        let theta = learner.backbone().init_params(cfg.seed);
        let adversary = Adversary::new(cfg.adv_hidden, cfg.seed ^ 0xad5e_75a1)?;
        Ok(Self::from_parts(learner, theta, adversary))
    }

    pub fn from_parts(learner: &MetaLearner, theta: ParamSet<S>, adversary: Adversary<S>) -> Self {
        let optimizer = OptimizerState::new(learner.config().optimizer, theta.numel());
        Self {
            theta,
            adversary,
            optimizer,
            iteration: 0,
        }
    }

    /// Adapt, take query gradients, mask and project for one task.
    pub fn run_task(
        &self,
        learner: &MetaLearner,
        task: &EpisodeTask<'_, S>,
    ) -> Result<TaskOutcome<S>> {
        let cfg = learner.config();
        let adapted = inner_adapt(
            learner.backbone(),
            &self.theta,
            &task.support,
            &cfg.effective_weights(),
            cfg.eta_inner,
            cfg.inner_steps,
            task.seed,
        )?;
        let bundle = group_gradients(
            learner.backbone(),
            &adapted.params,
            &task.query,
            learner.n_groups(),
        )?;
        if !bundle.g_full.iter().chain(&bundle.d).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                op: "query gradient",
            });
        }
        let (g_adv, mask) = if cfg.flags.use_agm {
            let (g, stats) = self.adversary.apply(&bundle)?;
            (g, Some(stats))
        } else {
            (bundle.g_full.clone(), None)
        };
        let g_fair = if cfg.flags.use_fcgp {
            project_gradient(&g_adv, &bundle.d, cfg.epsilon_proj)?
        } else {
            g_adv
        };
        Ok(TaskOutcome {
            fair_dot: vector::dot(&g_fair, &bundle.d).as_f64(),
            full_cos_d: vector::cosine(&bundle.g_full, &bundle.d).as_f64(),
            g_fair,
            bundle,
            mask,
            inner_warnings: adapted.warnings.len(),
        })
    }

    /// One outer update from a batch of tasks. Failed tasks are logged and
    /// skipped; the step fails only if none survive.
    pub fn meta_step(
        &mut self,
        learner: &MetaLearner,
        tasks: &[EpisodeTask<'_, S>],
        exec: &Executor,
    ) -> Result<StepDiagnostics> {
        if tasks.is_empty() {
            return Err(Error::EmptyBatch("task batch"));
        }
        let cfg = learner.config();
        let state: &Self = self;
        let results = exec.map(tasks, |_, task| state.run_task(learner, task));

        let mut outcomes = Vec::with_capacity(results.len());
        let mut failed = 0;
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(o) => outcomes.push(o),
                Err(e) => {
                    log::warn!("iteration {}: skipping task {i}: {e}", self.iteration);
                    failed += 1;
                }
            }
        }
        if outcomes.is_empty() {
            return Err(Error::Task(format!(
                "all {} tasks in the batch failed",
                tasks.len()
            )));
        }

        let n = outcomes.len();
        let len = self.theta.numel();
        let scale = S::one() / S::lit(n as f64);
        let mut g_sum = vec![S::zero(); len];
        let mut avg = GradientBundle::zeros(len, learner.n_groups());
        for o in &outcomes {
            vector::axpy(&mut g_sum, S::one(), &o.g_fair);
            vector::axpy(&mut avg.g_full, scale, &o.bundle.g_full);
            vector::axpy(&mut avg.d, scale, &o.bundle.d);
            for g in 0..avg.g_group.len() {
                vector::axpy(&mut avg.g_group[g], scale, &o.bundle.g_group[g]);
                avg.present[g] |= o.bundle.present[g];
                avg.counts[g] += o.bundle.counts[g];
            }
            avg.query_loss = avg.query_loss + o.bundle.query_loss * scale;
        }
        let denom = S::lit(n as f64);
        let g_mean: Vec<S> = g_sum.iter().map(|&v| v / denom).collect();

        let flat = self.theta.flatten();
        let updated = self.optimizer.step(&flat, &g_mean, cfg.beta_meta)?;
        self.theta = ParamSet::unflatten(&updated, &self.theta)?;

        let adversary_loss = if cfg.flags.use_agm {
            let loss = self
                .adversary
                .update(&avg, cfg.lambda_keep, cfg.adv_rate, ADV_EPSILON)?;
            Some(loss.as_f64())
        } else {
            None
        };
        self.iteration += 1;

        let masks: Vec<MaskStats> = outcomes.iter().filter_map(|o| o.mask).collect();
        let mean_of = |f: &dyn Fn(&MaskStats) -> f64| -> Option<f64> {
            (!masks.is_empty()).then(|| masks.iter().map(f).sum::<f64>() / masks.len() as f64)
        };
        Ok(StepDiagnostics {
            tasks_used: n,
            tasks_failed: failed,
            mean_query_loss: outcomes
                .iter()
                .map(|o| o.bundle.query_loss.as_f64())
                .sum::<f64>()
                / n as f64,
            mean_abs_fair_dot: outcomes.iter().map(|o| o.fair_dot.abs()).sum::<f64>() / n as f64,
            mean_abs_cos_full_d: outcomes.iter().map(|o| o.full_cos_d.abs()).sum::<f64>()
                / n as f64,
            mask_mean: mean_of(&|m| m.mean),
            mask_std: mean_of(&|m| m.std),
            adversary_loss,
            inner_warnings: outcomes.iter().map(|o| o.inner_warnings).sum(),
        })
    }
}
