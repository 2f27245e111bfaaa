use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adapt::inner_adapt;
use super::task::{sample_task_with_retries, EpisodeTask};
use super::MetaLearner;
use crate::autodiff::ParamSet;
use crate::backbone::Mode;
use crate::data::ParticipantRecord;
use crate::error::Result;
use crate::metrics::{AggregateReport, FairnessReport};
use crate::parallel::Executor;
use crate::real::Real;

/// Anything that can turn an episode into query-set probabilities.
pub trait EpisodeModel<S>: Sync {
    fn predict(&self, task: &EpisodeTask<'_, S>) -> Result<Vec<f64>>;
}

/// Adapts `theta` on the support set with the training inner loss, then
/// predicts the query set without dropout.
#[derive(Debug, Clone, Copy)]
pub struct AdaptingModel<'a, S> {
    pub learner: &'a MetaLearner,
    pub theta: &'a ParamSet<S>,
}

impl<S: Real> EpisodeModel<S> for AdaptingModel<'_, S> {
    fn predict(&self, task: &EpisodeTask<'_, S>) -> Result<Vec<f64>> {
        let cfg = self.learner.config();
        let backbone = self.learner.backbone();
        let adapted = inner_adapt(
            backbone,
            self.theta,
            &task.support,
            &cfg.effective_weights(),
            cfg.eta_inner,
            cfg.inner_steps,
            task.seed,
        )?;
        let xs: Vec<_> = task.query.iter().map(|r| &r.features).collect();
        let probs = backbone.forward_batch(&adapted.params, &xs, Mode::Eval, 0)?;
        Ok(probs.into_iter().map(Real::as_f64).collect())
    }
}

/// Per-task reports and their aggregate.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub per_task: Vec<FairnessReport>,
    pub aggregate: AggregateReport,
}

/// Samples `n_tasks` episodes from `pool` (deterministic in `seed`) and
/// scores the model's hard predictions on each query set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<S: Real, M: EpisodeModel<S>>(
    model: &M,
    pool: &[ParticipantRecord<S>],
    n_groups: usize,
    shots: usize,
    query_size: usize,
    n_tasks: usize,
    seed: u64,
    exec: &Executor,
) -> Result<Evaluation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = (0..n_tasks)
        .map(|_| sample_task_with_retries(pool, shots, query_size, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let per_task = exec
        .map(&tasks, |_, task| -> Result<FairnessReport> {
            let probs = model.predict(task)?;
            let labels: Vec<u8> = task.query.iter().map(|r| r.label).collect();
            let groups: Vec<usize> = task.query.iter().map(|r| r.group).collect();
            FairnessReport::from_probs(&probs, &labels, &groups, n_groups)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let aggregate = AggregateReport::of(&per_task);
    Ok(Evaluation {
        per_task,
        aggregate,
    })
}
