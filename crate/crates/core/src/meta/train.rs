use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, AdaptingModel};
use super::step::{MetaState, StepDiagnostics};
use super::task::sample_task_with_retries;
use super::{MetaConfig, MetaLearner};
use crate::data::ParticipantRecord;
use crate::error::{Error, Result};
use crate::metrics::AggregateReport;
use crate::parallel::Executor;
use crate::real::Real;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub iterations: usize,
    pub tasks_used: usize,
    pub tasks_failed: usize,
    pub tasks_unsampled: usize,
    pub mean_query_loss: f64,
    pub mean_abs_fair_dot: f64,
    pub mean_abs_cos_full_d: f64,
    pub mask_mean: Option<f64>,
    pub mask_std: Option<f64>,
    pub adversary_loss: Option<f64>,
    pub inner_warnings: usize,
    pub eval: Option<AggregateReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub state: MetaState<S>,
    pub log: Vec<EpochLog>,
}

/// Meta-iterations per epoch: the pool divided by the participants one task
/// batch consumes, at least one.
pub fn iterations_per_epoch(pool_size: usize, cfg: &MetaConfig) -> usize {
    let per_batch = cfg.tasks_per_batch * (2 * cfg.shots + cfg.query_size);
    (pool_size / per_batch.max(1)).max(1)
}

const TASK_STREAM: u64 = 0x7a5c_0001;
const EVAL_STREAM: u64 = 0xe7a1_0002;

/// Runs the full meta-training loop on `pool`. When `eval_pool` is given and
/// `eval_every > 0`, epochs divisible by `eval_every` carry an evaluation
/// snapshot. `on_epoch` sees each log line as it is produced.
pub fn train<S: Real>(
    learner: &MetaLearner,
    pool: &[ParticipantRecord<S>],
    eval_pool: Option<&[ParticipantRecord<S>]>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<S>> {
    let cfg = learner.config();
    cfg.validate()?;
    if let Some(r) = pool.iter().find(|r| r.group >= learner.n_groups()) {
        return Err(Error::Task(format!(
            "{} has group {} of {}",
            r.id,
            r.group,
            learner.n_groups()
        )));
    }
    let mut state = MetaState::init(learner)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { state, log });
    }
    // surface an unusable pool before any compute
    sample_task_with_retries(
        pool,
        cfg.shots,
        cfg.query_size,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;

    let exec = Executor::with_threads(cfg.threads);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TASK_STREAM);
    let iterations = iterations_per_epoch(pool.len(), cfg);
    for epoch in 1..=cfg.epochs {
        let mut steps: Vec<StepDiagnostics> = Vec::with_capacity(iterations);
        let mut unsampled = 0;
        for _ in 0..iterations {
            let mut tasks = Vec::with_capacity(cfg.tasks_per_batch);
            for _ in 0..cfg.tasks_per_batch {
                match sample_task_with_retries(pool, cfg.shots, cfg.query_size, &mut rng) {
                    Ok(t) => tasks.push(t),
                    Err(e) => {
                        log::warn!("epoch {epoch}: skipping task slot: {e}");
                        unsampled += 1;
                    }
                }
            }
            if tasks.is_empty() {
                return Err(Error::Task(format!(
                    "epoch {epoch}: no task could be sampled"
                )));
            }
            steps.push(state.meta_step(learner, &tasks, &exec)?);
        }

        let eval = match eval_pool {
            Some(test) if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 => {
                let model = AdaptingModel {
                    learner,
                    theta: &state.theta,
                };
                let ev = evaluate(
                    &model,
                    test,
                    learner.n_groups(),
                    cfg.shots,
                    cfg.query_size,
                    cfg.eval_tasks,
                    cfg.seed ^ EVAL_STREAM,
                    &exec,
                )?;
                Some(ev.aggregate)
            }
            _ => None,
        };
        let line = summarize(epoch, &steps, unsampled, eval);
        log::info!(
            "epoch {epoch}: query loss {:.4}, |<g_fair,d>| {:.3e}",
            line.mean_query_loss,
            line.mean_abs_fair_dot
        );
        on_epoch(&line);
        log.push(line);
    }
    Ok(TrainOutcome { state, log })
}

fn summarize(
    epoch: usize,
    steps: &[StepDiagnostics],
    unsampled: usize,
    eval: Option<AggregateReport>,
) -> EpochLog {
    let n = steps.len() as f64;
    let mean = |f: &dyn Fn(&StepDiagnostics) -> f64| steps.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&StepDiagnostics) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = steps.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    EpochLog {
        epoch,
        iterations: steps.len(),
        tasks_used: steps.iter().map(|s| s.tasks_used).sum(),
        tasks_failed: steps.iter().map(|s| s.tasks_failed).sum(),
        tasks_unsampled: unsampled,
        mean_query_loss: mean(&|s| s.mean_query_loss),
        mean_abs_fair_dot: mean(&|s| s.mean_abs_fair_dot),
        mean_abs_cos_full_d: mean(&|s| s.mean_abs_cos_full_d),
        mask_mean: mean_opt(&|s| s.mask_mean),
        mask_std: mean_opt(&|s| s.mask_std),
        adversary_loss: mean_opt(&|s| s.adversary_loss),
        inner_warnings: steps.iter().map(|s| s.inner_warnings).sum(),
        eval,
    }
}
