use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::ParticipantRecord;
use crate::error::{Error, Result};

/// Attempts before a task slot is skipped.
pub const TASK_RETRIES: usize = 10;

/// A few-shot episode drawn from one pool.
#[derive(Debug, Clone)]
pub struct EpisodeTask<'a, S = f32> {
    /// `shots` negatives followed by `shots` positives.
    pub support: Vec<&'a ParticipantRecord<S>>,
    pub query: Vec<&'a ParticipantRecord<S>>,
    /// Dropout seed for the support passes of this task.
    pub seed: u64,
}

/// Draws a class-stratified support set and a query set from the remainder.
///
/// The query takes `⌈Q/2⌉` positives and `⌊Q/2⌋` negatives when available
/// and tops up from the other class otherwise.
pub fn sample_task<'a, S, R: Rng + ?Sized>(
    pool: &'a [ParticipantRecord<S>],
    shots: usize,
    query_size: usize,
    rng: &mut R,
) -> Result<EpisodeTask<'a, S>> {
    if shots == 0 || query_size == 0 {
        return Err(Error::Config(
            "shots and query size must be positive".into(),
        ));
    }
    let mut by_class: [Vec<&ParticipantRecord<S>>; 2] = [Vec::new(), Vec::new()];
    for r in pool {
        by_class[usize::from(r.label.min(1))].push(r);
    }
    for (label, members) in by_class.iter().enumerate() {
        if members.len() < shots {
            return Err(Error::InsufficientPool(format!(
                "class {label} has {} participants, {shots}-shot support needs {shots}",
                members.len()
            )));
        }
    }
    let remaining = pool.len() - 2 * shots;
    if remaining < query_size {
        return Err(Error::InsufficientPool(format!(
            "only {remaining} participants left after the support set, query needs {query_size}"
        )));
    }

    for members in by_class.iter_mut() {
        members.shuffle(rng);
    }
    let mut support = Vec::with_capacity(2 * shots);
    support.extend_from_slice(&by_class[0][..shots]);
    support.extend_from_slice(&by_class[1][..shots]);

    let left = [by_class[0].len() - shots, by_class[1].len() - shots];
    let mut want_pos = query_size.div_ceil(2);
    let mut want_neg = query_size / 2;
    if want_pos > left[1] {
        want_neg += want_pos - left[1];
        want_pos = left[1];
    }
    if want_neg > left[0] {
        want_pos += want_neg - left[0];
        want_neg = left[0];
    }
    let mut query = Vec::with_capacity(query_size);
    query.extend_from_slice(&by_class[0][shots..shots + want_neg]);
    query.extend_from_slice(&by_class[1][shots..shots + want_pos]);

    Ok(EpisodeTask {
        support,
        query,
        seed: rng.next_u64(),
    })
}

/// [`sample_task`] with up to [`TASK_RETRIES`] attempts.
pub fn sample_task_with_retries<'a, S, R: Rng + ?Sized>(
    pool: &'a [ParticipantRecord<S>],
    shots: usize,
    query_size: usize,
    rng: &mut R,
) -> Result<EpisodeTask<'a, S>> {
    let mut last = None;
    for _ in 0..TASK_RETRIES {
        match sample_task(pool, shots, query_size, rng) {
            Ok(t) => return Ok(t),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}
