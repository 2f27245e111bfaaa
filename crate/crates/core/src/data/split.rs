use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ParticipantRecord;
use crate::error::{Error, Result};

/// Indices into the record list for each pool, in record order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn pools<S: Clone>(
        &self,
        records: &[ParticipantRecord<S>],
    ) -> (Vec<ParticipantRecord<S>>, Vec<ParticipantRecord<S>>) {
        let pick = |ids: &[usize]| ids.iter().map(|&i| records[i].clone()).collect();
        (pick(&self.train), pick(&self.test))
    }
}

/// Participant-disjoint split stratified by `(label, group)`.
///
/// Every cell with at least two members lands in both pools; the test pool
/// size is `round(test_fraction · n)` whenever the cell constraints allow.
pub fn split_participants<S>(
    records: &[ParticipantRecord<S>],
    test_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = records.len();
    if n < 4 {
        return Err(Error::InsufficientPool(format!(
            "{n} participants cannot be split"
        )));
    }

    let mut cells: BTreeMap<(u8, usize), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        cells.entry((r.label, r.group)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in cells.values_mut() {
        members.shuffle(&mut rng);
    }

    struct Quota {
        ideal: f64,
        take: usize,
        lo: usize,
        hi: usize,
    }
    let mut quotas: Vec<Quota> = cells
        .values()
        .map(|m| {
            let size = m.len();
            let ideal = test_fraction * size as f64;
            let (lo, hi) = if size >= 2 { (1, size - 1) } else { (0, size) };
            Quota {
                ideal,
                take: (ideal.floor() as usize).clamp(lo, hi),
                lo,
                hi,
            }
        })
        .collect();

    let target = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut current: usize = quotas.iter().map(|q| q.take).sum();
    while current < target {
        let best = quotas
            .iter_mut()
            .filter(|q| q.take < q.hi)
            .max_by(|a, b| (a.ideal - a.take as f64).total_cmp(&(b.ideal - b.take as f64)));
        match best {
            Some(q) => q.take += 1,
            None => break,
        }
        current += 1;
    }
    while current > target {
        let best = quotas
            .iter_mut()
            .filter(|q| q.take > q.lo)
            .min_by(|a, b| (a.ideal - a.take as f64).total_cmp(&(b.ideal - b.take as f64)));
        match best {
            Some(q) => q.take -= 1,
            None => break,
        }
        current -= 1;
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (members, q) in cells.values().zip(&quotas) {
        test.extend_from_slice(&members[..q.take]);
        train.extend_from_slice(&members[q.take..]);
    }
    train.sort_unstable();
    test.sort_unstable();

    for (name, pool) in [("train", &train), ("test", &test)] {
        for label in [0u8, 1] {
            if !pool.iter().any(|&i| records[i].label == label) {
                return Err(Error::InsufficientPool(format!(
                    "stratification infeasible: {name} pool has no participants with label {label}"
                )));
            }
        }
    }
    Ok(Split { train, test })
}
