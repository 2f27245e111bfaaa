use serde::{Deserialize, Serialize};

use crate::data::ParticipantRecord;

/// Per-feature standardization fitted on one pool and applied to any other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and population std of each feature over every time step of every record.
    pub fn fit(records: &[ParticipantRecord]) -> Self {
        let Some(first) = records.first() else {
            return Self::identity(0);
        };
        let dim = first.features.shape()[1];
        let mut sum = vec![0f64; dim];
        let mut sq = vec![0f64; dim];
        let mut count = 0usize;
        for r in records {
            for row in r.features.data().chunks(dim) {
                for (k, &v) in row.iter().enumerate() {
                    sum[k] += f64::from(v);
                    sq[k] += f64::from(v) * f64::from(v);
                }
                count += 1;
            }
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n - m * m).max(0.0).sqrt();
                if sd < 1e-8 {
                    1.0
                } else {
                    sd as f32
                }
            })
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn apply(&self, record: &ParticipantRecord) -> ParticipantRecord {
        let dim = self.mean.len();
        let mut out = record.clone();
        for row in out.features.data_mut().chunks_mut(dim) {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        out
    }

    pub fn apply_all(&self, records: &[ParticipantRecord]) -> Vec<ParticipantRecord> {
        records.iter().map(|r| self.apply(r)).collect()
    }
}
