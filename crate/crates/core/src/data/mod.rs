//! Participant records, the on-disk dataset format, participant-disjoint
//! splitting, feature standardization and a synthetic generator with a
//! controllable group bias.

mod format;
mod normalize;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::real::Real;

pub use format::{load_dataset, save_dataset, MANIFEST_NAME};
pub use normalize::Standardizer;
pub use split::{split_participants, Split};
pub use synth::{generate_synthetic, BiasSpec};

pub const FORMAT_VERSION: u32 = 1;

/// One participant's `T×d` feature sequence with its label and group.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantRecord<S = f32> {
    pub id: String,
    pub group: usize,
    /// 1 = positive (stressed).
    pub label: u8,
    pub features: Tensor<S>,
}

impl<S: Real> ParticipantRecord<S> {
    pub fn cast<T: Real>(&self) -> ParticipantRecord<T> {
        ParticipantRecord {
            id: self.id.clone(),
            group: self.group,
            label: self.label,
            features: self.features.cast(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub seq_len: usize,
    pub input_dim: usize,
    pub n_groups: usize,
    pub n_participants: usize,
    pub format_version: u32,
}

impl DatasetHeader {
    pub fn new(seq_len: usize, input_dim: usize, n_groups: usize) -> Self {
        Self {
            seq_len,
            input_dim,
            n_groups,
            n_participants: 0,
            format_version: FORMAT_VERSION,
        }
    }

    /// Full-size shape: 120 one-second steps of 37 video + 30 audio features.
    pub fn paper_shaped() -> Self {
        Self::new(120, 67, 2)
    }

    /// Small shape used for quick runs and tests.
    pub fn desk() -> Self {
        Self::new(20, 8, 2)
    }
}

/// Group/label counts, for printing dataset summaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Composition {
    /// `counts[group][label]`
    pub counts: Vec<[usize; 2]>,
}

impl Composition {
    pub fn of<S>(records: &[ParticipantRecord<S>], n_groups: usize) -> Self {
        let mut counts = vec![[0usize; 2]; n_groups.max(1)];
        for r in records {
            if r.group >= counts.len() {
                counts.resize(r.group + 1, [0; 2]);
            }
            counts[r.group][usize::from(r.label.min(1))] += 1;
        }
        Self { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|c| c[0] + c[1]).sum()
    }
}

impl std::fmt::Display for Composition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "participants: {}", self.total())?;
        for (g, c) in self.counts.iter().enumerate() {
            writeln!(
                f,
                "  group {g}: {} participants ({} positive, {} negative)",
                c[0] + c[1],
                c[1],
                c[0]
            )?;
        }
        Ok(())
    }
}
