//! Interaction logs, temporal sets and the per-instance ground sets the
//! objective is trained on.

mod dataset;
mod ingest;
mod instances;
mod session;
mod synth;

use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, DatasetStats};
pub use ingest::{ingest_events, IndexMaps, IngestConfig, IngestSummary, Ingested};
pub use instances::{build_instances, instance_seed};
pub use session::{sessionize, split, UserSplit, SECONDS_PER_DAY};
pub use synth::{gen_synthetic, pair_cooccurrence, SynthSpec};

pub type UserId = u64;
pub type ItemId = usize;
pub type CategoryId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub category: CategoryId,
    /// Epoch seconds.
    pub time: i64,
}

/// Items a user interacted with on one calendar day.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalSet {
    pub items: Vec<ItemId>,
    pub day: i64,
}

impl TemporalSet {
    /// Drops repeated items, keeping first occurrences in order.
    pub fn new(items: impl IntoIterator<Item = ItemId>, day: i64) -> Self {
        let mut out: Vec<ItemId> = Vec::new();
        for i in items {
            if !out.contains(&i) {
                out.push(i);
            }
        }
        TemporalSet { items: out, day }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.items.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.items.contains(&item)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetSequence {
    pub user: UserId,
    pub sets: Vec<TemporalSet>,
}

/// One sequence-specified ground set: `A` previous sets, `B` targets that
/// follow them, and `Z` sampled negatives paired with the targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub user: UserId,
    pub previous: Vec<TemporalSet>,
    pub targets: Vec<TemporalSet>,
    pub negatives: Vec<TemporalSet>,
    /// Items of `previous`, flattened in chronological order.
    pub sequence_items: Vec<ItemId>,
}

impl TrainingInstance {
    pub fn new(
        user: UserId,
        previous: Vec<TemporalSet>,
        targets: Vec<TemporalSet>,
        negatives: Vec<TemporalSet>,
    ) -> Self {
        let sequence_items = previous.iter().flat_map(|s| s.items.iter().copied()).collect();
        TrainingInstance {
            user,
            previous,
            targets,
            negatives,
            sequence_items,
        }
    }

    /// Structures in ground-set order: previous, then targets, then negatives.
    pub fn structures(&self) -> impl Iterator<Item = &TemporalSet> {
        self.previous
            .iter()
            .chain(&self.targets)
            .chain(&self.negatives)
    }

    pub fn n_structures(&self) -> usize {
        self.previous.len() + self.targets.len() + self.negatives.len()
    }
}
