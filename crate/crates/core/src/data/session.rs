use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{IngestConfig, Interaction, SetSequence, TemporalSet, UserId};
use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Groups events into one sequence per user, one set per UTC calendar day.
///
/// Within a day an item appears once; sets above `max_set_size` keep their
/// most recently touched items. Users with fewer than `min_sets` days are
/// dropped. Output is ordered by user id.
pub fn sessionize(events: &[Interaction], cfg: &IngestConfig) -> Result<Vec<SetSequence>> {
    if events.is_empty() {
        return Err(Error::Empty);
    }
    let mut by_user: BTreeMap<UserId, Vec<(i64, usize)>> = BTreeMap::new();
    for (pos, e) in events.iter().enumerate() {
        by_user.entry(e.user).or_default().push((e.time, pos));
    }

    let mut out = Vec::new();
    for (user, mut evs) in by_user {
        // stable on file position for equal timestamps
        evs.sort_unstable();
        let mut days: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (time, pos) in evs {
            let items = days.entry(time.div_euclid(SECONDS_PER_DAY)).or_default();
            let item = events[pos].item;
            // a repeat moves the item to the back: order is by last touch
            items.retain(|&i| i != item);
            items.push(item);
        }
        let sets: Vec<TemporalSet> = days
            .into_iter()
            .map(|(day, items)| {
                let skip = items.len().saturating_sub(cfg.max_set_size);
                TemporalSet {
                    items: items[skip..].to_vec(),
                    day,
                }
            })
            .collect();
        if sets.len() >= cfg.min_sets {
            out.push(SetSequence { user, sets });
        }
    }
    Ok(out)
}

/// Per-user chronological split: the last set is the test target, the
/// second-to-last the validation target, and everything before is training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user: UserId,
    pub train: Vec<TemporalSet>,
    pub val: TemporalSet,
    pub test: TemporalSet,
}

impl UserSplit {
    pub fn train_sequence(&self) -> SetSequence {
        SetSequence {
            user: self.user,
            sets: self.train.clone(),
        }
    }

    /// History visible when predicting the validation target.
    pub fn val_context(&self) -> &[TemporalSet] {
        &self.train
    }

    /// History visible when predicting the test target.
    pub fn test_context(&self) -> Vec<TemporalSet> {
        let mut ctx = self.train.clone();
        ctx.push(self.val.clone());
        ctx
    }
}

pub fn split(seqs: &[SetSequence]) -> Result<Vec<UserSplit>> {
    seqs.iter()
        .map(|s| {
            let n = s.sets.len();
            if n < 4 {
                return Err(Error::TooShort(s.user));
            }
            Ok(UserSplit {
                user: s.user,
                train: s.sets[..n - 2].to_vec(),
                val: s.sets[n - 2].clone(),
                test: s.sets[n - 1].clone(),
            })
        })
        .collect()
}
