use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ItemId, SetSequence, TemporalSet, TrainingInstance, UserId};

/// Per-user RNG seed so instance building can run in any user order.
pub fn instance_seed(seed: u64, user: UserId) -> u64 {
    seed ^ user.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Slides a stride-1 window over `seq`: every position with at least `a`
/// sets before it and `b` sets from it onward yields one instance.
///
/// Negative `k` pairs with target `k % b` and is drawn uniformly without
/// replacement from the catalog minus that target's items, at the target's
/// size.
pub fn build_instances(
    seq: &SetSequence,
    a: usize,
    b: usize,
    z: usize,
    n_items: usize,
    seed: u64,
) -> Vec<TrainingInstance> {
    assert!(a >= 1 && b >= 1, "need at least one previous and one target set");
    let n = seq.sets.len();
    if n < a + b {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(seed, seq.user));
    (a..=n - b)
        .map(|t| {
            let previous = seq.sets[t - a..t].to_vec();
            let targets = seq.sets[t..t + b].to_vec();
            let negatives = (0..z)
                .map(|k| sample_negative(&targets[k % b], n_items, &mut rng))
                .collect();
            TrainingInstance::new(seq.user, previous, targets, negatives)
        })
        .collect()
}

fn sample_negative(target: &TemporalSet, n_items: usize, rng: &mut ChaCha8Rng) -> TemporalSet {
    let pool: Vec<ItemId> = (0..n_items).filter(|i| !target.contains(*i)).collect();
    let k = target.len().min(pool.len());
    let mut items: Vec<ItemId> = index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    items.sort_unstable();
    TemporalSet {
        items,
        day: target.day,
    }
}
