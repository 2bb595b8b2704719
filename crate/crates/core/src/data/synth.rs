//! Synthetic basket corpora with planted structure.
//!
//! Each user prefers a few categories and has a personal (Gamma-distributed)
//! affinity over the items inside every category. Some cross-category item
//! pairs are planted: whenever one member lands in a set, its partner joins
//! with probability `rho`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use super::instances::instance_seed;
use super::session::SECONDS_PER_DAY;
use super::{CategoryId, Interaction, ItemId, SetSequence};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    /// Sets (days) generated per user.
    pub n_days: usize,
    pub min_set_size: usize,
    pub max_set_size: usize,
    pub planted_pairs: usize,
    /// Probability that a planted partner joins its member's set.
    pub rho: f64,
    /// Categories each user favors.
    pub favored_categories: usize,
    /// Probability mass on the favored categories.
    pub favored_mass: f64,
    /// Gamma shape for per-user item affinities; smaller is peakier.
    pub item_concentration: f64,
    pub start_time: i64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_users: 300,
            n_items: 50,
            n_categories: 5,
            n_days: 10,
            min_set_size: 3,
            max_set_size: 7,
            planted_pairs: 10,
            rho: 0.5,
            favored_categories: 2,
            favored_mass: 0.8,
            item_concentration: 0.5,
            start_time: 1_600_000_000,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.n_users == 0 || self.n_days == 0 {
            return bad("n_users and n_days must be positive");
        }
        if self.n_categories == 0 || self.n_items < self.n_categories {
            return bad("need 1 <= n_categories <= n_items");
        }
        if self.min_set_size == 0 || self.min_set_size > self.max_set_size {
            return bad("need 1 <= min_set_size <= max_set_size");
        }
        if self.max_set_size >= self.n_items {
            return bad("max_set_size must be below n_items");
        }
        if 2 * self.planted_pairs > self.n_items {
            return bad("too many planted pairs for the catalog");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if self.favored_categories == 0 || self.favored_categories > self.n_categories {
            return bad("favored_categories must lie in [1, n_categories]");
        }
        if !(0.0..=1.0).contains(&self.favored_mass) {
            return bad("favored_mass must lie in [0, 1]");
        }
        if !(self.item_concentration > 0.0) {
            return bad("item_concentration must be positive");
        }
        Ok(())
    }

    /// Items are laid out in contiguous category blocks.
    pub fn category_of(&self, item: ItemId) -> CategoryId {
        item * self.n_categories / self.n_items
    }

    pub fn item_categories(&self) -> Vec<CategoryId> {
        (0..self.n_items).map(|i| self.category_of(i)).collect()
    }

    fn items_of(&self, c: CategoryId) -> Vec<ItemId> {
        (0..self.n_items).filter(|&i| self.category_of(i) == c).collect()
    }

    /// Planted pairs, drawn from the seed. Members are distinct, and when there
    /// is more than one category the two members differ in category.
    pub fn planted(&self, seed: u64) -> Vec<(ItemId, ItemId)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pools: Vec<Vec<ItemId>> = (0..self.n_categories)
            .map(|c| {
                let mut v = self.items_of(c);
                v.shuffle(&mut rng);
                v
            })
            .collect();
        let c = self.n_categories;
        let mut pairs = Vec::with_capacity(self.planted_pairs);
        let mut k = 0;
        while pairs.len() < self.planted_pairs && k < 4 * self.n_items {
            let c1 = k % c;
            let c2 = if c > 1 { (c1 + 1 + (k / c) % (c - 1)) % c } else { c1 };
            k += 1;
            if c1 == c2 && pools[c1].len() < 2 {
                continue;
            }
            if pools[c1].is_empty() || pools[c2].is_empty() {
                continue;
            }
            let x = pools[c1].pop().unwrap();
            match pools[c2].pop() {
                Some(y) => pairs.push((x, y)),
                None => pools[c1].push(x),
            }
        }
        pairs
    }
}

/// Generates a deterministic corpus in `(user, time)` order.
pub fn gen_synthetic(spec: &SynthSpec, seed: u64) -> Result<Vec<Interaction>> {
    spec.validate()?;
    let pairs = spec.planted(seed);
    let mut partner = vec![None; spec.n_items];
    for &(x, y) in &pairs {
        partner[x] = Some(y);
        partner[y] = Some(x);
    }
    let by_category: Vec<Vec<ItemId>> = (0..spec.n_categories).map(|c| spec.items_of(c)).collect();
    let gamma = Gamma::new(spec.item_concentration, 1.0).expect("validated shape");

    let mut events = Vec::new();
    for u in 0..spec.n_users as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(seed.wrapping_add(0x5EED), u));

        let mut cats: Vec<CategoryId> = (0..spec.n_categories).collect();
        cats.shuffle(&mut rng);
        let favored = &cats[..spec.favored_categories];
        let rest = spec.n_categories - spec.favored_categories;
        let cat_weights: Vec<f64> = (0..spec.n_categories)
            .map(|c| {
                if favored.contains(&c) {
                    spec.favored_mass / spec.favored_categories as f64
                } else if rest > 0 {
                    (1.0 - spec.favored_mass) / rest as f64
                } else {
                    0.0
                }
            })
            .collect();
        let cat_dist = match WeightedIndex::new(&cat_weights) {
            Ok(d) => d,
            // all mass on favored categories that were given zero weight: fall back to uniform
            Err(_) => WeightedIndex::new(vec![1.0; spec.n_categories]).unwrap(),
        };
        let item_dists: Vec<WeightedIndex<f64>> = by_category
            .iter()
            .map(|items| {
                let w: Vec<f64> = items.iter().map(|_| gamma.sample(&mut rng).max(1e-12)).collect();
                WeightedIndex::new(w).unwrap()
            })
            .collect();

        let mut day = spec.start_time.div_euclid(SECONDS_PER_DAY);
        for _ in 0..spec.n_days {
            day += 1 + rng.gen_range(0..2);
            let size = rng.gen_range(spec.min_set_size..=spec.max_set_size);
            let mut set: Vec<ItemId> = Vec::with_capacity(size + 1);
            let mut attempts = 0;
            while set.len() < size && attempts < 1000 * size {
                attempts += 1;
                let c = cat_dist.sample(&mut rng);
                let item = by_category[c][item_dists[c].sample(&mut rng)];
                if set.contains(&item) {
                    continue;
                }
                set.push(item);
                if let Some(p) = partner[item] {
                    if rng.gen::<f64>() < spec.rho && !set.contains(&p) {
                        set.push(p);
                    }
                }
            }
            let mut secs: Vec<i64> = set.iter().map(|_| rng.gen_range(0..SECONDS_PER_DAY)).collect();
            secs.sort_unstable();
            for (item, s) in set.into_iter().zip(secs) {
                events.push(Interaction {
                    user: u,
                    item,
                    category: spec.category_of(item),
                    time: day * SECONDS_PER_DAY + s,
                });
            }
        }
    }
    Ok(events)
}

/// Empirical `P(j ∈ set | i ∈ set)` over all sets; `None` if `i` never occurs.
pub fn pair_cooccurrence(seqs: &[SetSequence], i: ItemId, j: ItemId) -> Option<f64> {
    let (mut with_i, mut both) = (0usize, 0usize);
    for set in seqs.iter().flat_map(|s| &s.sets) {
        if set.contains(i) {
            with_i += 1;
            if set.contains(j) {
                both += 1;
            }
        }
    }
    (with_i > 0).then(|| both as f64 / with_i as f64)
}
