//! Category-aware diverse kernel `K = A Aᵀ`.
//!
//! The factor `A` is pre-learned from observed sets: subsets that span many
//! categories are pushed towards high `log det`, random same-size subsets
//! towards low. Row `i` of `A` is the diversity feature vector of item `i`,
//! and a temporal set's feature is the sum of its items' rows, so set
//! similarity is a plain dot product.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CategoryId, ItemId, TemporalSet};
use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, IndexSet, Mat, SymMatrix};
use crate::optim::{AdamConfig, AdamState};

const MAGIC: &[u8; 4] = b"SRDK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DiversityFactor {
    a: Mat,
    pub reg_delta: f64,
}

impl DiversityFactor {
    pub fn new(a: Mat, reg_delta: f64) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::Degenerate("non-finite factor rows".into()));
        }
        Ok(DiversityFactor { a, reg_delta })
    }

    /// Rows drawn i.i.d. from `N(0, 1/k)`.
    pub fn random(n_items: usize, rank: usize, reg_delta: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (rank as f64).sqrt()).unwrap();
        let a = Mat::from_fn(n_items, rank, |_, _| normal.sample(&mut rng));
        DiversityFactor { a, reg_delta }
    }

    #[inline]
    pub fn n_items(&self) -> usize {
        self.a.rows()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn factor(&self) -> &Mat {
        &self.a
    }

    pub fn row(&self, item: ItemId) -> &[f64] {
        self.a.row(item)
    }

    /// `K_ij = a_i · a_j`.
    pub fn kernel_entry(&self, i: ItemId, j: ItemId) -> f64 {
        dot(self.a.row(i), self.a.row(j))
    }

    /// Set feature `φ(S) = Σ_{i ∈ S} a_i`.
    pub fn set_feature(&self, items: &[ItemId]) -> Result<Vec<f64>> {
        let mut phi = vec![0.0; self.rank()];
        for &i in items {
            if i >= self.n_items() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    dim: self.n_items(),
                });
            }
            for (p, v) in phi.iter_mut().zip(self.a.row(i)) {
                *p += v;
            }
        }
        Ok(phi)
    }

    /// Order-independent checksum of the factor bits.
    pub fn checksum(&self) -> u64 {
        self.a
            .as_slice()
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3))
    }

    /// `magic, version: u32, n_items: u64, rank: u64`, then the factor as
    /// row-major `f64`, all little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.n_items() as u64).to_le_bytes())?;
        w.write_all(&(self.rank() as u64).to_le_bytes())?;
        for v in self.a.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, reg_delta: f64) -> Result<Self> {
        let io = |e: std::io::Error| Error::Format(format!("truncated factor: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a diversity factor file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported factor version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8).map_err(io)?;
        let k = u64::from_le_bytes(b8) as usize;
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n * k {
            r.read_exact(&mut b8).map_err(io)?;
            data.push(f64::from_le_bytes(b8));
        }
        DiversityFactor::new(Mat::from_vec(n, k, data)?, reg_delta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, reg_delta: f64) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f), reg_delta)
    }

    /// `item,f0,f1,...` with one row per item.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let mut header = vec!["item".to_string()];
        header.extend((0..self.rank()).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
        for i in 0..self.n_items() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.a.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `Sim(S_a, S_b) = φ(S_a) · φ(S_b) = Σ_{α ∈ S_a, β ∈ S_b} K_αβ`.
pub fn structure_similarity(sa: &TemporalSet, sb: &TemporalSet, f: &DiversityFactor) -> Result<f64> {
    Ok(dot(&f.set_feature(&sa.items)?, &f.set_feature(&sb.items)?))
}

/// Gram matrix `[φ(S_a) · φ(S_b)]` over a list of structures.
pub fn similarity_gram<'a>(
    sets: impl IntoIterator<Item = &'a TemporalSet>,
    f: &DiversityFactor,
) -> Result<SymMatrix> {
    let feats = sets
        .into_iter()
        .map(|s| f.set_feature(&s.items))
        .collect::<Result<Vec<_>>>()?;
    let n = feats.len();
    let mut g = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = dot(&feats[i], &feats[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    SymMatrix::new(g)
}

/// Paired observed-diverse and random subsets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiversePairBatch {
    pub positives: Vec<IndexSet>,
    pub negatives: Vec<IndexSet>,
}

impl DiversePairBatch {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// Splits off every `every`-th pair as a held-out batch.
    pub fn holdout(&self, every: usize) -> (DiversePairBatch, DiversePairBatch) {
        let mut train = DiversePairBatch::default();
        let mut held = DiversePairBatch::default();
        for (k, (p, n)) in self.positives.iter().zip(&self.negatives).enumerate() {
            let dst = if k % every == every - 1 { &mut held } else { &mut train };
            dst.positives.push(p.clone());
            dst.negatives.push(n.clone());
        }
        (train, held)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiverseSubsetConfig {
    /// Observed sets outside `[min_set_size, max_set_size]` are skipped.
    pub min_set_size: usize,
    pub max_set_size: usize,
    /// Fewest distinct categories (hence items) in a positive subset.
    pub min_subset_size: usize,
    /// Variants emitted per set when categories have several members.
    pub max_variants: usize,
}

impl Default for DiverseSubsetConfig {
    fn default() -> Self {
        DiverseSubsetConfig {
            min_set_size: 5,
            max_set_size: 20,
            min_subset_size: 3,
            max_variants: 2,
        }
    }
}

/// One-representative-per-category subsets of `items`. Categories keep their
/// first-appearance order; variant `v` takes member `v mod count` of each
/// category, and at most `max_size` categories are used.
pub fn diverse_variants(
    items: &[ItemId],
    categories: &[CategoryId],
    max_variants: usize,
    max_size: usize,
) -> Vec<Vec<ItemId>> {
    let mut groups: Vec<(CategoryId, Vec<ItemId>)> = Vec::new();
    for &i in items {
        let c = categories[i];
        match groups.iter_mut().find(|(g, _)| *g == c) {
            Some((_, members)) => members.push(i),
            None => groups.push((c, vec![i])),
        }
    }
    groups.truncate(max_size);
    let widest = groups.iter().map(|(_, m)| m.len()).max().unwrap_or(0);
    (0..widest.min(max_variants))
        .map(|v| groups.iter().map(|(_, m)| m[v % m.len()]).collect())
        .collect()
}

/// Builds positive/negative pairs from observed sets. Negatives are uniform
/// draws without replacement from the full catalog, sized like their
/// positive.
pub fn extract_diverse_subsets<'a>(
    sets: impl IntoIterator<Item = &'a TemporalSet>,
    categories: &[CategoryId],
    rank: usize,
    cfg: &DiverseSubsetConfig,
    seed: u64,
) -> DiversePairBatch {
    let n_items = categories.len();
    let max_size = rank.min(20);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = DiversePairBatch::default();
    for set in sets {
        if set.len() < cfg.min_set_size || set.len() > cfg.max_set_size {
            continue;
        }
        for pos in diverse_variants(&set.items, categories, cfg.max_variants, max_size) {
            if pos.len() < cfg.min_subset_size {
                break;
            }
            let neg = index::sample(&mut rng, n_items, pos.len()).into_vec();
            batch.positives.push(IndexSet::new(pos));
            batch.negatives.push(IndexSet::new(neg));
        }
    }
    batch
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelLearnConfig {
    pub rank: usize,
    pub reg_delta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KernelLearnConfig {
    fn default() -> Self {
        KernelLearnConfig {
            rank: 32,
            reg_delta: 1e-3,
            lr: 1e-2,
            epochs: 200,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelLearnReport {
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Full-batch objective after each epoch.
    pub history: Vec<f64>,
    pub restarted: bool,
}

/// `log det(A_T A_Tᵀ + δI)` and its gradient w.r.t. the rows `A_T`,
/// which is `2 M⁻¹ A_T`.
fn subset_logdet(a: &Mat, t: &IndexSet, delta: f64) -> Result<(f64, Mat)> {
    let rows = a.gather_rows(t.as_slice());
    let mut m = rows.matmul_t(&rows);
    for i in 0..m.rows() {
        m[(i, i)] += delta;
    }
    let chol = Cholesky::factor(&SymMatrix::new(m)?)?;
    let mut grad = chol.inverse().matmul(&rows);
    grad.scale(2.0);
    Ok((chol.logdet(), grad))
}

/// `ℓ = Σ log det(K_{T⁺} + δI) − log det(K_{T⁻} + δI)` over the batch.
pub fn pair_objective(a: &Mat, pairs: &DiversePairBatch, delta: f64) -> Result<f64> {
    pairs
        .positives
        .iter()
        .zip(&pairs.negatives)
        .map(|(p, n)| Ok(subset_logdet(a, p, delta)?.0 - subset_logdet(a, n, delta)?.0))
        .sum()
}

/// `ℓ` and `∂ℓ/∂A` over the pairs selected by `idx`.
pub fn pair_objective_grad(a: &Mat, pairs: &DiversePairBatch, idx: &[usize], delta: f64) -> Result<(f64, Mat)> {
    let mut grad = Mat::zeros(a.rows(), a.cols());
    let mut value = 0.0;
    for &k in idx {
        let (lp, gp) = subset_logdet(a, &pairs.positives[k], delta)?;
        let (ln, mut gn) = subset_logdet(a, &pairs.negatives[k], delta)?;
        value += lp - ln;
        grad.scatter_add_rows(pairs.positives[k].as_slice(), &gp);
        gn.scale(-1.0);
        grad.scatter_add_rows(pairs.negatives[k].as_slice(), &gn);
    }
    Ok((value, grad))
}

/// Mean `log det(K_T + δI)` over positives and over negatives.
pub fn mean_subset_logdets(f: &DiversityFactor, pairs: &DiversePairBatch) -> Result<(f64, f64)> {
    let mean = |sets: &[IndexSet]| -> Result<f64> {
        let s: f64 = sets
            .iter()
            .map(|t| Ok(subset_logdet(f.factor(), t, f.reg_delta)?.0))
            .sum::<Result<f64>>()?;
        Ok(s / sets.len().max(1) as f64)
    };
    Ok((mean(&pairs.positives)?, mean(&pairs.negatives)?))
}

fn ascend(
    pairs: &DiversePairBatch,
    n_items: usize,
    cfg: &KernelLearnConfig,
    seed: u64,
    lr: f64,
) -> Result<(Mat, KernelLearnReport)> {
    let mut a = DiversityFactor::random(n_items, cfg.rank, cfg.reg_delta, seed).a;
    let adam_cfg = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&a);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1CE);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let initial = pair_objective(&a, pairs, cfg.reg_delta)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (_, mut g) = pair_objective_grad(&a, pairs, chunk, cfg.reg_delta)?;
            g.scale(1.0 / chunk.len() as f64);
            adam.ascend(&mut a, &g, &adam_cfg)?;
        }
        let obj = pair_objective(&a, pairs, cfg.reg_delta)?;
        history.push(obj);
        if !obj.is_finite() {
            break;
        }
    }
    let final_objective = history.last().copied().unwrap_or(initial);
    Ok((
        a,
        KernelLearnReport {
            initial_objective: initial,
            final_objective,
            history,
            restarted: false,
        },
    ))
}

/// Adam ascent on `A`. A non-finite objective triggers one warm restart from
/// a fresh initialization at a tenth of the learning rate.
pub fn learn_diverse_kernel(
    pairs: &DiversePairBatch,
    n_items: usize,
    cfg: &KernelLearnConfig,
) -> Result<(DiversityFactor, KernelLearnReport)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no diverse subsets to learn from".into()));
    }
    let attempt = ascend(pairs, n_items, cfg, cfg.seed, cfg.lr);
    let (a, report) = match attempt {
        Ok((a, r)) if r.final_objective.is_finite() && a.is_finite() => (a, r),
        _ => {
            let (a, mut r) = ascend(pairs, n_items, cfg, cfg.seed.wrapping_add(1), cfg.lr * 0.1)
                .map_err(|e| Error::Degenerate(e.to_string()))?;
            if !r.final_objective.is_finite() || !a.is_finite() {
                return Err(Error::Degenerate("objective is NaN after warm restart".into()));
            }
            r.restarted = true;
            (a, r)
        }
    };
    Ok((DiversityFactor::new(a, cfg.reg_delta)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn set(items: &[usize]) -> TemporalSet {
        TemporalSet::new(items.iter().copied(), 0)
    }

    #[test]
    fn worked_example_variants() {
        // v5^c1, v6^c2, v7^c3, v8^c3
        let mut cats = vec![0; 9];
        cats[5] = 1;
        cats[6] = 2;
        cats[7] = 3;
        cats[8] = 3;
        let v = diverse_variants(&[5, 6, 7, 8], &cats, 2, 20);
        assert_eq!(v, vec![vec![5, 6, 7], vec![5, 6, 8]]);
    }

    #[test]
    fn four_item_sets_are_below_gate() {
        let cats: Vec<usize> = (0..10).collect();
        let b = extract_diverse_subsets(&[set(&[0, 1, 2, 3])], &cats, 32, &DiverseSubsetConfig::default(), 0);
        assert!(b.is_empty());
    }

    #[test]
    fn two_category_sets_are_skipped() {
        let cats = vec![0, 0, 0, 1, 1, 1, 2];
        let b = extract_diverse_subsets(&[set(&[0, 1, 2, 3, 4, 5])], &cats, 32, &DiverseSubsetConfig::default(), 0);
        assert!(b.is_empty());
    }

    #[test]
    fn pairs_are_sized_alike_and_deterministic() {
        let cats: Vec<usize> = (0..30).map(|i| i % 6).collect();
        let sets = vec![set(&[0, 1, 2, 3, 4, 6, 12]), set(&[5, 11, 17, 23, 29])];
        let cfg = DiverseSubsetConfig::default();
        let b = extract_diverse_subsets(&sets, &cats, 32, &cfg, 9);
        // first set: 5 categories, category 0 has three members -> 2 variants
        assert_eq!(b.len(), 2);
        for (p, n) in b.positives.iter().zip(&b.negatives) {
            assert_eq!(p.len(), n.len());
            assert!(p.len() >= 3);
        }
        assert_eq!(b, extract_diverse_subsets(&sets, &cats, 32, &cfg, 9));
    }

    #[test]
    fn rank_caps_subset_size() {
        let cats: Vec<usize> = (0..10).collect();
        let b = extract_diverse_subsets(&[set(&[0, 1, 2, 3, 4, 5, 6])], &cats, 4, &DiverseSubsetConfig::default(), 0);
        assert_eq!(b.positives[0].len(), 4);
    }

    #[test]
    fn similarity_of_singleton_is_squared_norm() {
        let f = DiversityFactor::random(10, 4, 1e-3, 1);
        let s = set(&[3]);
        let n2: f64 = f.row(3).iter().map(|v| v * v).sum();
        assert!((structure_similarity(&s, &s, &f).unwrap() - n2).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_rows_have_zero_similarity() {
        let a = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![0.0, -1.0]]);
        let f = DiversityFactor::new(a, 1e-3).unwrap();
        assert_eq!(structure_similarity(&set(&[0]), &set(&[1, 2]), &f).unwrap(), 0.0);
    }

    #[test]
    fn similarity_equals_double_sum() {
        let f = DiversityFactor::random(20, 6, 1e-3, 4);
        let (sa, sb) = (set(&[1, 7, 12]), set(&[3, 19]));
        let naive: f64 = sa
            .items
            .iter()
            .flat_map(|&x| sb.items.iter().map(move |&y| (x, y)))
            .map(|(x, y)| f.kernel_entry(x, y))
            .sum();
        assert!((structure_similarity(&sa, &sb, &f).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn similarity_rejects_unknown_items() {
        let f = DiversityFactor::random(5, 2, 1e-3, 0);
        assert!(matches!(
            structure_similarity(&set(&[5]), &set(&[0]), &f),
            Err(Error::IndexOutOfRange { index: 5, dim: 5 })
        ));
    }

    #[test]
    fn similarity_additive_over_disjoint_union() {
        let f = DiversityFactor::random(30, 5, 1e-3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mut items: Vec<usize> = (0..30).collect();
            items.shuffle(&mut rng);
            let (s1, s2, t) = (set(&items[0..3]), set(&items[3..6]), set(&items[6..10]));
            let u = set(&items[0..6]);
            let lhs = structure_similarity(&u, &t, &f).unwrap();
            let rhs = structure_similarity(&s1, &t, &f).unwrap() + structure_similarity(&s2, &t, &f).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
            assert!(structure_similarity(&u, &u, &f).unwrap() >= 0.0);
        }
    }

    #[test]
    fn gram_of_structures_is_psd() {
        let f = DiversityFactor::random(30, 8, 1e-3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sets: Vec<TemporalSet> = (0..6)
            .map(|_| set(&(0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..30)).collect::<Vec<_>>()))
            .collect();
        let g = similarity_gram(&sets, &f).unwrap();
        assert!(Cholesky::factor_exact(g.as_mat()).is_some());
    }

    #[test]
    fn orthogonal_positive_beats_collinear_negative_at_init() {
        let mut a = Mat::zeros(6, 3);
        for i in 0..3 {
            a[(i, i)] = 1.0;
        }
        for i in 3..6 {
            a[(i, 0)] = 1.0;
        }
        let pairs = DiversePairBatch {
            positives: vec![IndexSet::new(vec![0, 1, 2])],
            negatives: vec![IndexSet::new(vec![3, 4, 5])],
        };
        assert!(pair_objective(&a, &pairs, 1e-3).unwrap() > 0.0);
    }

    #[test]
    fn objective_gradient_matches_central_differences() {
        let cats: Vec<usize> = (0..20).map(|i| i % 5).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sets: Vec<TemporalSet> = (0..8)
            .map(|_| {
                let mut v: Vec<usize> = (0..20).collect();
                v.shuffle(&mut rng);
                set(&v[..6])
            })
            .collect();
        let pairs = extract_diverse_subsets(&sets, &cats, 4, &DiverseSubsetConfig::default(), 1);
        assert!(!pairs.is_empty());
        let a = DiversityFactor::random(20, 4, 1e-3, 2).a;
        let idx: Vec<usize> = (0..pairs.len()).collect();
        let (_, g) = pair_objective_grad(&a, &pairs, &idx, 1e-3).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..a.as_slice().len() {
            let mut plus = a.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = a.clone();
            minus.as_mut_slice()[k] -= h;
            let fd = (pair_objective(&plus, &pairs, 1e-3).unwrap() - pair_objective(&minus, &pairs, 1e-3).unwrap())
                / (2.0 * h);
            let an = g.as_slice()[k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn first_epoch_increases_objective() {
        let cats: Vec<usize> = (0..25).map(|i| i / 5).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sets: Vec<TemporalSet> = (0..40)
            .map(|_| {
                let mut v: Vec<usize> = (0..25).collect();
                v.shuffle(&mut rng);
                set(&v[..7])
            })
            .collect();
        let pairs = extract_diverse_subsets(&sets, &cats, 8, &DiverseSubsetConfig::default(), 0);
        let cfg = KernelLearnConfig {
            rank: 8,
            epochs: 1,
            batch_size: 1 << 20,
            ..KernelLearnConfig::default()
        };
        let (_, report) = learn_diverse_kernel(&pairs, 25, &cfg).unwrap();
        assert!(report.history[0] > report.initial_objective);
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(learn_diverse_kernel(&DiversePairBatch::default(), 10, &KernelLearnConfig::default()).is_err());
    }

    #[test]
    fn binary_round_trip_and_header() {
        let f = DiversityFactor::random(7, 3, 1e-3, 5);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 7);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 24 + 7 * 3 * 8);
        let back = DiversityFactor::read_from(&mut buf.as_slice(), 1e-3).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let f = DiversityFactor::random(4, 2, 1e-3, 5);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(DiversityFactor::read_from(&mut buf.as_slice(), 1e-3).is_err());
    }
}
