//! Conditional structured-DPP likelihood of one training instance.
//!
//! Each structure (a temporal set) gets a weight `w` from the representation
//! towers; the kernel over the instance's structures is
//! `L_ab = exp(w_a) · φ_a·φ_b · exp(w_b)`, with `φ` the frozen diversity
//! features. The log-likelihood is `log det(L_{A∪B}) − log det(L + I_Ā)`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, TemporalSet, TrainingInstance};
use crate::diversity::{similarity_gram, DiversityFactor};
use crate::dpp::{conditional_log_prob, ConditionalFactors};
use crate::error::{Error, Result};
use crate::linalg::{dot, IndexSet, Mat, SymMatrix};
use crate::model::{encode, ModelParams, SeqReps};
use crate::optim::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveOptions {
    /// Subtract the mean structure weight before exponentiating.
    pub center: bool,
    /// Include pairwise cohesion terms in structure weights.
    pub edges: bool,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        ObjectiveOptions {
            center: true,
            edges: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureWeight {
    pub value: f64,
    pub item_scores: Vec<f64>,
    /// One score per unordered pair, in `(i, j)` order with `i < j` by
    /// position in the set.
    pub edge_scores: Vec<f64>,
}

/// `w(S) = Σ_r p·e^P_r + Σ_{unordered pairs} c_α·c_β`. A singleton has no
/// edge term.
pub fn structure_weight<'a>(
    set: &TemporalSet,
    p: &[f64],
    pref_emb: &Mat,
    cooc_row: impl Fn(ItemId) -> Option<&'a [f64]>,
    edges: bool,
) -> Result<StructureWeight> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut item_scores = Vec::with_capacity(set.len());
    for &i in &set.items {
        if i >= pref_emb.rows() {
            return Err(Error::IndexOutOfRange {
                index: i,
                dim: pref_emb.rows(),
            });
        }
        item_scores.push(dot(p, pref_emb.row(i)));
    }
    let mut edge_scores = Vec::new();
    if edges {
        let rows = set
            .items
            .iter()
            .map(|&i| cooc_row(i).ok_or(Error::IndexOutOfRange { index: i, dim: 0 }))
            .collect::<Result<Vec<_>>>()?;
        for x in 0..rows.len() {
            for y in x + 1..rows.len() {
                edge_scores.push(dot(rows[x], rows[y]));
            }
        }
    }
    let value = item_scores.iter().sum::<f64>() + edge_scores.iter().sum::<f64>();
    Ok(StructureWeight {
        value,
        item_scores,
        edge_scores,
    })
}

/// Kernel over one instance's structures, ordered previous, targets,
/// negatives.
#[derive(Clone, Debug)]
pub struct SdppKernel {
    pub l: SymMatrix,
    /// Position in `inst.structures()` of each kernel row.
    pub structures: Vec<usize>,
    pub a_idx: IndexSet,
    pub b_idx: IndexSet,
    pub z_idx: IndexSet,
    pub weights: Vec<StructureWeight>,
    /// Weights actually exponentiated (centered when enabled).
    pub effective: Vec<f64>,
    pub sims: SymMatrix,
}

/// `L_ab = exp(w_a) G_ab exp(w_b)`; returns the kernel and the exponentiated
/// weights.
pub fn kernel_from_weights(weights: &[f64], sims: &SymMatrix, center: bool) -> Result<(SymMatrix, Vec<f64>)> {
    let n = weights.len();
    if sims.dim() != n {
        return Err(Error::ShapeMismatch(format!("{n} weights for a {0}x{0} Gram matrix", sims.dim())));
    }
    let mean = if center { weights.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let eff: Vec<f64> = weights.iter().map(|w| w - mean).collect();
    let q: Vec<f64> = eff.iter().map(|w| w.exp()).collect();
    let l = Mat::from_fn(n, n, |a, b| q[a] * sims[(a, b)] * q[b]);
    Ok((SymMatrix::new(l)?, eff))
}

/// Items appearing in any structure of `inst`, sorted.
pub fn instance_candidates(inst: &TrainingInstance) -> Vec<ItemId> {
    let mut c: Vec<ItemId> = inst.structures().flat_map(|s| s.items.iter().copied()).collect();
    c.sort_unstable();
    c.dedup();
    c
}

/// The ground set holds distinct structures, so a set repeated within an
/// instance is one element: the first occurrence in previous, targets,
/// negatives order keeps it. Returns the kept positions in
/// `inst.structures()` and the A/B/Z partition over kernel rows.
pub fn ground_set(inst: &TrainingInstance) -> (Vec<usize>, IndexSet, IndexSet, IndexSet) {
    let mut seen: Vec<Vec<ItemId>> = Vec::new();
    let mut kept = Vec::new();
    let mut parts: [Vec<usize>; 3] = Default::default();
    let sizes = [inst.previous.len(), inst.targets.len(), inst.negatives.len()];
    let mut pos = 0;
    for (part, &n) in sizes.iter().enumerate() {
        for s in inst.structures().skip(pos).take(n) {
            let mut key = s.items.clone();
            key.sort_unstable();
            if !seen.contains(&key) {
                seen.push(key);
                parts[part].push(kept.len());
                kept.push(pos);
            }
            pos += 1;
        }
    }
    let [a, b, z] = parts;
    (kept, IndexSet::new(a), IndexSet::new(b), IndexSet::new(z))
}

fn check_instance(inst: &TrainingInstance) -> Result<()> {
    if inst.previous.is_empty() || inst.targets.is_empty() {
        return Err(Error::InvalidArgument("instance needs previous and target sets".into()));
    }
    Ok(())
}

/// Builds the instance kernel from a forward pass whose co-occurrence rows
/// cover every structure item.
pub fn assemble_from_reps(
    inst: &TrainingInstance,
    reps: &SeqReps,
    params: &ModelParams,
    f: &DiversityFactor,
    opts: ObjectiveOptions,
) -> Result<SdppKernel> {
    check_instance(inst)?;
    let (kept, a_idx, b_idx, z_idx) = ground_set(inst);
    let all: Vec<&TemporalSet> = inst.structures().collect();
    let structures: Vec<&TemporalSet> = kept.iter().map(|&k| all[k]).collect();
    let weights = structures
        .iter()
        .map(|s| structure_weight(s, &reps.p, &params.pref_emb, |i| reps.cooc_row(i), opts.edges))
        .collect::<Result<Vec<_>>>()?;
    let sims = similarity_gram(structures.iter().copied(), f)?;
    let values: Vec<f64> = weights.iter().map(|w| w.value).collect();
    let (l, effective) = kernel_from_weights(&values, &sims, opts.center)?;
    Ok(SdppKernel {
        l,
        structures: kept,
        a_idx,
        b_idx,
        z_idx,
        weights,
        effective,
        sims,
    })
}

/// Forward pass over the instance's previous sets, then kernel assembly.
/// Targets and negatives never enter the attention input.
pub fn assemble_kernel(
    inst: &TrainingInstance,
    params: &ModelParams,
    f: &DiversityFactor,
    opts: ObjectiveOptions,
) -> Result<(SdppKernel, SeqReps)> {
    check_instance(inst)?;
    let reps = encode(params, &inst.previous, Some(&instance_candidates(inst)))?;
    let kernel = assemble_from_reps(inst, &reps, params, f, opts)?;
    Ok((kernel, reps))
}

pub fn instance_loglik(
    inst: &TrainingInstance,
    params: &ModelParams,
    f: &DiversityFactor,
    opts: ObjectiveOptions,
) -> Result<f64> {
    let (k, _) = assemble_kernel(inst, params, f, opts)?;
    Ok(conditional_log_prob(&k.l, &k.a_idx, &k.b_idx)?.log_prob)
}

/// `∂ℒ/∂L = scatter((L_{A∪B})⁻¹) − (L + I_Ā)⁻¹`.
pub fn kernel_grad(dim: usize, factors: &ConditionalFactors) -> Mat {
    let mut g = factors.normalizer.inverse();
    g.scale(-1.0);
    let inv = factors.numerator.inverse();
    let u = factors.union.as_slice();
    for (x, &i) in u.iter().enumerate() {
        for (y, &j) in u.iter().enumerate() {
            g[(i, j)] += inv[(x, y)];
        }
    }
    debug_assert_eq!(g.rows(), dim);
    g
}

/// `∂ℒ/∂w_a` for the exponentiated weights: `2 Σ_b Γ_ab L_ab`.
pub fn effective_weight_grad(l: &SymMatrix, gamma: &Mat) -> Vec<f64> {
    (0..l.dim())
        .map(|a| 2.0 * (0..l.dim()).map(|b| gamma[(a, b)] * l[(a, b)]).sum::<f64>())
        .collect()
}

/// Pulls structure-weight partials back to `p` and the co-occurrence rows.
/// Item-score partials w.r.t. the preference embeddings go straight into
/// `grad`.
fn weight_backward(
    structures: &[&TemporalSet],
    dw: &[f64],
    reps: &SeqReps,
    params: &ModelParams,
    edges: bool,
    grad: &mut ModelParams,
) -> (Vec<f64>, Mat) {
    let d = params.config.dim;
    let mut dp = vec![0.0; d];
    let mut dcooc = Mat::zeros(reps.cooc.rows(), d);
    for (s, &g) in structures.iter().zip(dw) {
        for &i in &s.items {
            for (o, e) in dp.iter_mut().zip(params.pref_emb.row(i)) {
                *o += g * e;
            }
            for (o, pk) in grad.pref_emb.row_mut(i).iter_mut().zip(&reps.p) {
                *o += g * pk;
            }
        }
        if edges && s.len() > 1 {
            let rows: Vec<usize> = s.items.iter().map(|&i| reps.cooc_index(i).unwrap()).collect();
            let mut sum = vec![0.0; d];
            for &r in &rows {
                for (o, c) in sum.iter_mut().zip(reps.cooc.row(r)) {
                    *o += c;
                }
            }
            for &r in &rows {
                let own: Vec<f64> = reps.cooc.row(r).to_vec();
                for (k, o) in dcooc.row_mut(r).iter_mut().enumerate() {
                    *o += g * (sum[k] - own[k]);
                }
            }
        }
    }
    (dp, dcooc)
}

/// Log-likelihood and its gradient w.r.t. every model tensor. The diversity
/// factor is read-only and gets no gradient.
pub fn loglik_grad(
    inst: &TrainingInstance,
    params: &ModelParams,
    f: &DiversityFactor,
    opts: ObjectiveOptions,
) -> Result<(f64, ModelParams)> {
    let (k, reps) = assemble_kernel(inst, params, f, opts)?;
    let factors = conditional_log_prob(&k.l, &k.a_idx, &k.b_idx)?;
    let gamma = kernel_grad(k.l.dim(), &factors);
    let mut dw = effective_weight_grad(&k.l, &gamma);
    if opts.center {
        let mean = dw.iter().sum::<f64>() / dw.len() as f64;
        dw.iter_mut().for_each(|g| *g -= mean);
    }
    let mut grad = params.zeros_like();
    let all: Vec<&TemporalSet> = inst.structures().collect();
    let structures: Vec<&TemporalSet> = k.structures.iter().map(|&i| all[i]).collect();
    let (dp, dcooc) = weight_backward(&structures, &dw, &reps, params, opts.edges, &mut grad);
    reps.backward(params, &dp, &dcooc, &mut grad);
    Ok((factors.log_prob, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    pub h: f64,
    /// Coordinates probed, spread over all tensors.
    pub coords: usize,
    /// Denominator floor in the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            h: 1e-5,
            coords: 200,
            floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// `tensor[index]` of the worst coordinate.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub probed: usize,
}

/// Picks probe coordinates: per tensor, half from entries with a nonzero
/// analytic gradient and the rest uniformly, all from a seeded RNG.
fn probe_coords(grad: &ModelParams, cfg: &FdConfig) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tensors = grad.tensors();
    let per = cfg.coords.div_ceil(tensors.len()).max(1);
    let mut out = Vec::new();
    for (t, g) in tensors.iter().enumerate() {
        let len = g.as_slice().len();
        let nonzero: Vec<usize> = (0..len).filter(|&k| g.as_slice()[k] != 0.0).collect();
        let mut chosen: Vec<usize> = Vec::new();
        let take = (per / 2).min(nonzero.len());
        chosen.extend(index::sample(&mut rng, nonzero.len(), take).into_iter().map(|k| nonzero[k]));
        let rest = (per - take).min(len);
        chosen.extend(index::sample(&mut rng, len, rest));
        chosen.sort_unstable();
        chosen.dedup();
        out.extend(chosen.into_iter().map(|k| (t, k)));
    }
    out
}

/// Compares `grad` against central differences of `loss`. Relative error is
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn finite_diff_check_with(
    params: &ModelParams,
    grad: &ModelParams,
    cfg: &FdConfig,
    loss: impl Fn(&ModelParams) -> Result<f64>,
) -> Result<FdReport> {
    if !(cfg.h > 0.0) || !cfg.h.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {}", cfg.h)));
    }
    let names = params.names();
    let coords = probe_coords(grad, cfg);
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        probed: coords.len(),
    };
    let mut probe = params.clone();
    for &(t, k) in &coords {
        let orig = probe.tensors()[t].as_slice()[k];
        probe.tensors_mut()[t].as_mut_slice()[k] = orig + cfg.h;
        let plus = loss(&probe)?;
        probe.tensors_mut()[t].as_mut_slice()[k] = orig - cfg.h;
        let minus = loss(&probe)?;
        probe.tensors_mut()[t].as_mut_slice()[k] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.h);
        let analytic = grad.tensors()[t].as_slice()[k];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = format!("{}[{k}]", names[t]);
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// Finite-difference probe of [`loglik_grad`] on one instance.
pub fn finite_diff_check(
    inst: &TrainingInstance,
    params: &ModelParams,
    f: &DiversityFactor,
    opts: ObjectiveOptions,
    cfg: &FdConfig,
) -> Result<FdReport> {
    let (_, grad) = loglik_grad(inst, params, f, opts)?;
    finite_diff_check_with(params, &grad, cfg, |p| instance_loglik(inst, p, f, opts))
}
