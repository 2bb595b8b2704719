//! Preference and co-occurrence towers over a window of previous sets.
//!
//! Preference: item-level self-attention (with set-position embeddings) and
//! set-level attention (query pooling inside each set, then self-attention
//! across sets), mean-pooled and merged by a sigmoid gate into `p`.
//!
//! Co-occurrence: self-attention over the window's co-occurrence embeddings
//! gives `H^C`; each candidate's embedding then attends over `H^C` to give
//! its row of `C`.

use super::attention::AttnCache;
use super::params::ModelParams;
use crate::data::{ItemId, TemporalSet};
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};

#[derive(Clone, Debug)]
struct SetCache {
    items: Vec<ItemId>,
    pool: AttnCache,
}

#[derive(Clone, Debug)]
struct Cache {
    items: Vec<ItemId>,
    /// Position-embedding row for each flattened item.
    item_pos: Vec<usize>,
    item_attn: AttnCache,
    sets: Vec<SetCache>,
    set_attn: AttnCache,
    h_item: Vec<f64>,
    h_set: Vec<f64>,
    gate: Vec<f64>,
    cooc_attn: AttnCache,
    io_attn: AttnCache,
}

/// Sequence-conditioned representations for one context window.
#[derive(Clone, Debug)]
pub struct SeqReps {
    /// Fused preference vector `p`.
    pub p: Vec<f64>,
    /// Candidate ids, parallel to the rows of `cooc`.
    pub candidates: Vec<ItemId>,
    /// One co-occurrence representation per candidate.
    pub cooc: Mat,
    /// Hidden co-occurrence states `H^C`, one row per window item.
    pub h_c: Mat,
    cache: Cache,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `p = g ⊙ h_item + (1 − g) ⊙ h_set`, `g = σ([h_item; h_set] W_g + b_g)`.
/// Returns `(p, g)`.
pub fn fuse_preference(h_item: &[f64], h_set: &[f64], gate_w: &Mat, gate_b: &Mat) -> (Vec<f64>, Vec<f64>) {
    let d = h_item.len();
    let mut z = gate_b.row(0).to_vec();
    for (k, &x) in h_item.iter().chain(h_set).enumerate() {
        for (zj, w) in z.iter_mut().zip(gate_w.row(k)) {
            *zj += x * w;
        }
    }
    let g: Vec<f64> = z.into_iter().map(sigmoid).collect();
    let p = (0..d).map(|j| g[j] * h_item[j] + (1.0 - g[j]) * h_set[j]).collect();
    (p, g)
}

/// `ŷ^P_i = p · e^P_i`.
pub fn preference_score(p: &[f64], item: ItemId, params: &ModelParams) -> Result<f64> {
    if item >= params.config.n_items {
        return Err(Error::IndexOutOfRange {
            index: item,
            dim: params.config.n_items,
        });
    }
    Ok(dot(p, params.pref_emb.row(item)))
}

/// `ŷ^C_αβ = c_α · c_β`.
pub fn cohesion_score(ca: &[f64], cb: &[f64]) -> f64 {
    dot(ca, cb)
}

/// The last `max_sets` sets of `context`.
pub fn window(context: &[TemporalSet], max_sets: usize) -> &[TemporalSet] {
    &context[context.len().saturating_sub(max_sets)..]
}

fn mean_rows_backward(rows: usize, dmean: &[f64]) -> Mat {
    let s = 1.0 / rows as f64;
    Mat::from_fn(rows, dmean.len(), |_, j| dmean[j] * s)
}

/// Runs both towers over the trailing window of `context`. `candidates`
/// selects which items get a co-occurrence row (sorted and deduplicated);
/// `None` means the whole catalog.
pub fn encode(params: &ModelParams, context: &[TemporalSet], candidates: Option<&[ItemId]>) -> Result<SeqReps> {
    let cfg = &params.config;
    let win = window(context, cfg.max_sets);
    if win.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptySequence);
    }
    let mut items = Vec::new();
    let mut item_pos = Vec::new();
    let offset = cfg.max_sets - win.len();
    for (j, s) in win.iter().enumerate() {
        for &i in &s.items {
            if i >= cfg.n_items {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    dim: cfg.n_items,
                });
            }
            items.push(i);
            item_pos.push(offset + j);
        }
    }
    let candidates: Vec<ItemId> = match candidates {
        Some(c) => {
            if let Some(&bad) = c.iter().find(|&&i| i >= cfg.n_items) {
                return Err(Error::IndexOutOfRange {
                    index: bad,
                    dim: cfg.n_items,
                });
            }
            let mut c = c.to_vec();
            c.sort_unstable();
            c.dedup();
            c
        }
        None => (0..cfg.n_items).collect(),
    };
    let mh = cfg.multi_head();

    // item level
    let mut x = params.pref_emb.gather_rows(&items);
    x.add_assign(&params.pos_emb.gather_rows(&item_pos));
    let (mut y, item_attn) = params.item_attn.forward(mh, &x, &x);
    if cfg.residual {
        y.add_assign(&x);
    }
    let h_item = y.mean_rows();

    // set level; empty sets contribute nothing
    let mut sets = Vec::new();
    let mut set_rows = Vec::new();
    for s in win.iter().filter(|s| !s.is_empty()) {
        let e = params.pref_emb.gather_rows(&s.items);
        let (z, pool) = params.pool_attn.forward(mh, &params.set_queries, &e);
        set_rows.push(z.mean_rows());
        sets.push(SetCache {
            items: s.items.clone(),
            pool,
        });
    }
    let set_mat = Mat::from_rows(&set_rows);
    let (mut u, set_attn) = params.set_attn.forward(mh, &set_mat, &set_mat);
    if cfg.residual {
        u.add_assign(&set_mat);
    }
    let h_set = u.mean_rows();

    let (p, gate) = fuse_preference(&h_item, &h_set, &params.gate_w, &params.gate_b);

    // co-occurrence
    let xc = params.cooc_emb.gather_rows(&items);
    let (mut h_c, cooc_attn) = params.cooc_attn.forward(mh, &xc, &xc);
    if cfg.residual {
        h_c.add_assign(&xc);
    }
    let eq = params.cooc_emb.gather_rows(&candidates);
    let (cooc, io_attn) = params.io_attn.forward(cfg.item_oriented(), &eq, &h_c);

    Ok(SeqReps {
        p,
        candidates,
        cooc,
        h_c,
        cache: Cache {
            items,
            item_pos,
            item_attn,
            sets,
            set_attn,
            h_item,
            h_set,
            gate,
            cooc_attn,
            io_attn,
        },
    })
}

impl SeqReps {
    pub fn h_item(&self) -> &[f64] {
        &self.cache.h_item
    }

    pub fn h_set(&self) -> &[f64] {
        &self.cache.h_set
    }

    /// Co-occurrence row of `item`, if it was a candidate.
    pub fn cooc_row(&self, item: ItemId) -> Option<&[f64]> {
        self.candidates.binary_search(&item).ok().map(|r| self.cooc.row(r))
    }

    /// Row index of `item` in `cooc`.
    pub fn cooc_index(&self, item: ItemId) -> Option<usize> {
        self.candidates.binary_search(&item).ok()
    }

    /// Item-oriented attention weights, one row per candidate over the
    /// window positions.
    pub fn item_oriented_probs(&self) -> &Mat {
        &self.cache.io_attn.probs()[0]
    }

    /// Accumulates into `grad` the gradient of a loss whose partials are
    /// `dp` w.r.t. `p` and `dcooc` w.r.t. `cooc`.
    pub fn backward(&self, params: &ModelParams, dp: &[f64], dcooc: &Mat, grad: &mut ModelParams) {
        let cfg = &params.config;
        let d = cfg.dim;
        let mh = cfg.multi_head();
        let c = &self.cache;

        // gate
        let mut dh_item = vec![0.0; d];
        let mut dh_set = vec![0.0; d];
        let mut dz = vec![0.0; d];
        for j in 0..d {
            let g = c.gate[j];
            dh_item[j] = dp[j] * g;
            dh_set[j] = dp[j] * (1.0 - g);
            dz[j] = dp[j] * (c.h_item[j] - c.h_set[j]) * g * (1.0 - g);
        }
        for (k, &x) in c.h_item.iter().chain(&c.h_set).enumerate() {
            for (gw, dzj) in grad.gate_w.row_mut(k).iter_mut().zip(&dz) {
                *gw += x * dzj;
            }
            let back = dot(params.gate_w.row(k), &dz);
            if k < d {
                dh_item[k] += back;
            } else {
                dh_set[k - d] += back;
            }
        }
        for (b, dzj) in grad.gate_b.row_mut(0).iter_mut().zip(&dz) {
            *b += dzj;
        }

        // item level
        let dy = mean_rows_backward(c.items.len(), &dh_item);
        let (dxq, dxkv) = params.item_attn.backward(mh, &mut grad.item_attn, &c.item_attn, &dy);
        let mut dx = dxq;
        dx.add_assign(&dxkv);
        if cfg.residual {
            dx.add_assign(&dy);
        }
        grad.pref_emb.scatter_add_rows(&c.items, &dx);
        grad.pos_emb.scatter_add_rows(&c.item_pos, &dx);

        // set level
        let du = mean_rows_backward(c.sets.len(), &dh_set);
        let (dsq, dskv) = params.set_attn.backward(mh, &mut grad.set_attn, &c.set_attn, &du);
        for (j, s) in c.sets.iter().enumerate() {
            let skip = if cfg.residual { 1.0 } else { 0.0 };
            let ds: Vec<f64> = (0..d).map(|k| dsq[(j, k)] + dskv[(j, k)] + skip * du[(j, k)]).collect();
            let dzj = mean_rows_backward(cfg.set_queries, &ds);
            let (dq, de) = params.pool_attn.backward(mh, &mut grad.pool_attn, &s.pool, &dzj);
            grad.set_queries.add_assign(&dq);
            grad.pref_emb.scatter_add_rows(&s.items, &de);
        }

        // co-occurrence
        let (deq, dh) = params
            .io_attn
            .backward(cfg.item_oriented(), &mut grad.io_attn, &c.io_attn, dcooc);
        grad.cooc_emb.scatter_add_rows(&self.candidates, &deq);
        let (dxq, dxkv) = params.cooc_attn.backward(mh, &mut grad.cooc_attn, &c.cooc_attn, &dh);
        let mut dxc = dxq;
        dxc.add_assign(&dxkv);
        if cfg.residual {
            dxc.add_assign(&dh);
        }
        grad.cooc_emb.scatter_add_rows(&c.items, &dxc);
    }
}
