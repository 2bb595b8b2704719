use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::attention::{AttnSpec, AttnWeights};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::optim::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_items: usize,
    pub dim: usize,
    pub heads: usize,
    /// Trainable queries used to summarize each set.
    pub set_queries: usize,
    /// Number of set positions with a learned embedding (the context window).
    pub max_sets: usize,
    /// Add each self-attention layer's input to its output.
    #[serde(default = "residual_default")]
    pub residual: bool,
}

fn residual_default() -> bool {
    true
}

impl ModelConfig {
    pub fn new(n_items: usize, max_sets: usize) -> Self {
        ModelConfig {
            n_items,
            dim: 64,
            heads: 4,
            set_queries: 4,
            max_sets,
            residual: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.dim == 0 || self.max_sets == 0 || self.set_queries == 0 {
            return Err(Error::InvalidArgument("model sizes must be positive".into()));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "{} heads do not divide dimension {}",
                self.heads, self.dim
            )));
        }
        Ok(())
    }

    pub fn multi_head(&self) -> AttnSpec {
        AttnSpec {
            heads: self.heads,
            scaled: true,
        }
    }

    /// Item-oriented attention: one head, raw dot-product scores.
    pub fn item_oriented(&self) -> AttnSpec {
        AttnSpec {
            heads: 1,
            scaled: false,
        }
    }
}

/// Every trainable tensor. Embedding tables are `|V| x d` (one row per item).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub pref_emb: Mat,
    pub cooc_emb: Mat,
    /// `max_sets x d`, indexed by set position within the context window.
    pub pos_emb: Mat,
    pub item_attn: AttnWeights,
    pub set_queries: Mat,
    pub pool_attn: AttnWeights,
    pub set_attn: AttnWeights,
    /// `2d x d` gate over `[h_item; h_set]`.
    pub gate_w: Mat,
    pub gate_b: Mat,
    pub cooc_attn: AttnWeights,
    pub io_attn: AttnWeights,
}

impl ModelParams {
    /// Everything from `N(0, 1/d)`, so stacked projections roughly preserve
    /// activation scale.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::init_scaled(config, seed, 1.0 / (config.dim as f64).sqrt())
    }

    /// Like [`ModelParams::init`] with a custom standard deviation for the
    /// projection and gate matrices.
    pub fn init_scaled(config: ModelConfig, seed: u64, weight_std: f64) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = Normal::new(0.0, 1.0 / (d as f64).sqrt()).unwrap();
        let wt = Normal::new(0.0, weight_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut draw = |rows: usize, cols: usize, dist: &Normal<f64>| Mat::from_fn(rows, cols, |_, _| dist.sample(&mut rng));
        let pref_emb = draw(config.n_items, d, &emb);
        let cooc_emb = draw(config.n_items, d, &emb);
        let pos_emb = draw(config.max_sets, d, &emb);
        let set_queries = draw(config.set_queries, d, &emb);
        let mut attn = |wo: bool| AttnWeights {
            wq: draw(d, d, &wt),
            wk: draw(d, d, &wt),
            wv: draw(d, d, &wt),
            wo: wo.then(|| draw(d, d, &wt)),
        };
        let item_attn = attn(true);
        let pool_attn = attn(false);
        let set_attn = attn(true);
        let cooc_attn = attn(true);
        let io_attn = attn(false);
        let gate_w = draw(2 * d, d, &wt);
        Ok(ModelParams {
            config,
            pref_emb,
            cooc_emb,
            pos_emb,
            item_attn,
            set_queries,
            pool_attn,
            set_attn,
            gate_w,
            gate_b: Mat::zeros(1, d),
            cooc_attn,
            io_attn,
        })
    }

    pub fn zeros_like(&self) -> ModelParams {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Tensor names, parallel to [`ParamSet::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let attn = |prefix: &str, w: &AttnWeights, out: &mut Vec<String>| {
            for p in ["wq", "wk", "wv"] {
                out.push(format!("{prefix}.{p}"));
            }
            if w.wo.is_some() {
                out.push(format!("{prefix}.wo"));
            }
        };
        out.extend(["pref_emb", "cooc_emb", "pos_emb"].map(String::from));
        attn("item_attn", &self.item_attn, &mut out);
        out.push("set_queries".into());
        attn("pool_attn", &self.pool_attn, &mut out);
        attn("set_attn", &self.set_attn, &mut out);
        out.extend(["gate_w", "gate_b"].map(String::from));
        attn("cooc_attn", &self.cooc_attn, &mut out);
        attn("io_attn", &self.io_attn, &mut out);
        out
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<&Mat> {
        let mut v = vec![&self.pref_emb, &self.cooc_emb, &self.pos_emb];
        v.extend(self.item_attn.tensors());
        v.push(&self.set_queries);
        v.extend(self.pool_attn.tensors());
        v.extend(self.set_attn.tensors());
        v.push(&self.gate_w);
        v.push(&self.gate_b);
        v.extend(self.cooc_attn.tensors());
        v.extend(self.io_attn.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut v = vec![&mut self.pref_emb, &mut self.cooc_emb, &mut self.pos_emb];
        v.extend(self.item_attn.tensors_mut());
        v.push(&mut self.set_queries);
        v.extend(self.pool_attn.tensors_mut());
        v.extend(self.set_attn.tensors_mut());
        v.push(&mut self.gate_w);
        v.push(&mut self.gate_b);
        v.extend(self.cooc_attn.tensors_mut());
        v.extend(self.io_attn.tensors_mut());
        v
    }
}
