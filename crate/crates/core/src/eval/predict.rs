use serde::{Deserialize, Serialize};

use crate::data::{ItemId, TemporalSet};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::{encode, ModelParams};

/// Per-item preference and mean-cohesion scores for one context.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreParts {
    /// `p · e^P_i`
    pub preference: Vec<f64>,
    /// `c_i · c̄`, with `c̄` the mean co-occurrence row over the catalog.
    pub cohesion: Vec<f64>,
}

impl ScoreParts {
    pub fn compute(params: &ModelParams, context: &[TemporalSet]) -> Result<Self> {
        let reps = encode(params, context, None)?;
        let preference = (0..params.config.n_items)
            .map(|i| dot(&reps.p, params.pref_emb.row(i)))
            .collect();
        let c_bar = reps.cooc.mean_rows();
        let cohesion = (0..params.config.n_items)
            .map(|i| dot(reps.cooc.row(i), &c_bar))
            .collect();
        Ok(ScoreParts { preference, cohesion })
    }

    /// `(1 − λ) s_pref + λ s_coh`.
    pub fn blend(&self, lambda: f64) -> Result<Vec<f64>> {
        check_lambda(lambda)?;
        Ok(self
            .preference
            .iter()
            .zip(&self.cohesion)
            .map(|(s0, s1)| (1.0 - lambda) * s0 + lambda * s1)
            .collect())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must lie in [0, 1], got {lambda}")))
    }
}

/// Blended next-set score of every catalog item.
pub fn predict_scores(params: &ModelParams, context: &[TemporalSet], lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    ScoreParts::compute(params, context)?.blend(lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub items: Vec<ItemId>,
    pub scores: Vec<f64>,
}

impl Ranking {
    /// Descending by score, ties by ascending item id. NaN scores sort last.
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut items: Vec<ItemId> = (0..scores.len()).collect();
        items.sort_by(|&a, &b| {
            let (sa, sb) = (scores[a], scores[b]);
            match (sa.is_nan(), sb.is_nan()) {
                (true, false) => std::cmp::Ordering::Greater,
                (false, true) => std::cmp::Ordering::Less,
                _ => sb.partial_cmp(&sa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)),
            }
        });
        let scores = items.iter().map(|&i| scores[i]).collect();
        Ranking { items, scores }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn top(&self, n: usize) -> &[ItemId] {
        &self.items[..n.min(self.items.len())]
    }
}
