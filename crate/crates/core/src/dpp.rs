//! L-ensemble probabilities: unnormalized subset weights, the conditional
//! probability of growing a subset `A` into `A ∪ B`, and an exhaustive
//! enumeration oracle for small ground sets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{det_lu, Cholesky, IndexSet, SymMatrix};

/// Largest ground set [`enumerate_conditional_oracle`] will walk (2^20 subsets).
pub const ORACLE_MAX_DIM: usize = 20;

/// `det(L_Y)`; the empty subset has weight 1.
pub fn dpp_unnormalized_prob(l: &SymMatrix, y: &IndexSet) -> Result<f64> {
    y.check(l.dim())?;
    Ok(det_lu(l.principal(y).as_mat()))
}

/// Diagonal of `I_Ā`: 1 for every element outside `a`, 0 inside.
pub fn complement_indicator(dim: usize, a: &IndexSet) -> Vec<f64> {
    (0..dim)
        .map(|i| if a.contains(i) { 0.0 } else { 1.0 })
        .collect()
}

/// Factorizations behind one conditional log-probability, kept so gradient
/// code can reuse them.
#[derive(Clone, Debug)]
pub struct ConditionalFactors {
    pub log_prob: f64,
    /// Cholesky of `L_{A∪B}`.
    pub numerator: Cholesky,
    /// Cholesky of `L + I_Ā`.
    pub normalizer: Cholesky,
    pub union: IndexSet,
}

/// `log det(L_{A∪B}) - log det(L + I_Ā)`, both sides factored in log space.
pub fn conditional_log_prob(l: &SymMatrix, a: &IndexSet, b: &IndexSet) -> Result<ConditionalFactors> {
    a.check(l.dim())?;
    b.check(l.dim())?;
    a.check_disjoint(b)?;
    let union = a.union(b);
    let numerator = Cholesky::factor(&l.principal(&union))?;
    let normalizer = Cholesky::factor(&l.add_diag(&complement_indicator(l.dim(), a)))?;
    Ok(ConditionalFactors {
        log_prob: numerator.logdet() - normalizer.logdet(),
        numerator,
        normalizer,
        union,
    })
}

/// `P(Y = A ∪ B | A ⊆ Y) = det(L_{A∪B}) / det(L + I_Ā)`.
pub fn conditional_sdpp_prob(l: &SymMatrix, a: &IndexSet, b: &IndexSet) -> Result<f64> {
    Ok(conditional_log_prob(l, a, b)?.log_prob.exp())
}

/// Exact conditional distribution over every superset of `a`, by walking all
/// `2^(n - |a|)` completions and normalizing `det(L_Y)` with LU determinants.
pub fn enumerate_conditional_oracle(l: &SymMatrix, a: &IndexSet) -> Result<BTreeMap<IndexSet, f64>> {
    let n = l.dim();
    if n > ORACLE_MAX_DIM {
        return Err(Error::TooLarge {
            dim: n,
            max: ORACLE_MAX_DIM,
        });
    }
    a.check(n)?;
    let a_mask: u64 = a.as_slice().iter().map(|i| 1u64 << i).sum();
    let mut weights = BTreeMap::new();
    let mut total = 0.0;
    for mask in 0..(1u64 << n) {
        if mask & a_mask != a_mask {
            continue;
        }
        let y = IndexSet::from_mask(mask, n);
        let w = det_lu(l.principal(&y).as_mat());
        total += w;
        weights.insert(y, w);
    }
    for w in weights.values_mut() {
        *w /= total;
    }
    Ok(weights)
}
