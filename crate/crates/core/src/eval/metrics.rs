use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predict::{Ranking, ScoreParts};
use crate::data::{CategoryId, ItemId, TemporalSet, UserId, UserSplit};
use crate::diversity::DiversityFactor;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::ModelParams;

/// Item distance used by ILD.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IldDistance {
    /// 1 when categories differ, 0 otherwise.
    #[default]
    Category,
    /// `(1 − cos) / 2` between diversity-factor rows, so it stays in `[0, 1]`.
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopN {
    pub recall: f64,
    pub ndcg: f64,
    pub cc: f64,
    pub ild: f64,
    pub f1: f64,
}

/// Catalog side information the diversity metrics need.
#[derive(Clone, Copy, Debug)]
pub struct MetricContext<'a> {
    pub categories: &'a [CategoryId],
    pub n_categories: usize,
    pub distance: IldDistance,
    pub factor: Option<&'a DiversityFactor>,
}

/// `2QD / (Q + D)`, zero when both are zero.
pub fn f1(q: f64, d: f64) -> f64 {
    if q + d == 0.0 {
        0.0
    } else {
        2.0 * q * d / (q + d)
    }
}

pub fn recall_at(top: &[ItemId], target: &TemporalSet) -> f64 {
    if target.is_empty() {
        return 0.0;
    }
    top.iter().filter(|i| target.contains(**i)).count() as f64 / target.len() as f64
}

/// Binary gains, `log2(rank + 1)` discounts, ideal DCG over
/// `min(n, |target|)` hits.
pub fn ndcg_at(top: &[ItemId], target: &TemporalSet, n: usize) -> f64 {
    let dcg: f64 = top
        .iter()
        .enumerate()
        .filter(|(_, i)| target.contains(**i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..n.min(target.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

pub fn coverage_at(top: &[ItemId], categories: &[CategoryId], n_categories: usize) -> f64 {
    if n_categories == 0 {
        return 0.0;
    }
    let mut seen = vec![false; n_categories];
    for &i in top {
        seen[categories[i]] = true;
    }
    seen.iter().filter(|s| **s).count() as f64 / n_categories as f64
}

/// Mean distance over unordered pairs; a single item has ILD 0.
pub fn ild_at(top: &[ItemId], ctx: &MetricContext) -> Result<f64> {
    if top.len() < 2 {
        return Ok(0.0);
    }
    let dist = |a: ItemId, b: ItemId| -> Result<f64> {
        match ctx.distance {
            IldDistance::Category => Ok((ctx.categories[a] != ctx.categories[b]) as u8 as f64),
            IldDistance::Cosine => {
                let f = ctx
                    .factor
                    .ok_or_else(|| Error::InvalidArgument("cosine ILD needs a diversity factor".into()))?;
                let (ra, rb) = (f.row(a), f.row(b));
                let denom = (dot(ra, ra) * dot(rb, rb)).sqrt();
                let cos = if denom > 0.0 { dot(ra, rb) / denom } else { 0.0 };
                Ok(((1.0 - cos) / 2.0).clamp(0.0, 1.0))
            }
        }
    };
    let mut total = 0.0;
    let mut pairs = 0usize;
    for x in 0..top.len() {
        for y in x + 1..top.len() {
            total += dist(top[x], top[y])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Accuracy and diversity of the top `n` of `rank` against `target`.
pub fn evaluate_topn(rank: &Ranking, target: &TemporalSet, ctx: &MetricContext, n: usize) -> Result<TopN> {
    if n > rank.len() {
        return Err(Error::NTooLarge { n, len: rank.len() });
    }
    let top = rank.top(n);
    let recall = recall_at(top, target);
    let ndcg = ndcg_at(top, target, n);
    let cc = coverage_at(top, ctx.categories, ctx.n_categories);
    let ild = ild_at(top, ctx)?;
    let q = 0.5 * (recall + ndcg);
    let d = 0.5 * (cc + ild);
    Ok(TopN {
        recall,
        ndcg,
        cc,
        ild,
        f1: f1(q, d),
    })
}

/// Which held-out set of each user to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Holdout {
    Validation,
    Test,
}

fn context_and_target(split: &UserSplit, which: Holdout) -> (Vec<TemporalSet>, &TemporalSet) {
    match which {
        Holdout::Validation => (split.val_context().to_vec(), &split.val),
        Holdout::Test => (split.test_context(), &split.test),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub lambda: f64,
    pub ns: Vec<usize>,
    /// Per user (ascending id), one entry per cutoff.
    pub per_user: Vec<(UserId, Vec<TopN>)>,
    /// Macro average over users, one entry per cutoff.
    pub mean: Vec<TopN>,
}

impl MetricsReport {
    fn from_rows(lambda: f64, ns: &[usize], per_user: Vec<(UserId, Vec<TopN>)>) -> Self {
        let mut mean = vec![TopN::default(); ns.len()];
        for (_, rows) in &per_user {
            for (m, r) in mean.iter_mut().zip(rows) {
                m.recall += r.recall;
                m.ndcg += r.ndcg;
                m.cc += r.cc;
                m.ild += r.ild;
                m.f1 += r.f1;
            }
        }
        let k = per_user.len().max(1) as f64;
        for m in &mut mean {
            m.recall /= k;
            m.ndcg /= k;
            m.cc /= k;
            m.ild /= k;
            m.f1 /= k;
        }
        MetricsReport {
            lambda,
            ns: ns.to_vec(),
            per_user,
            mean,
        }
    }

    pub fn at(&self, n: usize) -> Option<&TopN> {
        self.ns.iter().position(|&x| x == n).map(|k| &self.mean[k])
    }
}

/// Scores every user's held-out set, once per λ. Score parts are computed
/// once per user and reused across the sweep.
pub fn evaluate_users(
    params: &ModelParams,
    splits: &[UserSplit],
    which: Holdout,
    lambdas: &[f64],
    ns: &[usize],
    ctx: &MetricContext,
) -> Result<Vec<MetricsReport>> {
    let mut order: Vec<&UserSplit> = splits.iter().collect();
    order.sort_by_key(|s| s.user);
    let rows: Vec<(UserId, Vec<Vec<TopN>>)> = order
        .par_iter()
        .map(|split| {
            let (context, target) = context_and_target(split, which);
            let parts = ScoreParts::compute(params, &context)?;
            let per_lambda = lambdas
                .iter()
                .map(|&lam| {
                    let rank = Ranking::from_scores(&parts.blend(lam)?);
                    ns.iter()
                        .map(|&n| evaluate_topn(&rank, target, ctx, n))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((split.user, per_lambda))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(k, &lam)| {
            let per_user = rows.iter().map(|(u, r)| (*u, r[k].clone())).collect();
            MetricsReport::from_rows(lam, ns, per_user)
        })
        .collect())
}

fn header(ns: &[usize]) -> Vec<String> {
    ns.iter()
        .flat_map(|n| ["recall", "ndcg", "cc", "ild", "f1"].map(|m| format!("{m}@{n}")))
        .collect()
}

fn cells(rows: &[TopN]) -> Vec<String> {
    rows.iter()
        .flat_map(|r| [r.recall, r.ndcg, r.cc, r.ild, r.f1].map(|v| format!("{v:.6}")))
        .collect()
}

/// One row per λ: `lambda,recall@N,ndcg@N,cc@N,ild@N,f1@N,...`.
pub fn write_metrics_csv(reports: &[MetricsReport], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let ns = reports.first().map(|r| r.ns.clone()).unwrap_or_default();
    let mut h = vec!["lambda".to_string()];
    h.extend(header(&ns));
    out.write_record(&h).map_err(|e| Error::Format(e.to_string()))?;
    for r in reports {
        let mut row = vec![format!("{:.4}", r.lambda)];
        row.extend(cells(&r.mean));
        out.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

/// One row per (λ, user): `lambda,user,recall@N,...`.
pub fn write_per_user_csv(reports: &[MetricsReport], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let ns = reports.first().map(|r| r.ns.clone()).unwrap_or_default();
    let mut h = vec!["lambda".to_string(), "user".to_string()];
    h.extend(header(&ns));
    out.write_record(&h).map_err(|e| Error::Format(e.to_string()))?;
    for r in reports {
        for (user, rows) in &r.per_user {
            let mut row = vec![format!("{:.4}", r.lambda), user.to_string()];
            row.extend(cells(rows));
            out.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Plain-text table of the macro averages.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&format!("lambda = {:.2}\n", r.lambda));
        s.push_str("     N   Recall     NDCG       CC      ILD       F1\n");
        for (n, m) in r.ns.iter().zip(&r.mean) {
            s.push_str(&format!(
                "{n:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
                m.recall, m.ndcg, m.cc, m.ild, m.f1
            ));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(cats: &[usize], n_categories: usize) -> MetricContext<'_> {
        MetricContext {
            categories: cats,
            n_categories,
            distance: IldDistance::Category,
            factor: None,
        }
    }

    #[test]
    fn worked_example() {
        // rank [a, b, c] = [0, 1, 2], target {a, c}
        let rank = Ranking::from_scores(&[3.0, 2.0, 1.0]);
        let target = TemporalSet::new([0, 2], 0);
        let cats = [0, 1, 2];
        let m = evaluate_topn(&rank, &target, &ctx(&cats, 3), 2).unwrap();
        assert_eq!(m.recall, 0.5);
        let want = 1.0 / (1.0 + 1.0 / 3f64.log2());
        assert!((m.ndcg - want).abs() < 1e-12);
        assert!((m.ndcg - 0.6131).abs() < 1e-4);
        assert!((f1(0.2, 0.3) - 0.24).abs() < 1e-12);
    }

    #[test]
    fn cutoff_too_large() {
        let rank = Ranking::from_scores(&[1.0, 0.0]);
        let cats = [0, 0];
        assert!(matches!(
            evaluate_topn(&rank, &TemporalSet::new([0], 0), &ctx(&cats, 1), 3),
            Err(Error::NTooLarge { n: 3, len: 2 })
        ));
    }

    #[test]
    fn perfect_ranking_has_unit_ndcg() {
        let rank = Ranking::from_scores(&[5.0, 4.0, 3.0, 0.0, 0.0]);
        let target = TemporalSet::new([0, 1, 2], 0);
        let cats = [0; 5];
        let m = evaluate_topn(&rank, &target, &ctx(&cats, 1), 4).unwrap();
        assert!((m.ndcg - 1.0).abs() < 1e-15);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn ild_extremes() {
        let same = [0, 0, 0, 0];
        let distinct = [0, 1, 2, 3];
        assert_eq!(ild_at(&[0, 1, 2, 3], &ctx(&same, 4)).unwrap(), 0.0);
        assert_eq!(ild_at(&[0, 1, 2, 3], &ctx(&distinct, 4)).unwrap(), 1.0);
        assert_eq!(ild_at(&[2], &ctx(&distinct, 4)).unwrap(), 0.0);
        assert_eq!(coverage_at(&[0, 1], &distinct, 4), 0.5);
    }

    #[test]
    fn cosine_ild_needs_factor_and_stays_in_unit_interval() {
        let cats = [0, 1, 2];
        let mut c = ctx(&cats, 3);
        c.distance = IldDistance::Cosine;
        assert!(ild_at(&[0, 1], &c).is_err());
        let f = DiversityFactor::random(3, 4, 1e-3, 0);
        c.factor = Some(&f);
        let v = ild_at(&[0, 1, 2], &c).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn f1_of_zeros() {
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn csv_has_both_cutoffs() {
        let report = MetricsReport::from_rows(0.2, &[20, 50], vec![(1, vec![TopN::default(); 2])]);
        let mut buf = Vec::new();
        write_metrics_csv(&[report], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let head = text.lines().next().unwrap();
        assert!(head.contains("recall@20") && head.contains("f1@50"));
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(
            scores in prop::collection::vec(-5.0f64..5.0, 12),
            target in prop::collection::btree_set(0usize..12, 1..6),
            n in 1usize..12,
        ) {
            let cats: Vec<usize> = (0..12).map(|i| i % 4).collect();
            let rank = Ranking::from_scores(&scores);
            let t = TemporalSet::new(target, 0);
            let m = evaluate_topn(&rank, &t, &ctx(&cats, 4), n).unwrap();
            for v in [m.recall, m.ndcg, m.cc, m.ild, m.f1] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }
    }
}
