//! Scaled dot-product multi-head attention with a hand-written backward pass.
//!
//! Row-vector convention throughout: an input block is `n x d`, projections
//! are `d x d` and applied as `X W`.

use serde::{Deserialize, Serialize};

use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttnSpec {
    pub heads: usize,
    /// Divide scores by `sqrt(head_dim)`.
    pub scaled: bool,
}

/// Query/key/value projections and an optional output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnWeights {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Option<Mat>,
}

/// Activations kept from the forward pass.
#[derive(Clone, Debug)]
pub struct AttnCache {
    xq: Mat,
    xkv: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// One `m x n` row-stochastic matrix per head.
    probs: Vec<Mat>,
    /// Concatenated head outputs, before the output projection.
    concat: Mat,
}

impl AttnCache {
    pub fn probs(&self) -> &[Mat] {
        &self.probs
    }
}

impl AttnWeights {
    pub fn zeros_like(&self) -> AttnWeights {
        let z = |m: &Mat| Mat::zeros(m.rows(), m.cols());
        AttnWeights {
            wq: z(&self.wq),
            wk: z(&self.wk),
            wv: z(&self.wv),
            wo: self.wo.as_ref().map(z),
        }
    }

    pub fn identity(d: usize, with_output: bool) -> AttnWeights {
        AttnWeights {
            wq: Mat::identity(d),
            wk: Mat::identity(d),
            wv: Mat::identity(d),
            wo: with_output.then(|| Mat::identity(d)),
        }
    }

    pub fn tensors(&self) -> Vec<&Mat> {
        let mut v = vec![&self.wq, &self.wk, &self.wv];
        v.extend(self.wo.as_ref());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut v = vec![&mut self.wq, &mut self.wk, &mut self.wv];
        v.extend(self.wo.as_mut());
        v
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    /// Attends from the `m` rows of `xq` over the `n` rows of `xkv`. Returns
    /// the `m x d` output.
    pub fn forward(&self, spec: AttnSpec, xq: &Mat, xkv: &Mat) -> (Mat, AttnCache) {
        let d = self.dim();
        assert!(spec.heads >= 1 && d.is_multiple_of(spec.heads), "head count must divide d");
        let dh = d / spec.heads;
        let scale = if spec.scaled { 1.0 / (dh as f64).sqrt() } else { 1.0 };
        let q = xq.matmul(&self.wq);
        let k = xkv.matmul(&self.wk);
        let v = xkv.matmul(&self.wv);
        let mut concat = Mat::zeros(xq.rows(), d);
        let mut probs = Vec::with_capacity(spec.heads);
        for h in 0..spec.heads {
            let (qh, kh, vh) = (q.col_block(h * dh, dh), k.col_block(h * dh, dh), v.col_block(h * dh, dh));
            let mut s = qh.matmul_t(&kh);
            s.scale(scale);
            softmax_rows(&mut s);
            concat.set_col_block(h * dh, &s.matmul(&vh));
            probs.push(s);
        }
        let out = match &self.wo {
            Some(wo) => concat.matmul(wo),
            None => concat.clone(),
        };
        let cache = AttnCache {
            xq: xq.clone(),
            xkv: xkv.clone(),
            q,
            k,
            v,
            probs,
            concat,
        };
        (out, cache)
    }

    /// Accumulates weight gradients into `grad` and returns `(dxq, dxkv)`.
    pub fn backward(&self, spec: AttnSpec, grad: &mut AttnWeights, cache: &AttnCache, dout: &Mat) -> (Mat, Mat) {
        let d = self.dim();
        let dh = d / spec.heads;
        let scale = if spec.scaled { 1.0 / (dh as f64).sqrt() } else { 1.0 };
        let dconcat = match (&self.wo, grad.wo.as_mut()) {
            (Some(wo), Some(gwo)) => {
                gwo.add_assign(&cache.concat.t_matmul(dout));
                dout.matmul_t(wo)
            }
            _ => dout.clone(),
        };
        let (m, n) = (cache.xq.rows(), cache.xkv.rows());
        let mut dq = Mat::zeros(m, d);
        let mut dk = Mat::zeros(n, d);
        let mut dv = Mat::zeros(n, d);
        for h in 0..spec.heads {
            let p = &cache.probs[h];
            let doh = dconcat.col_block(h * dh, dh);
            let (qh, kh, vh) = (
                cache.q.col_block(h * dh, dh),
                cache.k.col_block(h * dh, dh),
                cache.v.col_block(h * dh, dh),
            );
            dv.set_col_block(h * dh, &p.t_matmul(&doh));
            let dp = doh.matmul_t(&vh);
            let mut ds = softmax_rows_backward(p, &dp);
            ds.scale(scale);
            dq.set_col_block(h * dh, &ds.matmul(&kh));
            dk.set_col_block(h * dh, &ds.t_matmul(&qh));
        }
        grad.wq.add_assign(&cache.xq.t_matmul(&dq));
        grad.wk.add_assign(&cache.xkv.t_matmul(&dk));
        grad.wv.add_assign(&cache.xkv.t_matmul(&dv));
        let dxq = dq.matmul_t(&self.wq);
        let mut dxkv = dk.matmul_t(&self.wk);
        dxkv.add_assign(&dv.matmul_t(&self.wv));
        (dxq, dxkv)
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(s: &mut Mat) {
    for i in 0..s.rows() {
        let row = s.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

/// `dS = P ⊙ (dP − rowsum(dP ⊙ P))`.
fn softmax_rows_backward(p: &Mat, dp: &Mat) -> Mat {
    let mut ds = Mat::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let (pr, dr) = (p.row(i), dp.row(i));
        let inner: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for (o, (a, b)) in ds.row_mut(i).iter_mut().zip(pr.iter().zip(dr)) {
            *o = a * (b - inner);
        }
    }
    ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_weights(d: usize, wo: bool, rng: &mut ChaCha8Rng) -> AttnWeights {
        AttnWeights {
            wq: random(d, d, rng),
            wk: random(d, d, rng),
            wv: random(d, d, rng),
            wo: wo.then(|| random(d, d, rng)),
        }
    }

    #[test]
    fn single_key_returns_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = random_weights(4, false, &mut rng);
        let x = random(1, 4, &mut rng);
        let xq = random(3, 4, &mut rng);
        let (out, _) = w.forward(AttnSpec { heads: 2, scaled: true }, &xq, &x);
        let v = x.matmul(&w.wv);
        for i in 0..3 {
            for j in 0..4 {
                assert!((out[(i, j)] - v[(0, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_item_identity_matches_hand_softmax() {
        let w = AttnWeights::identity(2, false);
        let x = Mat::from_rows(&[vec![1.0, 0.0], vec![0.5, 2.0]]);
        let (out, _) = w.forward(AttnSpec { heads: 1, scaled: false }, &x, &x);
        // row 0: scores (1, 0.5); row 1: scores (0.5, 4.25)
        let mix = |s0: f64, s1: f64| {
            let (e0, e1) = (s0.exp(), s1.exp());
            let (p0, p1) = (e0 / (e0 + e1), e1 / (e0 + e1));
            [p0 * 1.0 + p1 * 0.5, p1 * 2.0]
        };
        let r0 = mix(1.0, 0.5);
        let r1 = mix(0.5, 4.25);
        assert!((out[(0, 0)] - r0[0]).abs() < 1e-12 && (out[(0, 1)] - r0[1]).abs() < 1e-12);
        assert!((out[(1, 0)] - r1[0]).abs() < 1e-12 && (out[(1, 1)] - r1[1]).abs() < 1e-12);
    }

    #[test]
    fn probabilities_are_row_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_weights(8, true, &mut rng);
        let (_, cache) = w.forward(AttnSpec { heads: 4, scaled: true }, &random(5, 8, &mut rng), &random(7, 8, &mut rng));
        for p in cache.probs() {
            for i in 0..p.rows() {
                assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(heads, scaled, wo) in &[(1, false, false), (2, true, true), (4, true, false)] {
            let spec = AttnSpec { heads, scaled };
            let w = random_weights(4, wo, &mut rng);
            let xq = random(3, 4, &mut rng);
            let xkv = random(5, 4, &mut rng);
            let probe = random(3, 4, &mut rng);
            let loss = |w: &AttnWeights, xq: &Mat, xkv: &Mat| -> f64 {
                let (o, _) = w.forward(spec, xq, xkv);
                o.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = w.forward(spec, &xq, &xkv);
            let mut g = w.zeros_like();
            let (dxq, dxkv) = w.backward(spec, &mut g, &cache, &probe);
            let h = 1e-6;
            let check = |an: f64, plus: f64, minus: f64| {
                let fd = (plus - minus) / (2.0 * h);
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
                assert!(rel < 1e-5, "analytic {an} vs numeric {fd}");
            };
            for (t, gt) in w.tensors().iter().zip(g.tensors()) {
                for k in 0..t.as_slice().len() {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    let idx = w.tensors().iter().position(|x| std::ptr::eq(*x, *t)).unwrap();
                    wp.tensors_mut()[idx].as_mut_slice()[k] += h;
                    wm.tensors_mut()[idx].as_mut_slice()[k] -= h;
                    check(gt.as_slice()[k], loss(&wp, &xq, &xkv), loss(&wm, &xq, &xkv));
                }
            }
            for k in 0..xq.as_slice().len() {
                let (mut p, mut m) = (xq.clone(), xq.clone());
                p.as_mut_slice()[k] += h;
                m.as_mut_slice()[k] -= h;
                check(dxq.as_slice()[k], loss(&w, &p, &xkv), loss(&w, &m, &xkv));
            }
            for k in 0..xkv.as_slice().len() {
                let (mut p, mut m) = (xkv.clone(), xkv.clone());
                p.as_mut_slice()[k] += h;
                m.as_mut_slice()[k] -= h;
                check(dxkv.as_slice()[k], loss(&w, &xq, &p), loss(&w, &xq, &m));
            }
        }
    }
}
