//! Bias-corrected Adam, written as an ascent step since every objective in
//! this crate is a log-likelihood to maximize.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// A fixed, ordered collection of parameter tensors.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&Mat>;
    fn tensors_mut(&mut self) -> Vec<&mut Mat>;
}

impl ParamSet for Mat {
    fn tensors(&self) -> Vec<&Mat> {
        vec![self]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        vec![self]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub step: u64,
}

impl AdamState {
    pub fn new<P: ParamSet + ?Sized>(params: &P) -> Self {
        let zeros: Vec<Mat> = params
            .tensors()
            .iter()
            .map(|t| Mat::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One ascent step: `θ += lr · m̂ / (√v̂ + eps)`.
    pub fn ascend<P: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &P, cfg: &AdamConfig) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if grads.len() != params.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter tensors, {} gradients, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {:?}, gradient {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (k, w) in p.as_mut_slice().iter_mut().enumerate() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w += cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Mat::from_rows(&[vec![1.0, -2.0]]);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        s.ascend(&mut p, &Mat::zeros(1, 2), &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let cfg = AdamConfig::default();
        let mut p = Mat::zeros(1, 3);
        let g = Mat::from_rows(&[vec![0.5, -3.0, 1e-3]]);
        let mut s = AdamState::new(&p);
        s.ascend(&mut p, &g, &cfg).unwrap();
        for (w, gi) in p.as_slice().iter().zip(g.as_slice()) {
            assert!((w - cfg.lr * gi.signum()).abs() < 1e-7, "{w}");
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = Mat::from_rows(&[vec![0.1, 0.2, 0.3]]);
            let mut s = AdamState::new(&p);
            for k in 0..10 {
                let g = Mat::from_rows(&[vec![k as f64, -1.0, 0.5 * k as f64]]);
                s.ascend(&mut p, &g, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run().as_slice(), run().as_slice());
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Mat::zeros(2, 2);
        let mut s = AdamState::new(&p);
        assert!(matches!(
            s.ascend(&mut p, &Mat::zeros(1, 2), &AdamConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
