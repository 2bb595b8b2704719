//! Mini-batch Adam ascent with validation-based early stopping.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{UserSplit, TrainingInstance};
use crate::diversity::DiversityFactor;
use crate::error::{Error, Result};
use crate::eval::{bce_loss, bce_loss_grad, evaluate_users, Holdout, IldDistance, MetricContext};
use crate::model::{Checkpoint, ModelParams};
use crate::objective::{instance_loglik, loglik_grad, ObjectiveOptions};
use crate::optim::{AdamConfig, AdamState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    #[default]
    Sdpp,
    Bce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub a: usize,
    pub b: usize,
    pub z: usize,
    pub lambda: f64,
    pub center: bool,
    pub objective: ObjectiveKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            a: 3,
            b: 1,
            z: 1,
            lambda: 0.2,
            center: true,
            objective: ObjectiveKind::Sdpp,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return bad("lr and eps must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.a == 0 || self.b == 0 {
            return bad("batch_size, max_epochs, a and b must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Objective options implied by the config. With `λ = 0` the cohesion
    /// term never reaches a prediction, so it is left out of training too.
    pub fn objective_options(&self) -> ObjectiveOptions {
        ObjectiveOptions {
            center: self.center,
            edges: self.lambda > 0.0,
        }
    }

    /// λ used for validation ranking; the BCE baseline only learns
    /// preference scores.
    pub fn eval_lambda(&self) -> f64 {
        match self.objective {
            ObjectiveKind::Sdpp => self.lambda,
            ObjectiveKind::Bce => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective after the epoch (log-likelihood, or negated
    /// BCE for the baseline).
    pub train_ll: f64,
    pub val_recall20: f64,
    pub val_ndcg20: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub best_params: ModelParams,
    pub best_score: f64,
    pub wait: usize,
    pub stopped: bool,
    pub initial_train_ll: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    epoch: usize,
    best_score: f64,
    wait: usize,
    stopped: bool,
    initial_train_ll: f64,
    history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        TrainState {
            adam: AdamState::new(&params),
            best_params: params.clone(),
            params,
            epoch: 0,
            best_score: f64::NEG_INFINITY,
            wait: 0,
            stopped: false,
            initial_train_ll: f64::NAN,
            history: Vec::new(),
        }
    }

    /// Writes `last.ckpt` (parameters, optimizer state and counters) and
    /// `best.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.save_with(dir, serde_json::Value::Null)
    }

    /// Like [`TrainState::save`], attaching `best_meta` to `best.ckpt`.
    pub fn save_with(&self, dir: &Path, best_meta: serde_json::Value) -> Result<()> {
        let meta = StateMeta {
            epoch: self.epoch,
            best_score: self.best_score,
            wait: self.wait,
            stopped: self.stopped,
            initial_train_ll: self.initial_train_ll,
            history: self.history.clone(),
        };
        let last = Checkpoint {
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
            meta: serde_json::to_value(&meta).map_err(|e| Error::Format(e.to_string()))?,
        };
        last.save(&dir.join("last.ckpt"))?;
        let best = Checkpoint {
            meta: best_meta,
            ..Checkpoint::new(self.best_params.clone())
        };
        best.save(&dir.join("best.ckpt"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let last = Checkpoint::load(&dir.join("last.ckpt"))?;
        let best = Checkpoint::load(&dir.join("best.ckpt"))?;
        let meta: StateMeta = serde_json::from_value(last.meta).map_err(|e| Error::Format(e.to_string()))?;
        let adam = last
            .adam
            .ok_or_else(|| Error::Format("last.ckpt carries no optimizer state".into()))?;
        Ok(TrainState {
            params: last.params,
            adam,
            epoch: meta.epoch,
            best_params: best.params,
            best_score: meta.best_score,
            wait: meta.wait,
            stopped: meta.stopped,
            initial_train_ll: meta.initial_train_ll,
            history: meta.history,
        })
    }
}

/// Training inputs shared by every epoch.
pub struct TrainData<'a> {
    pub instances: &'a [TrainingInstance],
    /// Users whose validation set drives early stopping; may be empty, in
    /// which case every epoch counts as an improvement.
    pub val: &'a [UserSplit],
    pub categories: &'a [usize],
    pub n_categories: usize,
    pub factor: &'a DiversityFactor,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F)
}

/// Mean training objective over all instances (higher is better).
pub fn mean_objective(params: &ModelParams, data: &TrainData, cfg: &TrainConfig) -> Result<f64> {
    let opts = cfg.objective_options();
    let vals: Vec<f64> = data
        .instances
        .par_iter()
        .map(|inst| match cfg.objective {
            ObjectiveKind::Sdpp => instance_loglik(inst, params, data.factor, opts),
            ObjectiveKind::Bce => bce_loss(inst, params).map(|l| -l),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len().max(1) as f64)
}

/// Mean ascent direction over `batch`, reduced in batch order.
fn batch_gradient(params: &ModelParams, batch: &[&TrainingInstance], data: &TrainData, cfg: &TrainConfig) -> Result<ModelParams> {
    let opts = cfg.objective_options();
    let grads: Vec<ModelParams> = batch
        .par_iter()
        .map(|inst| match cfg.objective {
            ObjectiveKind::Sdpp => loglik_grad(inst, params, data.factor, opts).map(|(_, g)| g),
            ObjectiveKind::Bce => bce_loss_grad(inst, params).map(|(_, mut g)| {
                g.scale(-1.0);
                g
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = params.zeros_like();
    for g in &grads {
        total.add_assign(g);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok(total)
}

fn validate(params: &ModelParams, data: &TrainData, cfg: &TrainConfig) -> Result<(f64, f64)> {
    if data.val.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let ctx = MetricContext {
        categories: data.categories,
        n_categories: data.n_categories,
        distance: IldDistance::Category,
        factor: None,
    };
    let n = 20.min(params.config.n_items);
    let r = evaluate_users(params, data.val, Holdout::Validation, &[cfg.eval_lambda()], &[n], &ctx)?;
    let m = r[0].mean[0];
    Ok((m.recall, m.ndcg))
}

/// Runs epochs until early stopping, `cfg.max_epochs`, or `until_epoch`
/// completed epochs, whichever comes first. Calling again with the returned
/// state continues the identical trajectory.
pub fn run_epochs(
    state: &mut TrainState,
    data: &TrainData,
    cfg: &TrainConfig,
    until_epoch: Option<usize>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<()> {
    cfg.validate()?;
    if data.instances.is_empty() {
        return Err(Error::InvalidArgument("no training instances".into()));
    }
    if state.initial_train_ll.is_nan() && state.epoch == 0 {
        state.initial_train_ll = mean_objective(&state.params, data, cfg)?;
    }
    let adam_cfg = cfg.adam();
    let stop_at = until_epoch.unwrap_or(cfg.max_epochs).min(cfg.max_epochs);
    while !state.stopped && state.epoch < stop_at {
        let epoch = state.epoch + 1;
        let mut order: Vec<usize> = (0..data.instances.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingInstance> = chunk.iter().map(|&k| &data.instances[k]).collect();
            let g = batch_gradient(&state.params, &batch, data, cfg)?;
            state.adam.ascend(&mut state.params, &g, &adam_cfg)?;
        }
        if !state.params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite parameters".into(),
            });
        }
        let train_ll = mean_objective(&state.params, data, cfg)?;
        if !train_ll.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("training objective is {train_ll}"),
            });
        }
        let (val_recall20, val_ndcg20) = validate(&state.params, data, cfg)?;
        let record = EpochRecord {
            epoch,
            train_ll,
            val_recall20,
            val_ndcg20,
        };
        state.epoch = epoch;
        state.history.push(record);
        on_epoch(&record);

        let score = if val_recall20.is_nan() { f64::INFINITY } else { val_recall20 };
        if data.val.is_empty() || score > state.best_score {
            state.best_score = score;
            state.best_params = state.params.clone();
            state.wait = 0;
        } else {
            state.wait += 1;
            if state.wait >= cfg.patience {
                state.stopped = true;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: ModelParams,
    pub state: TrainState,
}

/// Full training run from `init`.
pub fn train(init: ModelParams, data: &TrainData, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    let mut state = TrainState::new(init);
    run_epochs(&mut state, data, cfg, None, on_epoch)?;
    Ok(TrainOutcome {
        best: state.best_params.clone(),
        state,
    })
}

/// `epoch,train_ll,val_recall20,val_ndcg20`
pub fn write_history_csv(history: &[EpochRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    out.write_record(["epoch", "train_ll", "val_recall20", "val_ndcg20"]).map_err(fmt)?;
    for r in history {
        out.write_record([
            r.epoch.to_string(),
            format!("{:.10}", r.train_ll),
            format!("{:.6}", r.val_recall20),
            format!("{:.6}", r.val_ndcg20),
        ])
        .map_err(fmt)?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}
