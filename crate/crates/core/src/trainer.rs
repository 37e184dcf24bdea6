//! Mini-batch training with sampled binary cross-entropy and early stopping.
//!
//! Every position of a user's training prefix predicts the next item against
//! `negatives_per_positive` uniformly drawn non-history items. Random draws
//! come from streams keyed by (seed, epoch, batch or user), so the result is
//! identical for any thread count.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::{sample_one_negative, InteractionDataset, LeaveOneOutSplit, Phase, UserSplit};
use crate::error::{GraspError, Result};
use crate::eval::{evaluate_plan, EvalPlan, ModelScorer};
use crate::model::{truncate_recent, Model, SemanticStores};
use crate::nn::{sigmoid, Adam, Params};
use crate::rng::{stream, tag, Rng};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Users whose gradients are accumulated sequentially before the
/// fixed-order reduction across groups.
const GRAD_GROUP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub eval_negatives: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 128,
            patience: 20,
            max_epochs: 200,
            negatives_per_positive: 1,
            seed: 42,
            eval_negatives: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(GraspError::Argument(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("negatives_per_positive", self.negatives_per_positive),
            ("eval_negatives", self.eval_negatives),
        ] {
            if v == 0 {
                return Err(GraspError::Argument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_ndcg10: f64,
    pub best_epoch: usize,
    pub epochs_since_best: usize,
    pub loss_history: Vec<f64>,
    pub val_history: Vec<f64>,
    pub optimizer: Adam,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            best_val_ndcg10: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_best: 0,
            loss_history: Vec::new(),
            val_history: Vec::new(),
            optimizer: Adam::new(cfg.lr),
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy over a candidate pool.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(GraspError::Argument("empty candidate pool".into()));
    }
    if scores.len() != labels.len() {
        return Err(GraspError::Argument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = clamp_prob(s);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// Loss term and its derivative with respect to the logit. The derivative
/// is zero where the clamp is active.
fn bce_from_logit(z: f64, y: f64) -> (f64, f64) {
    let p = sigmoid(z);
    let c = clamp_prob(p);
    let loss = -(y * c.ln() + (1.0 - y) * (1.0 - c).ln());
    let grad = if c == p { p - y } else { 0.0 };
    (loss, grad)
}

/// One user's next-item prediction task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub user: usize,
    pub inputs: Vec<usize>,
    /// `targets[t]` follows `inputs[t]`.
    pub targets: Vec<usize>,
    /// `negatives[t]` are drawn for position t.
    pub negatives: Vec<Vec<usize>>,
}

impl TrainingExample {
    pub fn positions(&self) -> usize {
        self.inputs.len()
    }

    /// `(position, item)` pairs: per position the target then its negatives.
    fn candidates(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for t in 0..self.inputs.len() {
            out.push((t, self.targets[t]));
            out.extend(self.negatives[t].iter().map(|&n| (t, n)));
        }
        out
    }
}

/// Builds shifted input/target pairs from each user's training prefix,
/// keeping the most recent `max_seq_len` positions. Users with fewer than two
/// training items contribute nothing.
pub fn make_training_batch(
    users: &[&UserSplit],
    ds: &InteractionDataset,
    negatives_per_positive: usize,
    max_seq_len: usize,
    rng: &mut Rng,
) -> Result<Vec<TrainingExample>> {
    users
        .iter()
        .filter(|u| u.train_prefix.len() >= 2)
        .map(|u| {
            let p = &u.train_prefix;
            let inputs = truncate_recent(&p[..p.len() - 1], max_seq_len).to_vec();
            let targets = truncate_recent(&p[1..], max_seq_len).to_vec();
            let history = ds.history(u.user);
            if history.len() >= ds.item_count() {
                return Err(GraspError::SamplingInfeasible {
                    user: u.user,
                    requested: negatives_per_positive,
                    available: 0,
                });
            }
            let negatives = (0..inputs.len())
                .map(|_| {
                    (0..negatives_per_positive)
                        .map(|_| sample_one_negative(&history, ds.item_count(), rng))
                        .collect()
                })
                .collect();
            Ok(TrainingExample {
                user: u.user,
                inputs,
                targets,
                negatives,
            })
        })
        .collect()
}

/// Sum of per-position losses and the gradient of the batch loss, which is
/// the mean over positions of the per-position mean over its pool.
fn example_gradient(
    model: &Model,
    stores: &SemanticStores,
    ex: &TrainingExample,
    dropout: &mut Rng,
    total_positions: usize,
    grad: &mut Model,
) -> Result<f64> {
    let candidates = ex.candidates();
    let pool = 1 + ex.negatives.first().map_or(0, Vec::len);
    let (logits, cache) = model.forward(stores, ex.user, &ex.inputs, &candidates, Some(dropout))?;
    let scale = 1.0 / (pool * total_positions) as f64;
    let mut loss = 0.0;
    let d_logits: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(r, &z)| {
            let y = if r % pool == 0 { 1.0 } else { 0.0 };
            let (l, g) = bce_from_logit(z, y);
            loss += l / pool as f64;
            g * scale
        })
        .collect();
    model.backward(&cache, &d_logits, grad);
    Ok(loss)
}

/// One pass over all users with training positions. Returns the mean
/// per-position loss and appends it to `state.loss_history`.
pub fn train_epoch(
    model: &mut Model,
    stores: &SemanticStores,
    ds: &InteractionDataset,
    split: &LeaveOneOutSplit,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<f64> {
    let epoch = state.epoch + 1;
    let mut order: Vec<&UserSplit> = split.users.iter().filter(|u| u.train_prefix.len() >= 2).collect();
    order.shuffle(&mut stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
    let mut loss_sum = 0.0;
    let mut positions = 0usize;
    for (b, users) in order.chunks(cfg.batch_size).enumerate() {
        let mut rng = stream(cfg.seed, &[tag::BATCH_NEGATIVES, epoch as u64, b as u64]);
        let batch = make_training_batch(users, ds, cfg.negatives_per_positive, model.max_seq_len(), &mut rng)?;
        let n_pos: usize = batch.iter().map(TrainingExample::positions).sum();
        let shared: &Model = model;
        let partials = batch
            .par_chunks(GRAD_GROUP)
            .map(|group| {
                let mut grad = shared.zeros_like();
                let mut loss = 0.0;
                for ex in group {
                    let mut dropout = stream(cfg.seed, &[tag::DROPOUT, epoch as u64, ex.user as u64]);
                    loss += example_gradient(shared, stores, ex, &mut dropout, n_pos, &mut grad)?;
                }
                Ok((grad, loss))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut parts = partials.into_iter();
        let (mut grad, mut batch_loss) = parts.next().expect("nonempty batch");
        for (g, l) in parts {
            grad.add_assign(&g);
            batch_loss += l;
        }
        if !batch_loss.is_finite() || !grad.all_finite() {
            return Err(GraspError::NonFinite {
                epoch,
                batch: b,
                loss: batch_loss / n_pos as f64,
            });
        }
        state.optimizer.update(model, &grad);
        loss_sum += batch_loss;
        positions += n_pos;
    }
    let mean = if positions == 0 {
        0.0
    } else {
        loss_sum / positions as f64
    };
    state.epoch = epoch;
    state.loss_history.push(mean);
    Ok(mean)
}

/// Result of [`fit`]: the best checkpoint (at checkpoint precision) and the
/// final training state.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub best: Model,
    pub state: TrainState,
    pub seconds: f64,
}

/// Trains until validation NDCG@10 has not strictly improved for
/// `patience` epochs or `max_epochs` is reached. Validation runs on a copy
/// rounded to checkpoint precision, so re-evaluating the saved checkpoint
/// reproduces the logged numbers. Writes `epoch<TAB>mean_loss<TAB>val_ndcg10`
/// lines to `log` when given.
pub fn fit(
    mut model: Model,
    stores: &SemanticStores,
    ds: &InteractionDataset,
    split: &LeaveOneOutSplit,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<FitResult> {
    cfg.validate()?;
    model.check_compatible(stores, ds.item_count())?;
    if split.is_empty() {
        return Err(GraspError::Protocol("no users with a validation target".into()));
    }
    let started = Instant::now();
    let plan = EvalPlan::build(ds, split, Phase::Valid, cfg.eval_negatives, cfg.seed)?;
    let mut state = TrainState::new(cfg);
    let mut best: Option<Model> = None;
    while state.epoch < cfg.max_epochs && state.epochs_since_best < cfg.patience {
        let loss = train_epoch(&mut model, stores, ds, split, cfg, &mut state)?;
        let mut snapshot = model.clone();
        snapshot.round_to_f32();
        let scorer = ModelScorer {
            model: &snapshot,
            stores,
        };
        let ndcg10 = evaluate_plan(&scorer, &plan)?.report.ndcg(10).unwrap_or(0.0);
        state.val_history.push(ndcg10);
        if ndcg10 > state.best_val_ndcg10 {
            state.best_val_ndcg10 = ndcg10;
            state.best_epoch = state.epoch;
            state.epochs_since_best = 0;
            best = Some(snapshot);
        } else {
            state.epochs_since_best += 1;
        }
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}\t{loss}\t{ndcg10}", state.epoch).map_err(|e| GraspError::io("training log", e))?;
        }
    }
    Ok(FitResult {
        best: best.expect("at least one epoch runs"),
        state,
        seconds: started.elapsed().as_secs_f64(),
    })
}
