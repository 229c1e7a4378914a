//! The training loop: TOP1 loss over in-batch negatives, per-step
//! backpropagation through the recorded graph, AdaGrad updates, dropout and
//! per-epoch validation.

pub mod backward;
pub mod gradcheck;
pub mod loss;
pub mod optimizer;

pub use backward::{backprop_step, ModelGradAccum};
pub use gradcheck::{check_model_gradients, GradCheckReport};
pub use loss::{top1_grad, top1_loss};
pub use optimizer::{adagrad_momentum_step, ModelOptimizer, OptTensorState, ADAGRAD_EPSILON};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batcher::{schedule, BatchStep};
use crate::error::{Error, Result};
use crate::eval::{evaluate_report, BucketBy, ModelScorer};
use crate::linalg::Vector;
use crate::models::{Model, ModelConfig, ModelKind, ModelParams, SlotState};
use crate::querylog::UserHistory;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    /// Floor on the negative-sample count; in-batch negatives are topped up
    /// with uniform samples when a step has fewer.
    pub min_negatives: usize,
    /// Optional global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    /// The best-performing configuration for each model kind: batch 50,
    /// 100 hidden units, 20 epochs, momentum 0; learning rate and dropout
    /// differ per kind (0.01/0.5 for the session-only model, 0.1/0.1 for the
    /// hierarchical ones).
    pub fn defaults_for(kind: ModelKind) -> TrainConfig {
        let (learning_rate, dropout) = match kind {
            ModelKind::Nqs => (0.01, 0.5),
            ModelKind::Hnqs | ModelKind::Ahnqs => (0.1, 0.1),
        };
        TrainConfig {
            batch_size: 50,
            learning_rate,
            momentum: 0.0,
            dropout,
            epochs: 20,
            seed: 1,
            hidden_dim: 100,
            min_negatives: 1,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.min_negatives < 1 {
            return Err(Error::Config("min_negatives must be at least 1".into()));
        }
        Ok(())
    }
}

/// One epoch's summary.
#[derive(Debug, Clone, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_mrr: Option<f64>,
    pub val_recall: Option<f64>,
    pub wall_secs: f64,
}

/// The whole run's per-epoch reports.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

/// Hooks into the training loop. Every emitted attention-weight vector and
/// every finished epoch pass through here.
pub trait TrainObserver {
    fn attention(&mut self, _alpha: &[f64]) {}
    fn epoch(&mut self, _report: &EpochReport) {}
}

/// Observer that does nothing.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Trains a model of `kind` on the training split, evaluating MRR@10 and
/// Recall@10 on the validation split (when given) after each epoch.
pub fn train(
    train_split: &[UserHistory],
    valid_split: Option<&[UserHistory]>,
    vocab_size: usize,
    kind: ModelKind,
    config: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    train_with_observer(train_split, valid_split, vocab_size, kind, config, &mut NoopObserver)
}

pub fn train_with_observer(
    train_split: &[UserHistory],
    valid_split: Option<&[UserHistory]>,
    vocab_size: usize,
    kind: ModelKind,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(Model, TrainReport)> {
    config.validate()?;
    let mut model_config = ModelConfig::new(kind, vocab_size, config.hidden_dim);
    model_config.dropout = config.dropout;
    model_config.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = ModelParams::init(&model_config, &mut rng)?;
    let mut model = Model::new(model_config, params);

    let mut optimizer =
        ModelOptimizer::new(&model.params, config.learning_rate, config.momentum, config.grad_clip);
    let mut acc = ModelGradAccum::zeros(kind, config.hidden_dim, vocab_size);

    let mut slots: Vec<SlotState> = (0..config.batch_size).map(|_| model.new_state(true)).collect();
    let mut pending: Vec<Option<u32>> = vec![None; config.batch_size];

    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut loss_count = 0u64;

        let epoch_seed = mix_seed(config.seed, epoch as u64);
        for (step_index, step) in schedule(train_split, config.batch_size, epoch_seed)?.enumerate()
        {
            let step_loss = train_step(
                &model,
                &step,
                &mut slots,
                &mut pending,
                config,
                vocab_size,
                &mut rng,
                &mut acc,
                observer,
            )?;
            if !step_loss.is_finite() {
                return Err(Error::Diverged { epoch, step: step_index, loss: step_loss });
            }
            loss_sum += step_loss;
            loss_count += step.active_count() as u64;
            optimizer.apply(&mut model.params, &acc)?;
            acc.clear();
        }

        let mean_loss = if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 };
        if !mean_loss.is_finite() {
            return Err(Error::Diverged { epoch, step: 0, loss: mean_loss });
        }

        let (val_mrr, val_recall) = match valid_split {
            Some(valid) if !valid.is_empty() => {
                let mut scorer = ModelScorer::new(&model);
                let (r, _) =
                    evaluate_report(&mut scorer, train_split, valid, 10, BucketBy::Context)?;
                (Some(r.overall.mrr), Some(r.overall.recall))
            }
            _ => (None, None),
        };

        let epoch_report = EpochReport {
            epoch,
            mean_loss,
            val_mrr,
            val_recall,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        observer.epoch(&epoch_report);
        report.epochs.push(epoch_report);
    }

    Ok((model, report))
}

/// Processes one batch step across all slots, accumulating gradients and
/// returning the summed loss.
#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &Model,
    step: &BatchStep,
    slots: &mut [SlotState],
    pending: &mut [Option<u32>],
    config: &TrainConfig,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
    acc: &mut ModelGradAccum,
    observer: &mut dyn TrainObserver,
) -> Result<f64> {
    let mut loss_sum = 0.0;
    for (slot_index, slot) in step.slots.iter().enumerate() {
        let Some(slot) = slot else { continue };
        let state = &mut slots[slot_index];

        if slot.user_start {
            model.begin_user(state);
            pending[slot_index] = None;
        } else if slot.session_start {
            // Finish the previous session: its final query enters the
            // session-level recurrence before the user-level update.
            if let Some(final_token) = pending[slot_index].take() {
                model.observe(state, final_token)?;
            }
            let user_mask = dropout_mask(config.hidden_dim, config.dropout, rng);
            if let Some(alpha) = model.end_session(state, user_mask)? {
                observer.attention(alpha.as_slice());
            }
        }

        model.observe(state, slot.input)?;
        pending[slot_index] = Some(slot.target);

        let hidden_mask = dropout_mask(config.hidden_dim, config.dropout, rng);
        let h_scored = match &hidden_mask {
            Some(m) => state.h.mul(m)?,
            None => state.h.clone(),
        };
        let negatives =
            step.negatives_for(slot_index, config.min_negatives, vocab_size, rng)?;
        let mut tokens = Vec::with_capacity(1 + negatives.len());
        tokens.push(slot.target);
        tokens.extend_from_slice(&negatives);
        let scores = model.score_tokens(&h_scored, &tokens);

        loss_sum += top1_loss(scores[0], &scores[1..])?;
        let (d_positive, d_negatives) = top1_grad(scores[0], &scores[1..])?;
        let mut d_scores = Vec::with_capacity(tokens.len());
        d_scores.push(d_positive);
        d_scores.extend_from_slice(&d_negatives);
        let scored: Vec<(u32, f64)> = tokens.into_iter().zip(scores).collect();

        backprop_step(model, state, &scored, &d_scores, &h_scored, hidden_mask.as_ref(), acc)?;
    }
    Ok(loss_sum)
}

/// Inverted-dropout mask: keeps a coordinate with probability 1 - rate,
/// scaling survivors by 1/(1 - rate). `None` when dropout is off.
fn dropout_mask<R: Rng>(dim: usize, rate: f64, rng: &mut R) -> Option<Vector> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(Vector::from_vec(
        (0..dim).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect(),
    ))
}

/// Derives per-epoch stream seeds from the master seed.
fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
