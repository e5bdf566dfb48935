//! Training loop, optimizer and scoring.

mod metrics;
mod optim;

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::layers::Dropout;
use crate::model::AggcnModel;
use crate::numerics::{Matrix, Rng, Tape};

pub use metrics::{score, EvalResult, LabelCounts};
pub use optim::{sgd_step, Optimizer, SgdState, StepConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub grad_clip_norm: Option<f64>,
    /// Instances whose gradients are averaged before each step.
    pub batch_size: usize,
    pub seed: u64,
    pub dropout_p: f64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.1,
            optimizer: Optimizer::Sgd,
            momentum: 0.9,
            grad_clip_norm: Some(5.0),
            batch_size: 1,
            seed: 0,
            dropout_p: 0.0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted (it freezes the model); negative ones are not.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout_p));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return bad(format!("gradient clip norm must be positive, got {c}"));
            }
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        Ok(())
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            momentum: self.momentum,
            grad_clip_norm: self.grad_clip_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

impl From<&EvalResult> for DevScores {
    fn from(r: &EvalResult) -> Self {
        DevScores {
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            micro_f1: r.micro_f1,
            macro_f1: r.macro_f1,
        }
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<DevScores>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, when a dev set was scored.
    pub best_epoch: Option<usize>,
    pub best_dev: Option<EvalResult>,
}

/// Steps a model through shuffled epochs. Everything random is derived from
/// `config.seed`, so two trainers built alike visit the same order.
pub struct Trainer<'m> {
    model: &'m mut AggcnModel,
    config: TrainConfig,
    order_rng: Rng,
    dropout_rng: Rng,
    state: SgdState,
    epoch: usize,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m mut AggcnModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.seed);
        Ok(Trainer {
            model,
            order_rng: root.derive("order"),
            dropout_rng: root.derive("dropout"),
            config,
            state: SgdState::default(),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &AggcnModel {
        self.model
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    /// One pass over `train`; returns the mean instance loss.
    pub fn run_epoch(&mut self, train: &Corpus) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        self.order_rng.shuffle(&mut order);
        let step = self.config.step_config();
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let inst = &train.instances[i];
                let mut tape = Tape::new();
                let dropout = (self.config.dropout_p > 0.0).then_some(Dropout {
                    p: self.config.dropout_p,
                    rng: &mut self.dropout_rng,
                });
                let loss = self.model.loss(&mut tape, inst, dropout)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        instance: inst.id.clone(),
                        loss: value,
                    });
                }
                total += value;
                let scaled = tape.scale(loss, weight);
                tape.backward(scaled, &mut self.model.store)?;
            }
            sgd_step(&mut self.model.store, &step, &mut self.state);
        }
        self.epoch += 1;
        Ok(total / train.len() as f64)
    }
}

/// Trains for `config.epochs` epochs, scoring `dev` every `eval_every`
/// epochs and finally restoring the parameters of the best dev epoch.
pub fn train(
    model: &mut AggcnModel,
    train_set: &Corpus,
    dev: Option<&Corpus>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let dev = dev.filter(|d| !d.is_empty());
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, EvalResult, Vec<Matrix>)> = None;
    let mut trainer = Trainer::new(model, config.clone())?;
    for epoch in 1..=config.epochs {
        let loss = trainer.run_epoch(train_set)?;
        let mut record = EpochRecord {
            epoch,
            loss,
            dev: None,
        };
        if let Some(dev) = dev {
            if epoch % config.eval_every == 0 || epoch == config.epochs {
                let result = evaluate(trainer.model(), dev)?;
                record.dev = Some(DevScores::from(&result));
                let key = result.micro_f1;
                if best.as_ref().is_none_or(|(b, ..)| key > *b) {
                    let snapshot = trainer.model().store.iter().map(|t| t.value.clone()).collect();
                    best = Some((key, epoch, result, snapshot));
                }
            }
        }
        history.push(record);
    }
    drop(trainer);
    let (best_epoch, best_dev) = match best {
        Some((_, epoch, result, snapshot)) => {
            for (t, v) in model.store.iter_mut().zip(snapshot) {
                t.value = v;
            }
            (Some(epoch), Some(result))
        }
        None => (None, None),
    };
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_dev,
    })
}

/// Predictions for every instance, in corpus order. Runs in parallel.
pub fn predict_all(model: &AggcnModel, corpus: &Corpus) -> Result<Vec<usize>> {
    corpus
        .instances
        .par_iter()
        .map(|inst| model.predict(inst).map(|(p, _)| p))
        .collect()
}

/// Argmax predictions scored against gold. Labels are matched by name to the
/// model's label set.
pub fn evaluate(model: &AggcnModel, corpus: &Corpus) -> Result<EvalResult> {
    if corpus.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty corpus"));
    }
    let corpus = if corpus.label_vocab == model.config.labels {
        Cow::Borrowed(corpus)
    } else {
        Cow::Owned(corpus.with_labels(&model.config.labels)?)
    };
    let pred = predict_all(model, &corpus)?;
    let gold: Vec<usize> = corpus.instances.iter().map(|i| i.label).collect();
    Ok(score(&gold, &pred, &model.config.labels, corpus.negative_label))
}
