//! Mini-batch training with Adam and early stopping on validation accuracy,
//! plus evaluation (mean loss, accuracy, confusion matrix).

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::error::{bail, Result};
use crate::model::FusionModel;
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{argmax, Tensor};
use crate::vision::{augment, AugmentConfig};

/// One preprocessed clip: the visual stack, the spectrogram (absent in
/// video-only runs) and the class index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub visual: Tensor,
    pub audio: Option<Tensor>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping;
    /// `0` disables early stopping.
    pub patience: usize,
    pub shuffle_seed: u64,
    /// Augmented copies per training clip come from `augment.copies`.
    pub augment: AugmentConfig,
    pub augment_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            adam: AdamConfig::default(),
            max_epochs: 10,
            patience: 1,
            shuffle_seed: 0,
            augment: AugmentConfig::default(),
            augment_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            bail!(Config, "batch size must be at least 1");
        }
        if self.max_epochs < 1 {
            bail!(Config, "max_epochs must be at least 1");
        }
        if !(self.adam.learning_rate >= 0.0) {
            bail!(Config, "learning rate must be non-negative");
        }
        self.adam.validate()?;
        self.augment.validate()
    }
}

/// Per-epoch metrics. Validation fields are `None` without a validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

/// Hooks for timing and progress; the core has no clock of its own.
pub trait TrainObserver {
    fn now_seconds(&mut self) -> f64 {
        0.0
    }

    fn on_epoch(&mut self, _report: &EpochReport) {}
}

/// Observer that records nothing.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the best validation accuracy, or the final model when
    /// there is no validation set.
    pub model: FusionModel,
    pub reports: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
}

/// Square matrix of `[true][predicted]` counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Confusion {
        Confusion { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Confusion> {
        if counts.len() != classes * classes {
            bail!(Shape, "{} counts for a {classes}×{classes} confusion matrix", counts.len());
        }
        Ok(Confusion { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    pub fn merge(&mut self, other: &Confusion) -> Result<()> {
        if other.classes != self.classes {
            bail!(Shape, "cannot merge {} and {} class matrices", self.classes, other.classes);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

/// One training example after augmentation.
#[derive(Debug, Clone)]
pub struct Example<'s> {
    pub visual: Cow<'s, Tensor>,
    pub audio: Option<&'s Tensor>,
    pub label: usize,
}

impl<'s> From<&'s ClipSample> for Example<'s> {
    fn from(s: &'s ClipSample) -> Self {
        Example { visual: Cow::Borrowed(&s.visual), audio: s.audio.as_ref(), label: s.label }
    }
}

/// Sums over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
}

fn check_label(model: &FusionModel, label: usize) -> Result<()> {
    if label >= model.config.n_classes {
        bail!(Config, "label {label} outside 0..{}", model.config.n_classes);
    }
    Ok(())
}

/// Loss and prediction for one example, accumulating `scale·∂loss/∂θ` into
/// the parameter gradients when `scale` is given.
fn example_pass(model: &mut FusionModel, ex: &Example<'_>, scale: Option<f64>) -> Result<(f64, usize)> {
    check_label(model, ex.label)?;
    let (loss, predicted, grads, vars) = {
        let mut g = Graph::new();
        let v = g.leaf(&ex.visual);
        let a = ex.audio.map(|t| g.leaf(t));
        let fwd = model.record(&mut g, v, a)?;
        let loss = g.softmax_cross_entropy(fwd.scores, ex.label)?;
        let predicted = argmax(g.value(fwd.scores));
        let loss_value = g.value(loss)[0];
        let grads = match scale {
            Some(_) if loss_value.is_finite() => Some(g.backward(loss)?),
            _ => None,
        };
        (loss_value, predicted, grads, fwd.params)
    };
    if let (Some(grads), Some(scale)) = (grads, scale) {
        for (var, p) in vars.into_iter().zip(model.parameters_mut()) {
            grads.accumulate_into(var, p, scale)?;
        }
    }
    Ok((loss, predicted))
}

/// Forward, mean cross-entropy over the batch, backward, one Adam update,
/// gradient reset.
pub fn train_step(model: &mut FusionModel, adam: &mut AdamState, batch: &[Example<'_>]) -> Result<BatchStats> {
    if batch.is_empty() {
        bail!(Config, "empty batch");
    }
    let scale = 1.0 / batch.len() as f64;
    let mut stats = BatchStats::default();
    for (i, ex) in batch.iter().enumerate() {
        let (loss, predicted) = example_pass(model, ex, Some(scale))?;
        if !loss.is_finite() {
            model.zero_grad();
            bail!(Numeric, "non-finite loss {loss} at batch position {i} (label {})", ex.label);
        }
        stats.loss_sum += loss;
        stats.correct += usize::from(predicted == ex.label);
        stats.count += 1;
    }
    adam.step(model.parameters_mut())?;
    model.zero_grad();
    Ok(stats)
}

fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Seed of augmented copy `variant` of training clip `clip`.
pub fn augment_seed(base: u64, clip: usize, variant: usize) -> u64 {
    base.wrapping_add((clip as u64) << 16).wrapping_add(variant as u64)
}

/// Trains until `max_epochs` or until validation accuracy has not improved
/// for `patience` epochs, returning the best snapshot.
pub fn train(
    mut model: FusionModel,
    train_set: &[ClipSample],
    val_set: &[ClipSample],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        bail!(Config, "training set is empty");
    }
    let mut adam = AdamState::new(config.adam, model.parameters().into_iter().map(|(_, t)| t))?;
    let copies = config.augment.copies;
    let mut reports = Vec::new();
    let mut best: Option<(f64, usize, FusionModel)> = None;
    let mut stale = 0;

    for epoch in 0..config.max_epochs {
        let started = observer.now_seconds();
        let mut order: Vec<(usize, usize)> = (0..train_set.len())
            .flat_map(|c| (0..=copies).map(move |v| (c, v)))
            .collect();
        order.shuffle(&mut shuffle_rng(config.shuffle_seed, epoch));

        let mut totals = BatchStats::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = chunk
                .iter()
                .map(|&(c, v)| {
                    let s = &train_set[c];
                    let visual = if v == 0 {
                        Cow::Borrowed(&s.visual)
                    } else {
                        Cow::Owned(augment(&s.visual, augment_seed(config.augment_seed, c, v), &config.augment)?)
                    };
                    Ok(Example { visual, audio: s.audio.as_ref(), label: s.label })
                })
                .collect::<Result<Vec<_>>>()?;
            let stats = train_step(&mut model, &mut adam, &batch).map_err(|e| {
                let clips: Vec<usize> = chunk.iter().map(|p| p.0).collect();
                e.context(alloc::format!("epoch {epoch}, batch {b}, clips {clips:?}"))
            })?;
            totals.loss_sum += stats.loss_sum;
            totals.correct += stats.correct;
            totals.count += stats.count;
        }
        if !model.is_finite() {
            bail!(Numeric, "parameters became non-finite during epoch {epoch}");
        }

        let val = if val_set.is_empty() { None } else { Some(evaluate(&model, val_set)?) };
        let report = EpochReport {
            epoch,
            train_loss: totals.loss_sum / totals.count as f64,
            train_accuracy: totals.correct as f64 / totals.count as f64,
            val_loss: val.as_ref().map(|v| v.loss),
            val_accuracy: val.as_ref().map(|v| v.accuracy),
            wall_seconds: observer.now_seconds() - started,
        };
        observer.on_epoch(&report);
        reports.push(report);

        if let Some(v) = val {
            let improved = best.as_ref().map_or(true, |(acc, _, _)| v.accuracy > *acc);
            if improved {
                best = Some((v.accuracy, epoch, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if config.patience > 0 && stale >= config.patience {
                    break;
                }
            }
        }
    }

    Ok(match best {
        Some((acc, epoch, snapshot)) => TrainOutcome {
            model: snapshot,
            reports,
            best_epoch: epoch,
            best_val_accuracy: Some(acc),
        },
        None => TrainOutcome {
            best_epoch: reports.len() - 1,
            model,
            reports,
            best_val_accuracy: None,
        },
    })
}

/// Mean cross-entropy, accuracy and confusion matrix over `set`.
pub fn evaluate(model: &FusionModel, set: &[ClipSample]) -> Result<Evaluation> {
    evaluate_batched(model, set, set.len().max(1))
}

/// Same as [`evaluate`], with the loss formed as a size-weighted mean of
/// per-batch means.
pub fn evaluate_batched(model: &FusionModel, set: &[ClipSample], batch_size: usize) -> Result<Evaluation> {
    if set.is_empty() {
        bail!(Config, "evaluation set is empty");
    }
    if batch_size == 0 {
        bail!(Config, "batch size must be at least 1");
    }
    let mut confusion = Confusion::new(model.config.n_classes);
    let mut weighted = 0.0;
    for chunk in set.chunks(batch_size) {
        let mut sum = 0.0;
        for s in chunk {
            check_label(model, s.label)?;
            let mut g = Graph::new();
            let v = g.leaf(&s.visual);
            let a = s.audio.as_ref().map(|t| g.leaf(t));
            let fwd = model.record(&mut g, v, a)?;
            let loss = g.softmax_cross_entropy(fwd.scores, s.label)?;
            sum += g.value(loss)[0];
            confusion.record(s.label, argmax(g.value(fwd.scores)));
        }
        weighted += (sum / chunk.len() as f64) * chunk.len() as f64;
    }
    Ok(Evaluation {
        loss: weighted / set.len() as f64,
        accuracy: confusion.accuracy(),
        confusion,
    })
}
