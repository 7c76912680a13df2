//! Loss, accuracy, the Adam optimizer, early stopping and the mini-batch
//! training loop.
//!
//! Each sample is run on its own tape; per-sample gradients are summed in
//! batch order and divided by the batch size, so a run is fully determined
//! by the model spec, the samples and the [`TrainingConfig`].

mod history;

use serde::{Deserialize, Serialize};

use crate::arch::ModelSpec;
use crate::data::{train_count, ClipSample, DatasetManifest};
use crate::error::{Error, Result};
use crate::nn::{Mode, ParameterStore};
use crate::tensor::{self, Rng, Scalar, Tape, Tensor};

pub use history::{format_g6, EpochRecord, History};

/// Adam first-moment decay.
pub const BETA1: f64 = 0.9;
/// Adam second-moment decay.
pub const BETA2: f64 = 0.999;
/// Adam denominator offset.
pub const ADAM_EPSILON: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    pub min_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub validation_split: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            max_epochs: 20,
            min_epochs: 15,
            batch_size: 10,
            learning_rate: 0.001,
            patience: 5,
            validation_split: 0.1,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return fail("validation_split must lie strictly between 0 and 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.max_epochs == 0 || self.min_epochs > self.max_epochs {
            return fail("max_epochs must be positive and at least min_epochs");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        Ok(())
    }
}

/// One-hot row of length `classes` with a 1 at `label`.
pub fn one_hot<F: Scalar>(label: usize, classes: usize) -> Result<Tensor<F>> {
    if label >= classes {
        return Err(Error::Label(format!("label {label} out of range for {classes} classes")));
    }
    let mut t = Tensor::zeros([classes]);
    t.data_mut()[label] = F::one();
    Ok(t)
}

fn require_rows<F: Scalar>(op: &'static str, pred: &Tensor<F>, truth: &Tensor<F>) -> Result<()> {
    if pred.rank() != 2 || pred.shape() != truth.shape() {
        return Err(Error::shape(
            op,
            format!("expected matching [B,C], got {:?} and {:?}", pred.shape(), truth.shape()),
        ));
    }
    Ok(())
}

/// Mean over rows of `-Σ y·ln(clamp(p, 1e-7, 1-1e-7))`.
pub fn categorical_crossentropy<F: Scalar>(pred: &Tensor<F>, truth: &Tensor<F>) -> Result<F> {
    require_rows("categorical_crossentropy", pred, truth)?;
    tensor::cross_entropy(pred, truth)
}

/// Fraction of rows whose prediction argmax equals the truth argmax.
pub fn accuracy<F: Scalar>(pred: &Tensor<F>, truth: &Tensor<F>) -> Result<f64> {
    require_rows("accuracy", pred, truth)?;
    let c = pred.shape()[1];
    let hits = pred
        .data()
        .chunks_exact(c)
        .zip(truth.data().chunks_exact(c))
        .filter(|(p, t)| tensor::argmax(p) == tensor::argmax(t))
        .count();
    Ok(hits as f64 / pred.shape()[0] as f64)
}

/// Adam moment buffers, aligned with the iteration order of the
/// [`ParameterStore`] they were created for.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F = f32> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ParameterStore<F>) -> Self {
        let zeros: Vec<Vec<F>> = params.iter().map(|p| vec![F::zero(); p.value.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam update of every trainable parameter. `grads` is aligned with
/// the store's iteration order; entries for frozen parameters are ignored.
pub fn adam_step<F: Scalar>(
    params: &mut ParameterStore<F>,
    grads: &[Option<Vec<F>>],
    state: &mut AdamState<F>,
    learning_rate: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Config("gradients and optimizer state do not match the parameters".into()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.trainable && g.as_ref().is_none_or(|g| g.len() != p.value.len()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
    }
    state.t += 1;
    let b1 = F::from_f64(BETA1);
    let b2 = F::from_f64(BETA2);
    let c1 = F::from_f64(1.0 - BETA1.powi(state.t as i32));
    let c2 = F::from_f64(1.0 - BETA2.powi(state.t as i32));
    let (lr, eps) = (F::from_f64(learning_rate), F::from_f64(ADAM_EPSILON));
    let (one, m_all, v_all) = (F::one(), &mut state.m, &mut state.v);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m_all).zip(v_all) {
        if !p.trainable {
            continue;
        }
        let g = g.as_ref().expect("checked above");
        for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops once the best validation loss so far has not strictly improved
/// for `patience` epochs and at least `min_epochs` epochs have run.
pub fn early_stopping_check(val_losses: &[f64], patience: usize, min_epochs: usize) -> StopDecision {
    let Some(best) = best_epoch_index(val_losses) else {
        return StopDecision::Continue;
    };
    let stale = val_losses.len() - 1 - best;
    if stale >= patience && val_losses.len() >= min_epochs {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// Index of the first strict minimum.
fn best_epoch_index(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &l) in losses.iter().enumerate() {
        if best.is_none_or(|b| l < losses[b]) {
            best = Some(i);
        }
    }
    best
}

/// Loss, prediction and (in training) parameter gradients for one clip.
struct SampleResult {
    loss: f64,
    correct: bool,
    grads: Vec<Option<Vec<f32>>>,
}

fn run_sample(
    spec: &ModelSpec,
    params: &ParameterStore<f32>,
    sample: &ClipSample,
    mode: &mut Mode<'_>,
    want_grads: bool,
) -> Result<SampleResult> {
    let truth = one_hot::<f32>(sample.label_index, spec.num_classes)?;
    if !want_grads {
        let pred = spec.predict(params, &sample.frames)?;
        return Ok(SampleResult {
            loss: tensor::cross_entropy(&pred, &truth)? as f64,
            correct: pred.argmax() == sample.label_index,
            grads: Vec::new(),
        });
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.constant(sample.frames.clone());
    let y = spec.forward(&mut tape, &bound, x, mode)?;
    let loss = tape.cross_entropy(y, &truth)?;
    tape.backward(loss)?;
    let grads = params
        .iter()
        .map(|p| {
            if !p.trainable {
                return Ok(None);
            }
            let var = bound.get(&p.name)?;
            Ok(Some(match tape.grad(var) {
                Some(g) => g.into_data(),
                None => vec![0.0; p.value.len()],
            }))
        })
        .collect::<Result<_>>()?;
    Ok(SampleResult {
        loss: tape.value(loss).data()[0] as f64,
        correct: tape.value(y).argmax() == sample.label_index,
        grads,
    })
}

/// Mean loss and accuracy of `samples` in inference mode.
pub fn evaluate_samples(spec: &ModelSpec, params: &ParameterStore<f32>, samples: &[&ClipSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluate"));
    }
    let (mut loss, mut hits) = (0.0, 0usize);
    for s in samples {
        let r = run_sample(spec, params, s, &mut Mode::Inference, false)?;
        loss += r.loss;
        hits += r.correct as usize;
    }
    let n = samples.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Initializes parameters from `cfg.seed` and trains on `manifest.train`.
pub fn fit(
    spec: &ModelSpec,
    manifest: &DatasetManifest,
    cfg: &TrainingConfig,
) -> Result<(ParameterStore<f32>, History)> {
    fit_from(spec, initial_params(spec, cfg)?, &manifest.train, cfg, |_| {})
}

/// Freshly initialized weights for `spec`, derived from `cfg.seed`.
pub fn initial_params(spec: &ModelSpec, cfg: &TrainingConfig) -> Result<ParameterStore<f32>> {
    let mut seeds = Rng::new(cfg.seed);
    spec.init_params(&mut Rng::new(seeds.next_u64()))
}

/// Trains `params` on `samples`. The last `validation_split` share of a
/// seeded shuffle is held out once; the rest is reshuffled every epoch
/// (when `cfg.shuffle`) and consumed in mini-batches. `on_epoch` sees each
/// record as soon as it is complete. Returns the final-epoch weights.
pub fn fit_from(
    spec: &ModelSpec,
    mut params: ParameterStore<f32>,
    samples: &[ClipSample],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ParameterStore<f32>, History)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.label_index >= spec.num_classes) {
        return Err(Error::Label(format!("clip {} has label {} beyond the model's classes", s.clip_id, s.label_index)));
    }
    let mut seeds = Rng::new(cfg.seed);
    seeds.next_u64();
    let mut rng = Rng::new(seeds.next_u64());

    let mut order: Vec<usize> = (0..samples.len()).collect();
    rng.shuffle(&mut order);
    let n_train = train_count(samples.len(), 1.0 - cfg.validation_split);
    if n_train == 0 {
        return Err(Error::Dataset("validation split leaves no training samples".into()));
    }
    if n_train == samples.len() {
        return Err(Error::Dataset("validation split leaves zero validation samples".into()));
    }
    let val: Vec<&ClipSample> = order[n_train..].iter().map(|&i| &samples[i]).collect();
    let mut train_idx = order[..n_train].to_vec();

    let mut state = AdamState::new(&params);
    let mut history = History::default();
    let mut val_losses = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            rng.shuffle(&mut train_idx);
        }
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in train_idx.chunks(cfg.batch_size) {
            let mut acc: Vec<Option<Vec<f32>>> = params
                .iter()
                .map(|p| p.trainable.then(|| vec![0.0; p.value.len()]))
                .collect();
            for &i in batch {
                let r = run_sample(spec, &params, &samples[i], &mut Mode::Training(&mut rng), true)?;
                loss_sum += r.loss;
                hits += r.correct as usize;
                for (a, g) in acc.iter_mut().zip(r.grads) {
                    if let (Some(a), Some(g)) = (a.as_mut(), g) {
                        for (a, g) in a.iter_mut().zip(g) {
                            *a += g;
                        }
                    }
                }
            }
            let n = batch.len() as f32;
            for a in acc.iter_mut().flatten() {
                a.iter_mut().for_each(|v| *v /= n);
            }
            adam_step(&mut params, &acc, &mut state, cfg.learning_rate)?;
        }
        let (val_loss, val_accuracy) = evaluate_samples(spec, &params, &val)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n_train as f64,
            train_accuracy: hits as f64 / n_train as f64,
            val_loss,
            val_accuracy,
        };
        on_epoch(&record);
        history.records.push(record);
        val_losses.push(val_loss);
        if early_stopping_check(&val_losses, cfg.patience, cfg.min_epochs) == StopDecision::Stop {
            history.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    history.best_epoch = best_epoch_index(&val_losses).map_or(0, |i| i + 1);
    Ok((params, history))
}
