//! Masked multi-task training with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::mix;
use crate::prompt::{prompt_vector, sample_compatible_keywords, PromptConstraints, PromptVector, Registry};
use crate::song::{Axis, Song, StyleVector};

use super::context::{encode_context, Context};
use super::model::{PlannerModel, Scalar};
use super::{PlannerConfig, PlannerError};

/// Per-slot targets of one example. `permitted[j]` lists the labels a prompt
/// allows on a constrained axis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotTargets {
    pub labels: [Option<u8>; 6],
    pub permitted: [Option<Vec<u8>>; 6],
}

impl SlotTargets {
    pub fn from_style(style: StyleVector) -> Self {
        SlotTargets { labels: style.slots().map(Some), permitted: Default::default() }
    }

    pub fn with_constraints(mut self, c: &PromptConstraints) -> Self {
        self.permitted = Axis::ALL.map(|a| c.permitted(a));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub context: Context,
    pub targets: SlotTargets,
}

/// Loss and its gradient with respect to every head's logits.
pub(crate) fn loss_terms<T: Scalar>(log_probs: &[Vec<T>], targets: &SlotTargets, prompt_weight: f64) -> Result<(T, Vec<Vec<T>>), PlannerError> {
    let slots: Vec<usize> = (0..6).filter(|j| targets.labels[*j].is_some()).collect();
    if slots.is_empty() {
        return Err(PlannerError::EmptyMask);
    }
    let constrained: Vec<usize> = (0..6).filter(|j| targets.permitted[*j].as_ref().is_some_and(|p| !p.is_empty())).collect();
    let mut grads: Vec<Vec<T>> = log_probs.iter().map(|l| vec![T::zero(); l.len()]).collect();
    let inv_m = T::from(1.0 / slots.len() as f64).unwrap();
    let mut loss = T::zero();
    for &j in &slots {
        let y = targets.labels[j].unwrap() as usize;
        loss = loss - log_probs[j][y] * inv_m;
        for (k, g) in grads[j].iter_mut().enumerate() {
            let p = log_probs[j][k].exp();
            *g = *g + (p - if k == y { T::one() } else { T::zero() }) * inv_m;
        }
    }
    if prompt_weight > 0.0 && !constrained.is_empty() {
        let w = T::from(prompt_weight / constrained.len() as f64).unwrap();
        for &j in &constrained {
            let allowed = targets.permitted[j].as_ref().unwrap();
            let mass: T = allowed.iter().map(|y| log_probs[j][*y as usize].exp()).sum();
            loss = loss - w * mass.ln();
            for (k, g) in grads[j].iter_mut().enumerate() {
                let p = log_probs[j][k].exp();
                let inside = if allowed.contains(&(k as u8)) { p / mass } else { T::zero() };
                *g = *g + w * (p - inside);
            }
        }
    }
    Ok((loss, grads))
}

/// Mean cross-entropy over slots with a target, plus the weighted prompt term
/// on constrained axes. `log_probs` are per-slot log-distributions.
pub fn masked_loss(log_probs: &[Vec<f64>], targets: &SlotTargets, prompt_weight: f64) -> Result<f64, PlannerError> {
    loss_terms(log_probs, targets, prompt_weight).map(|(l, _)| l)
}

/// Masked loss where `mask` selects the slots that count.
pub fn masked_loss_over(log_probs: &[Vec<f64>], labels: &[u8; 6], mask: &[bool; 6]) -> Result<f64, PlannerError> {
    let targets = SlotTargets { labels: std::array::from_fn(|j| mask[j].then_some(labels[j])), permitted: Default::default() };
    masked_loss(log_probs, &targets, 0.0)
}

impl<T: Scalar> PlannerModel<T> {
    /// Loss and parameter gradients of one example.
    pub fn loss_and_grad(&self, sample: &Sample, dropout_seed: Option<u64>) -> Result<(T, Vec<Vec<T>>), PlannerError> {
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let cache = self.forward_cached(&sample.context, rng.as_mut());
        let (loss, d_logits) = loss_terms(&cache.log_probs, &sample.targets, self.config.prompt_constraint_weight)?;
        let mut grads = self.zero_grads();
        self.backward(&sample.context, &cache, &d_logits, &mut grads);
        Ok((loss, grads))
    }

    pub(crate) fn loss_only(&self, sample: &Sample) -> Result<T, PlannerError> {
        let cache = self.forward_cached::<ChaCha8Rng>(&sample.context, None);
        loss_terms(&cache.log_probs, &sample.targets, self.config.prompt_constraint_weight).map(|(l, _)| l)
    }
}

/// Key-normalized songs with per-measure style labels.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub songs: Vec<Song>,
    pub styles: Vec<Vec<StyleVector>>,
}

impl TrainData {
    /// Deterministic song split with at least one song on each side.
    pub fn split(&self, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let n = self.songs.len();
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        let mut val = ids[..n_val].to_vec();
        let mut train = ids[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        (train, val)
    }
}

/// One example per measure of the given songs. With `prompt_seed`, each example
/// gets a sampled compatible keyword prompt.
pub fn build_samples(data: &TrainData, songs: &[usize], cfg: &PlannerConfig, prompt_seed: Option<u64>) -> Result<Vec<Sample>, PlannerError> {
    let registry = Registry::builtin();
    let mut out = Vec::new();
    for &si in songs {
        let song = &data.songs[si];
        let known: Vec<Option<StyleVector>> = data.styles[si].iter().copied().map(Some).collect();
        for t in 0..song.measures.len() {
            let gt = data.styles[si][t];
            let (prompt, constraints) = match prompt_seed {
                Some(seed) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, si as u64, t as u64));
                    let kw = sample_compatible_keywords(&registry, &gt, &cfg.prompt_sampling, &mut rng);
                    let c = registry.merge(&kw.keywords)?;
                    (prompt_vector(&c), c)
                }
                None => (PromptVector::auto_only(), PromptConstraints::default()),
            };
            let context = encode_context(song, &known, t, cfg, &prompt)?;
            out.push(Sample { context, targets: SlotTargets::from_style(gt).with_constraints(&constraints) });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean slot accuracy over validation measures.
    pub val_accuracy: f64,
    pub slot_accuracy: [f64; 6],
}

pub struct TrainOutcome {
    pub model: PlannerModel<f32>,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    fn step(&mut self, model: &mut PlannerModel<f32>, grads: &[Vec<f32>], lr: f64) {
        const B1: f32 = 0.9;
        const B2: f32 = 0.999;
        const EPS: f32 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let lr = lr as f32;
        for (i, p) in model.params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for k in 0..p.data.len() {
                m[k] = B1 * m[k] + (1.0 - B1) * g[k];
                v[k] = B2 * v[k] + (1.0 - B2) * g[k] * g[k];
                p.data[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
            }
        }
    }
}

fn evaluate(model: &PlannerModel<f32>, samples: &[Sample]) -> (f64, f64, [f64; 6]) {
    let rows: Vec<(f64, [bool; 6])> = samples
        .par_iter()
        .map(|s| {
            let d = model.forward(&s.context);
            let lp: Vec<Vec<f64>> = d.0.iter().map(|p| p.iter().map(|x| x.max(1e-300).ln()).collect()).collect();
            let loss = masked_loss(&lp, &SlotTargets { permitted: Default::default(), ..s.targets.clone() }, 0.0).unwrap_or(0.0);
            let am = d.argmax();
            (loss, std::array::from_fn(|j| s.targets.labels[j] == Some(am[j])))
        })
        .collect();
    let n = rows.len().max(1) as f64;
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let slot: [f64; 6] = std::array::from_fn(|j| rows.iter().filter(|r| r.1[j]).count() as f64 / n);
    (loss, slot.iter().sum::<f64>() / 6.0, slot)
}

/// Trains on `train` songs and keeps the checkpoint with the best validation loss.
pub fn train(data: &TrainData, train_ids: &[usize], val_ids: &[usize], cfg: &PlannerConfig, mut on_epoch: impl FnMut(&EpochStats)) -> Result<TrainOutcome, PlannerError> {
    cfg.validate()?;
    if data.songs.len() < 2 || train_ids.is_empty() || val_ids.is_empty() {
        return Err(PlannerError::DataTooSmall(data.songs.len()));
    }
    let mut model = PlannerModel::<f32>::init(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut adam = Adam { m: model.zero_grads(), v: model.zero_grads(), t: 0 };
    let val = build_samples(data, val_ids, cfg, None)?;
    let fixed_train = if cfg.keyword_conditioning { None } else { Some(build_samples(data, train_ids, cfg, None)?) };
    let mut best: Option<(f64, usize, PlannerModel<f32>)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let resampled;
        let samples = match &fixed_train {
            Some(s) => s,
            None => {
                resampled = build_samples(data, train_ids, cfg, Some(mix(cfg.seed, 0xfeed, epoch as u64)))?;
                &resampled
            }
        };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x5eed, epoch as u64)));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let results: Vec<(f32, Vec<Vec<f32>>)> = batch
                .par_iter()
                .map(|&i| {
                    let seed = (cfg.dropout > 0.0).then(|| mix(cfg.seed, epoch as u64, i as u64));
                    model.loss_and_grad(&samples[i], seed)
                })
                .collect::<Result<_, _>>()?;
            let mut grads = model.zero_grads();
            let scale = 1.0 / batch.len() as f32;
            for (loss, g) in &results {
                total += *loss as f64;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, b)| *a += *b * scale);
                }
            }
            adam.step(&mut model, &grads, cfg.learning_rate);
        }
        let (val_loss, val_accuracy, slot_accuracy) = evaluate(&model, &val);
        let stats = EpochStats { epoch: epoch + 1, train_loss: total / samples.len().max(1) as f64, val_loss, val_accuracy, slot_accuracy };
        on_epoch(&stats);
        if best.as_ref().map_or(true, |b| val_loss < b.0) {
            best = Some((val_loss, epoch + 1, model.clone()));
        }
        epochs.push(stats);
    }
    let (_, best_epoch, best_model) = best.unwrap_or((f64::NAN, 0, model));
    Ok(TrainOutcome { model: best_model, epochs, best_epoch })
}
