//! Inventory-constrained decoding and whole-song planning.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::index::StyleInventory;
use crate::prompt::{prompt_vector, PromptConstraints, PromptVector, Registry, RELAX_ORDER};
use crate::song::{Axis, SectionLabel, Song, StyleVector};

use super::context::encode_context;
use super::model::{PlannerModel, SlotDistributions};
use super::{DecodeMode, PlannerError};

/// Anything that yields slot distributions for a measure.
pub trait SlotPredictor: Sync {
    fn predict(&self, song: &Song, known: &[Option<StyleVector>], t: usize, prompt: &PromptVector) -> Result<SlotDistributions, PlannerError>;
}

impl SlotPredictor for PlannerModel<f32> {
    fn predict(&self, song: &Song, known: &[Option<StyleVector>], t: usize, prompt: &PromptVector) -> Result<SlotDistributions, PlannerError> {
        let ctx = encode_context(song, known, t, &self.config, prompt)?;
        Ok(self.forward(&ctx))
    }
}

/// Returns the same distributions for every measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPredictor(pub SlotDistributions);

impl ConstantPredictor {
    /// Puts all mass on the labels of `style`.
    pub fn of_style(style: StyleVector) -> Self {
        ConstantPredictor(SlotDistributions(Axis::ALL.map(|a| {
            let mut d = vec![0.0; a.size()];
            d[style.get(a) as usize] = 1.0;
            d
        })))
    }
}

impl SlotPredictor for ConstantPredictor {
    fn predict(&self, song: &Song, _: &[Option<StyleVector>], t: usize, _: &PromptVector) -> Result<SlotDistributions, PlannerError> {
        if t >= song.measures.len() {
            return Err(PlannerError::IndexOutOfRange(t));
        }
        Ok(self.0.clone())
    }
}

/// Σ log p(s_j) + λπ log π(s) − λa d_H(s, anchor).
pub fn score_style(dists: &SlotDistributions, s: &StyleVector, prior: f64, lambda_prior: f64, anchor: Option<&StyleVector>, lambda_anchor: f64) -> f64 {
    let mut score: f64 = Axis::ALL.iter().map(|a| dists.axis(*a)[s.get(*a) as usize].ln()).sum();
    if lambda_prior != 0.0 {
        score += lambda_prior * prior.ln();
    }
    if let Some(a) = anchor.filter(|_| lambda_anchor != 0.0) {
        score -= lambda_anchor * s.hamming(a) as f64;
    }
    score
}

fn better(a: (f64, usize, &StyleVector), b: (f64, usize, &StyleVector)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && (a.1 > b.1 || (a.1 == b.1 && a.2 < b.2)))
}

/// Chooses a style among `candidates` (vectors with counts out of `total`).
#[allow(clippy::too_many_arguments)]
pub fn project_to_inventory<R: Rng>(
    dists: &SlotDistributions,
    candidates: &[(StyleVector, usize)],
    total: usize,
    lambda_prior: f64,
    anchor: Option<&StyleVector>,
    lambda_anchor: f64,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<StyleVector, PlannerError> {
    if candidates.is_empty() {
        return Err(PlannerError::EmptyInventory(0));
    }
    let total = total.max(1) as f64;
    let scored: Vec<(f64, usize, &StyleVector)> = candidates
        .iter()
        .map(|(s, n)| (score_style(dists, s, *n as f64 / total, lambda_prior, anchor, lambda_anchor), *n, s))
        .collect();
    let best = scored.iter().copied().reduce(|a, b| if better(b, a) { b } else { a }).unwrap();
    match mode {
        DecodeMode::Map => Ok(*best.2),
        DecodeMode::Sample { temperature, top_k, top_p } => {
            if !best.0.is_finite() || temperature <= 0.0 {
                return Ok(*best.2);
            }
            let mut ranked = scored.clone();
            ranked.sort_by(|a, b| if better(*a, *b) { std::cmp::Ordering::Less } else if better(*b, *a) { std::cmp::Ordering::Greater } else { std::cmp::Ordering::Equal });
            if let Some(k) = top_k {
                ranked.truncate(k.max(1));
            }
            let weights: Vec<f64> = ranked.iter().map(|r| ((r.0 - best.0) / temperature).exp()).collect();
            let z: f64 = weights.iter().sum();
            let mut probs: Vec<f64> = weights.iter().map(|w| w / z).collect();
            if let Some(p) = top_p {
                let mut acc = 0.0;
                let mut keep = probs.len();
                for (i, q) in probs.iter().enumerate() {
                    acc += q;
                    if acc >= p {
                        keep = i + 1;
                        break;
                    }
                }
                probs.truncate(keep);
                let z: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|q| *q /= z);
            }
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, q) in probs.iter().enumerate() {
                acc += q;
                if u < acc {
                    return Ok(*ranked[i].2);
                }
            }
            Ok(*ranked[probs.len() - 1].2)
        }
    }
}

fn weighted_hamming(a: &StyleVector, b: &StyleVector) -> f64 {
    Axis::ALL.iter().filter(|x| a.get(**x) != b.get(**x)).map(|x| if *x == Axis::Texture { 1.5 } else { 1.0 }).sum()
}

/// Nearest inventory vector under a weighted Hamming metric, honoring pinned slots.
pub fn snap_style(s: &StyleVector, inv: &StyleInventory, length_beats: u8, pins: &[(Axis, u8)]) -> Result<StyleVector, PlannerError> {
    let counts = inv.counts(length_beats).ok_or(PlannerError::EmptyInventory(length_beats))?;
    let mut best: Option<(f64, usize, StyleVector)> = None;
    for (v, n) in counts {
        if pins.iter().any(|(a, l)| v.get(*a) != *l) {
            continue;
        }
        let d = weighted_hamming(s, v);
        let take = match &best {
            None => true,
            Some((bd, bn, bv)) => d < *bd || (d == *bd && (*n > *bn || (*n == *bn && v < bv))),
        };
        if take {
            best = Some((d, *n, *v));
        }
    }
    best.map(|b| b.2).ok_or(PlannerError::PinsInfeasible)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanOptions {
    pub keywords: Vec<String>,
    pub section_keywords: BTreeMap<SectionLabel, Vec<String>>,
    pub lambda_prior: f64,
    pub lambda_anchor: f64,
    /// Anchors supplied by the caller; otherwise derived from each section's first pass.
    pub anchors: Option<BTreeMap<SectionLabel, StyleVector>>,
    /// Restrict decoding to the prompt's feasible set.
    pub hard_prompt: bool,
    pub mode: DecodeMode,
    pub seed: u64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            keywords: Vec::new(),
            section_keywords: BTreeMap::new(),
            lambda_prior: 0.5,
            lambda_anchor: 0.0,
            anchors: None,
            hard_prompt: true,
            mode: DecodeMode::Map,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedSong {
    pub styles: Vec<StyleVector>,
    pub distributions: Vec<SlotDistributions>,
    /// Prompt axes dropped per measure to reach a feasible set.
    pub relaxed: Vec<Vec<Axis>>,
}

fn modal(styles: &[StyleVector]) -> Option<StyleVector> {
    let mut counts: BTreeMap<StyleVector, usize> = BTreeMap::new();
    for s in styles {
        *counts.entry(*s).or_default() += 1;
    }
    counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(s, _)| *s)
}

/// Plans a style vector for every measure, left to right.
pub fn plan_song(predictor: &dyn SlotPredictor, song: &Song, inv: &StyleInventory, opts: &PlanOptions) -> Result<PlannedSong, PlannerError> {
    let registry = Registry::builtin();
    let global = registry.merge(&opts.keywords)?;
    let mut per_section: BTreeMap<SectionLabel, PromptConstraints> = BTreeMap::new();
    for (label, kws) in &opts.section_keywords {
        per_section.insert(*label, global.combine(&registry.merge(kws)?));
    }
    let pooled: Vec<(StyleVector, usize)> = inv.pooled().into_iter().collect();
    if pooled.is_empty() {
        return Err(PlannerError::EmptyInventory(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = song.measures.len();
    let mut known: Vec<Option<StyleVector>> = vec![None; n];
    let mut out = PlannedSong { styles: Vec::with_capacity(n), distributions: Vec::with_capacity(n), relaxed: Vec::with_capacity(n) };
    let mut anchors: BTreeMap<SectionLabel, StyleVector> = opts.anchors.clone().unwrap_or_default();
    let derive_anchors = opts.anchors.is_none();
    let mut run_start = 0;
    for t in 0..n {
        let m = &song.measures[t];
        if t > 0 && song.measures[t - 1].section_label != m.section_label {
            let prev = song.measures[t - 1].section_label;
            if derive_anchors && !anchors.contains_key(&prev) {
                if let Some(a) = modal(&out.styles[run_start..t]) {
                    anchors.insert(prev, a);
                }
            }
            run_start = t;
        }
        let constraints = per_section.get(&m.section_label).unwrap_or(&global);
        let dists = predictor.predict(song, &known, t, &prompt_vector(constraints))?;
        let (mut candidates, total): (Vec<(StyleVector, usize)>, usize) = match inv.counts(m.length_beats) {
            Some(c) => (c.iter().map(|(s, n)| (*s, *n)).collect(), inv.total(m.length_beats)),
            None => (pooled.clone(), pooled.iter().map(|p| p.1).sum()),
        };
        let mut relaxed = Vec::new();
        if opts.hard_prompt && !constraints.is_unconstrained() {
            let mut c = constraints.clone();
            let mut order = RELAX_ORDER.iter();
            loop {
                if candidates.iter().any(|(s, _)| c.permits(s)) {
                    candidates.retain(|(s, _)| c.permits(s));
                    break;
                }
                match order.next() {
                    Some(axis) => {
                        if c.axis(*axis).restricts() {
                            c = c.without_axis(*axis);
                            relaxed.push(*axis);
                        }
                    }
                    None => break,
                }
            }
        }
        let anchor = anchors.get(&m.section_label);
        let s = project_to_inventory(&dists, &candidates, total, opts.lambda_prior, anchor, opts.lambda_anchor, opts.mode, &mut rng)?;
        known[t] = Some(s);
        out.styles.push(s);
        out.distributions.push(dists);
        out.relaxed.push(relaxed);
    }
    Ok(out)
}
