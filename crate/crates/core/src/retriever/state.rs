use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::index::RecordId;
use crate::labeler::ContinuousStyleFeatures;
use crate::song::NoteEvent;

use super::energy::first_onset_voices;
use super::RetrieverConfig;

/// History carried from one selection to the next.
#[derive(Debug, Clone)]
pub struct GenerationState {
    pub prev_voices: Option<Vec<u8>>,
    /// Pitches of the previous selection still sounding at the bar line.
    pub sustained: Vec<u8>,
    pub signatures: Vec<u64>,
    last_seen: HashMap<u64, usize>,
    /// Consecutive repeats of the previous signature.
    pub run_length: usize,
    unique: BTreeSet<u64>,
    repeats: usize,
    pub phrase_selections: usize,
    pub phrase_deviations: usize,
    pub song_selections: usize,
    pub song_deviations: usize,
    pub velocity: Vec<f64>,
    pub staccato: Vec<f64>,
    pub onset_rate: Vec<f64>,
    reuse_phrase: HashMap<RecordId, usize>,
    reuse_section: HashMap<RecordId, usize>,
    reuse_song: HashMap<RecordId, usize>,
    pub prev_phrase_sources: BTreeSet<RecordId>,
    pub prev_section_sources: BTreeSet<RecordId>,
    pub rng: ChaCha8Rng,
}

fn ceil_budget(rho: f64, selections: usize) -> usize {
    // Guard against 0.1 * 20 landing just above 2.
    ((rho * selections as f64) - 1e-9).ceil().max(0.0) as usize
}

impl GenerationState {
    pub fn new(seed: u64) -> Self {
        GenerationState {
            prev_voices: None,
            sustained: Vec::new(),
            signatures: Vec::new(),
            last_seen: HashMap::new(),
            run_length: 0,
            unique: BTreeSet::new(),
            repeats: 0,
            phrase_selections: 0,
            phrase_deviations: 0,
            song_selections: 0,
            song_deviations: 0,
            velocity: Vec::new(),
            staccato: Vec::new(),
            onset_rate: Vec::new(),
            reuse_phrase: HashMap::new(),
            reuse_section: HashMap::new(),
            reuse_song: HashMap::new(),
            prev_phrase_sources: BTreeSet::new(),
            prev_section_sources: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn phrase_allowance(&self, cfg: &RetrieverConfig) -> usize {
        ceil_budget(cfg.rho_phrase, self.phrase_selections)
    }

    pub fn song_allowance(&self, cfg: &RetrieverConfig) -> usize {
        ceil_budget(cfg.rho_song, self.song_selections)
    }

    /// Deviations still available in the current phrase.
    pub fn phrase_budget(&self, cfg: &RetrieverConfig) -> usize {
        self.phrase_allowance(cfg).saturating_sub(self.phrase_deviations)
    }

    pub fn song_budget(&self, cfg: &RetrieverConfig) -> usize {
        self.song_allowance(cfg).saturating_sub(self.song_deviations)
    }

    pub fn prev_signature(&self) -> Option<u64> {
        self.signatures.last().copied()
    }

    /// Selections since `sig` was last used: 1 for the previous measure.
    pub fn signature_age(&self, sig: u64) -> Option<usize> {
        self.last_seen.get(&sig).map(|i| self.signatures.len() - i)
    }

    pub fn observed_unique_ratio(&self) -> Option<f64> {
        (!self.signatures.is_empty()).then(|| self.unique.len() as f64 / self.signatures.len() as f64)
    }

    /// Share of consecutive selections that repeated a signature.
    pub fn observed_repeat_ratio(&self) -> Option<f64> {
        (self.signatures.len() > 1).then(|| self.repeats as f64 / (self.signatures.len() - 1) as f64)
    }

    pub fn push_signature(&mut self, sig: u64) {
        if self.prev_signature() == Some(sig) {
            self.run_length += 1;
            self.repeats += 1;
        } else {
            self.run_length = 0;
        }
        self.last_seen.insert(sig, self.signatures.len());
        self.unique.insert(sig);
        self.signatures.push(sig);
    }

    /// Uses of `source` in the current phrase, section and song.
    pub fn reuse_counts(&self, source: RecordId) -> (usize, usize, usize) {
        let get = |m: &HashMap<RecordId, usize>| m.get(&source).copied().unwrap_or(0);
        (get(&self.reuse_phrase), get(&self.reuse_section), get(&self.reuse_song))
    }

    pub fn start_phrase(&mut self) {
        self.prev_phrase_sources = self.reuse_phrase.keys().copied().collect();
        self.reuse_phrase.clear();
        self.phrase_selections = 0;
        self.phrase_deviations = 0;
    }

    pub fn start_section(&mut self) {
        self.prev_section_sources = self.reuse_section.keys().copied().collect();
        self.reuse_section.clear();
    }

    /// Records a selection. `deviated` debits both slack budgets.
    pub fn commit(
        &mut self,
        source: RecordId,
        signature: u64,
        notes: &[NoteEvent],
        length_ticks: i64,
        features: &ContinuousStyleFeatures,
        deviated: bool,
    ) {
        self.push_signature(signature);
        self.prev_voices = Some(first_onset_voices(notes));
        let mut s: Vec<u8> = notes.iter().filter(|n| n.end().ticks() > length_ticks).map(|n| n.pitch).collect();
        s.sort_unstable();
        s.dedup();
        self.sustained = s;
        for m in [&mut self.reuse_phrase, &mut self.reuse_section, &mut self.reuse_song] {
            *m.entry(source).or_default() += 1;
        }
        self.velocity.push(features.velocity_median);
        self.staccato.push(features.staccato_ratio);
        self.onset_rate.push(features.onset_rate);
        self.phrase_selections += 1;
        self.song_selections += 1;
        if deviated {
            self.phrase_deviations += 1;
            self.song_deviations += 1;
        }
    }
}
