//! Plan realization by energy-based retrieval: staged candidate pools,
//! reharmonization, itemized energies, gated Boltzmann selection and a forced
//! fallback that always returns a measure when one of the right length exists.

mod energy;
mod generate;
mod pool;
mod reharm;
mod select;
mod state;

use serde::{Deserialize, Serialize};

pub use energy::{
    diversity_penalty, drift_penalty, quality_energy, style_distance, style_energy, voice_leading_energy, DiversityTerms,
    MatchCounts, StyleReject, VoiceLeadingContext,
};
pub use generate::{generate_song, measure_target, Generated, MeasureLog, SectionHealth, FORCED_STAGE};
pub use pool::{beat_stage, build_candidate_pool, is_weak_beat, role_ok, stage_accepts, CandidatePool, Target, STAGES};
pub use reharm::{reharmonize, BeatPolicy, ReharmLimits, Reharmonized, RejectReason};
pub use select::{select, Scored};
pub use state::GenerationState;

#[derive(Debug, thiserror::Error)]
pub enum RetrieverError {
    #[error("qualities have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no corpus measure is {0} beats long")]
    CorpusExhausted(u8),
    #[error("plan has {plan} entries for {measures} measures")]
    PlanLength { plan: usize, measures: usize },
    #[error("invalid retriever config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMode {
    Map,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverConfig {
    pub alpha_wild: f64,
    pub alpha_miss: f64,
    pub alpha_fam: f64,
    pub alpha_sus: f64,
    pub alpha_cross: f64,
    pub alpha_mismatch: f64,
    pub lambda_leap: f64,
    /// Leap threshold in semitones.
    pub tau: f64,
    pub lambda_rest: f64,
    pub lambda_cross: f64,
    pub lambda_par: f64,
    pub lambda_antic: f64,
    /// Added when the final measure's bass does not land on the tonic.
    pub lambda_tonic: f64,
    /// Cadential source mid-phrase, or a non-cadential source at a cadence.
    pub role_penalty: f64,
    pub style_weights: [f64; 6],
    pub style_cap: f64,
    /// Weight of the style term in the total.
    pub style_weight: f64,
    pub rho_phrase: f64,
    pub rho_song: f64,
    pub drift_weight: f64,
    /// Band widening as a fraction of the feature's corpus range.
    pub drift_tolerance: f64,
    pub repeat_allowance: usize,
    pub cooldown: usize,
    pub repeat_penalty: f64,
    pub cooldown_penalty: f64,
    pub harmonic_change_multiplier: f64,
    pub target_unique_ratio: f64,
    /// Consecutive-repeat share above which the penalties scale up.
    pub target_repeat_ratio: f64,
    pub adaptive_scale_max: f64,
    pub reuse_phrase: f64,
    pub reuse_section: f64,
    pub reuse_song: f64,
    pub boundary_novelty: bool,
    pub delta_vl: f64,
    pub temperature: f64,
    pub top_k: usize,
    pub mode: SelectMode,
    pub min_pool: usize,
    pub max_mean_shift: f64,
    pub max_register_drift: f64,
    pub min_chord_tone_ratio: f64,
    pub strong_policy: BeatPolicy,
    pub weak_policy: BeatPolicy,
    pub seed: u64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            alpha_wild: 0.3,
            alpha_miss: 0.5,
            alpha_fam: 0.5,
            alpha_sus: 0.8,
            alpha_cross: 1.5,
            alpha_mismatch: 3.0,
            lambda_leap: 2.0,
            tau: 12.0,
            lambda_rest: 1.0,
            lambda_cross: 2.0,
            lambda_par: 2.0,
            lambda_antic: 1.0,
            lambda_tonic: 1.0,
            role_penalty: 1.0,
            style_weights: [1.0, 1.0, 1.0, 1.0, 1.5, 1.0],
            style_cap: 3.0,
            style_weight: 1.0,
            rho_phrase: 0.15,
            rho_song: 0.10,
            drift_weight: 2.0,
            drift_tolerance: 0.05,
            repeat_allowance: 1,
            cooldown: 8,
            repeat_penalty: 1.5,
            cooldown_penalty: 3.0,
            harmonic_change_multiplier: 1.5,
            target_unique_ratio: 0.6,
            target_repeat_ratio: 0.05,
            adaptive_scale_max: 3.0,
            reuse_phrase: 1.0,
            reuse_section: 0.5,
            reuse_song: 0.25,
            boundary_novelty: true,
            delta_vl: 4.0,
            temperature: 0.7,
            top_k: 8,
            mode: SelectMode::Sample,
            min_pool: 3,
            max_mean_shift: 3.0,
            max_register_drift: 5.0,
            min_chord_tone_ratio: 0.5,
            strong_policy: BeatPolicy::Strict,
            weak_policy: BeatPolicy::Gesture,
            seed: 0,
        }
    }
}

impl RetrieverConfig {
    /// Same config with every repetition, cooldown and reuse term switched off.
    pub fn without_diversity(&self) -> Self {
        RetrieverConfig {
            repeat_penalty: 0.0,
            cooldown_penalty: 0.0,
            reuse_phrase: 0.0,
            reuse_section: 0.0,
            reuse_song: 0.0,
            boundary_novelty: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), RetrieverError> {
        let weights = [
            self.alpha_wild,
            self.alpha_miss,
            self.alpha_fam,
            self.alpha_sus,
            self.alpha_cross,
            self.alpha_mismatch,
            self.lambda_leap,
            self.lambda_rest,
            self.lambda_cross,
            self.lambda_par,
            self.lambda_antic,
            self.lambda_tonic,
            self.role_penalty,
            self.style_cap,
            self.style_weight,
            self.drift_weight,
            self.drift_tolerance,
            self.repeat_penalty,
            self.cooldown_penalty,
            self.reuse_phrase,
            self.reuse_section,
            self.reuse_song,
            self.delta_vl,
            self.max_mean_shift,
            self.max_register_drift,
        ];
        if weights.iter().chain(&self.style_weights).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(RetrieverError::Config("weights must be finite and non-negative".into()));
        }
        if self.tau < 1.0 {
            return Err(RetrieverError::Config("tau must be at least 1".into()));
        }
        for (name, r) in [
            ("rho_phrase", self.rho_phrase),
            ("rho_song", self.rho_song),
            ("min_chord_tone_ratio", self.min_chord_tone_ratio),
            ("target_unique_ratio", self.target_unique_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(RetrieverError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.target_repeat_ratio > 0.0 && self.target_repeat_ratio <= 1.0) {
            return Err(RetrieverError::Config("target_repeat_ratio must lie in (0, 1]".into()));
        }
        if !(self.temperature > 0.0) || self.top_k == 0 || self.min_pool == 0 {
            return Err(RetrieverError::Config("temperature, top_k and min_pool must be positive".into()));
        }
        if self.harmonic_change_multiplier < 1.0 || self.adaptive_scale_max < 1.0 {
            return Err(RetrieverError::Config("multipliers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Itemized energy of one candidate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub e_qual: f64,
    pub e_vl: f64,
    pub e_style: f64,
    pub e_drift: f64,
    pub e_diversity: f64,
    pub e_role: f64,
    pub e_reuse: f64,
    pub total: f64,
    pub stage: u8,
    pub counts: MatchCounts,
}

impl EnergyBreakdown {
    pub fn sum_parts(&self) -> f64 {
        self.e_qual + self.e_vl + self.e_style + self.e_drift + self.e_diversity + self.e_role + self.e_reuse
    }

    pub fn finish(mut self) -> Self {
        self.total = self.sum_parts();
        self
    }
}
