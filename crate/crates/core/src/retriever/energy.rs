use serde::{Deserialize, Serialize};

use crate::harmony::{quality_match, MatchKind, QualityClass, QualityTag, RelaxStage};
use crate::index::RoleFlags;
use crate::labeler::{band_for, median, ContinuousStyleFeatures, QuantileTable};
use crate::planner::SlotDistributions;
use crate::song::{Axis, NoteEvent, PhraseRole, StyleVector, TICKS_PER_BEAT};

use super::pool::Target;
use super::state::GenerationState;
use super::{RetrieverConfig, RetrieverError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub n_wild: usize,
    pub n_miss: usize,
    pub n_fam: usize,
    pub n_sus: usize,
    pub n_cross: usize,
    pub n_mismatch: usize,
}

impl MatchCounts {
    pub fn total(&self) -> usize {
        self.n_wild + self.n_miss + self.n_fam + self.n_sus + self.n_cross + self.n_mismatch
    }
}

/// Beatwise mismatch profile and its weighted sum. A suspension against a
/// dominant target counts as a suspension; against anything else it is a
/// family match.
pub fn quality_energy(
    target: &[QualityTag],
    cand: &[QualityTag],
    stages: &[RelaxStage],
    cfg: &RetrieverConfig,
) -> Result<(f64, MatchCounts), RetrieverError> {
    if target.len() != cand.len() {
        return Err(RetrieverError::LengthMismatch(target.len(), cand.len()));
    }
    let mut c = MatchCounts::default();
    for (b, (x, y)) in target.iter().zip(cand).enumerate() {
        let stage = stages.get(b).copied().unwrap_or(RelaxStage::Strict);
        match quality_match(x, y, stage) {
            MatchKind::Exact => {}
            MatchKind::Wildcard => c.n_wild += 1,
            MatchKind::Missing => c.n_miss += 1,
            MatchKind::Family => c.n_fam += 1,
            MatchKind::SusRelated if x.quality == QualityClass::Dom => c.n_sus += 1,
            MatchKind::SusRelated => c.n_fam += 1,
            MatchKind::CrossFamily => c.n_cross += 1,
            MatchKind::Mismatch => c.n_mismatch += 1,
        }
    }
    let e = cfg.alpha_wild * c.n_wild as f64
        + cfg.alpha_miss * c.n_miss as f64
        + cfg.alpha_fam * c.n_fam as f64
        + cfg.alpha_sus * c.n_sus as f64
        + cfg.alpha_cross * c.n_cross as f64
        + cfg.alpha_mismatch * c.n_mismatch as f64;
    Ok((e, c))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VoiceMotion {
    pub motion: f64,
    pub leaps: usize,
    pub missing: usize,
    pub crossings: usize,
    pub parallels: usize,
}

/// Pairs voice `i` of `prev` with voice `i` of `next`, both ordered low to high.
/// A crossing is a pair whose order flips or a voice that passes the previous
/// pitch of its neighbor. Parallels are perfect fifths or octaves kept between
/// two voices moving in the same direction.
pub fn voice_motion(prev: &[u8], next: &[u8], tau: f64) -> VoiceMotion {
    let n = prev.len().min(next.len());
    let mut m = VoiceMotion { missing: prev.len().abs_diff(next.len()), ..Default::default() };
    for v in 0..n {
        let d = (next[v] as f64 - prev[v] as f64).abs();
        m.motion += d;
        m.leaps += (d > tau) as usize;
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a0, a1, b0, b1) = (prev[i] as i32, prev[j] as i32, next[i] as i32, next[j] as i32);
            let flipped = (a0 - a1).signum() * (b0 - b1).signum() < 0;
            let overlap = j == i + 1 && (b0 > a1 || b1 < a0);
            m.crossings += (flipped || overlap) as usize;
            let (da, db) = (b0 - a0, b1 - a1);
            let perfect = |x: i32| x != 0 && (x.rem_euclid(12) == 7 || x.rem_euclid(12) == 0);
            if da != 0 && da.signum() == db.signum() && perfect(a1 - a0) && (a1 - a0).rem_euclid(12) == (b1 - b0).rem_euclid(12) {
                m.parallels += 1;
            }
        }
    }
    m
}

/// First-onset pitches in voice order: by voice hint when every note has one,
/// otherwise low to high.
pub fn first_onset_voices(notes: &[NoteEvent]) -> Vec<u8> {
    let Some(t) = notes.iter().map(|n| n.onset).min() else { return Vec::new() };
    let mut first: Vec<&NoteEvent> = notes.iter().filter(|n| n.onset == t).collect();
    if first.iter().all(|n| n.voice_hint.is_some()) {
        first.sort_by_key(|n| (n.voice_hint, n.pitch));
    } else {
        first.sort_by_key(|n| n.pitch);
    }
    first.iter().map(|n| n.pitch).collect()
}

/// Sustained pitches that share a pitch class with, or sit within a whole tone
/// of, an onset in the first beat.
pub fn anticipation_collisions(sustained_in: &[u8], notes: &[NoteEvent]) -> usize {
    let beat1: Vec<u8> = notes.iter().filter(|n| n.onset.ticks() < TICKS_PER_BEAT).map(|n| n.pitch).collect();
    sustained_in
        .iter()
        .map(|s| beat1.iter().filter(|p| *s % 12 == **p % 12 || (1..=2).contains(&s.abs_diff(**p))).count())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiceLeadingContext<'a> {
    pub prev_voices: Option<&'a [u8]>,
    pub sustained_in: &'a [u8],
    pub final_measure: bool,
    pub tonic_pc: u8,
}

pub fn voice_leading_energy(notes: &[NoteEvent], ctx: &VoiceLeadingContext<'_>, cfg: &RetrieverConfig) -> f64 {
    let voices = first_onset_voices(notes);
    let mut e = match ctx.prev_voices {
        Some(prev) => {
            let m = voice_motion(prev, &voices, cfg.tau);
            m.motion
                + cfg.lambda_leap * m.leaps as f64
                + cfg.lambda_rest * m.missing as f64
                + cfg.lambda_cross * m.crossings as f64
                + cfg.lambda_par * m.parallels as f64
        }
        None => 0.0,
    };
    e += cfg.lambda_antic * anticipation_collisions(ctx.sustained_in, notes) as f64;
    if ctx.final_measure && voices.iter().min().map_or(true, |b| b % 12 != ctx.tonic_pc) {
        e += cfg.lambda_tonic;
    }
    e
}

pub fn role_energy(t: &Target, r: &RoleFlags, cfg: &RetrieverConfig) -> f64 {
    let mid_cadence = t.phrase_role == PhraseRole::Mid && r.cadential;
    let open_cadence = t.phrase_role.is_cadential() && !r.cadential;
    if mid_cadence || open_cadence {
        cfg.role_penalty
    } else {
        0.0
    }
}

pub fn style_distance(a: &StyleVector, b: &StyleVector, weights: &[f64; 6]) -> f64 {
    Axis::ALL.iter().filter(|x| a.get(**x) != b.get(**x)).map(|x| weights[x.index()]).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleReject {
    /// A deviation outside an annotated harmonic transition or at a song edge.
    NotPermitted,
    SlackExhausted,
    QuietGuard,
}

/// Capped style distance, and whether the candidate deviates from the plan.
#[allow(clippy::too_many_arguments)]
pub fn style_energy(
    planned: &StyleVector,
    dist: Option<&SlotDistributions>,
    cand: &StyleVector,
    features: &ContinuousStyleFeatures,
    state: &GenerationState,
    at_transition: bool,
    boundary: bool,
    onset_median: f64,
    cfg: &RetrieverConfig,
) -> Result<(f64, bool), StyleReject> {
    let quiet = Axis::Dyn.label_index("quiet").unwrap();
    let gentle = Axis::Art.label_index("gentle").unwrap();
    if planned.get(Axis::Dyn) == quiet && planned.get(Axis::Art) == gentle && features.onset_rate > onset_median {
        return Err(StyleReject::QuietGuard);
    }
    let deviates = planned != cand;
    if deviates {
        if !at_transition || boundary {
            return Err(StyleReject::NotPermitted);
        }
        if state.phrase_budget(cfg) == 0 || state.song_budget(cfg) == 0 {
            return Err(StyleReject::SlackExhausted);
        }
    }
    let d = match dist {
        Some(p) => Axis::ALL.iter().map(|a| cfg.style_weights[a.index()] * (1.0 - p.axis(*a)[cand.get(*a) as usize])).sum(),
        None => style_distance(planned, cand, &cfg.style_weights),
    };
    Ok((cfg.style_weight * d.min(cfg.style_cap), deviates))
}

/// Overshoot of the would-be running medians outside the planned labels'
/// bands, each band widened by the tolerance and normalized by the corpus range.
pub fn drift_penalty(
    state: &GenerationState,
    cand: &ContinuousStyleFeatures,
    planned: &StyleVector,
    q: &QuantileTable,
    cfg: &RetrieverConfig,
) -> f64 {
    let axes = [
        (Axis::Dyn, &state.velocity, cand.velocity_median, &q.velocity_median),
        (Axis::Art, &state.staccato, cand.staccato_ratio, &q.staccato_ratio),
        (Axis::Rhythm, &state.onset_rate, cand.onset_rate, &q.onset_rate),
    ];
    let mut e = 0.0;
    for (axis, history, x, qa) in axes {
        let Some((lo, hi)) = band_for(q, axis, planned.get(axis)) else { continue };
        let mut v: Vec<f64> = history.clone();
        v.push(x);
        let m = median(&mut v);
        let range = if qa.max > qa.min { qa.max - qa.min } else { 1.0 };
        let tol = cfg.drift_tolerance * range;
        let over = ((lo - tol) - m).max(m - (hi + tol)).max(0.0);
        e += over / range;
    }
    cfg.drift_weight * e
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiversityTerms {
    pub e_diversity: f64,
    pub e_reuse: f64,
}

/// Consecutive-repeat and cooldown penalties for a signature, scaled up when
/// the harmony changes and when the running unique or repeat ratio misses its target,
/// plus reuse costs for the same source measure.
pub fn diversity_penalty(
    state: &GenerationState,
    signature: u64,
    source: crate::index::RecordId,
    harmonic_change: bool,
    cfg: &RetrieverConfig,
) -> DiversityTerms {
    let mut rep = 0.0;
    let mut repeats = false;
    if state.prev_signature() == Some(signature) {
        let run = state.run_length + 1;
        rep += cfg.repeat_penalty * run.saturating_sub(cfg.repeat_allowance) as f64;
        repeats = true;
    }
    if let Some(age) = state.signature_age(signature).filter(|a| *a <= cfg.cooldown) {
        rep += cfg.cooldown_penalty * (cfg.cooldown + 1 - age) as f64 / cfg.cooldown as f64;
        repeats = true;
    }
    if repeats && harmonic_change {
        rep *= cfg.harmonic_change_multiplier;
    }
    let by_unique = state.observed_unique_ratio().map_or(1.0, |u| cfg.target_unique_ratio / u.max(1e-6));
    let by_repeat = state.observed_repeat_ratio().map_or(1.0, |r| r / cfg.target_repeat_ratio);
    let scale = by_unique.max(by_repeat).clamp(1.0, cfg.adaptive_scale_max);
    let (p, s, g) = state.reuse_counts(source);
    DiversityTerms {
        e_diversity: rep * scale,
        e_reuse: cfg.reuse_phrase * p as f64 + cfg.reuse_section * s as f64 + cfg.reuse_song * g as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmony::Extension;
    use crate::index::RecordId;
    use crate::song::Beats;
    use proptest::prelude::*;

    fn cfg() -> RetrieverConfig {
        RetrieverConfig::default()
    }

    fn tag(q: QualityClass) -> QualityTag {
        QualityTag::plain(q)
    }

    #[test]
    fn quality_energy_examples() {
        let t = vec![tag(QualityClass::Maj); 4];
        let (e, c) = quality_energy(&t, &t, &[RelaxStage::Strict; 4], &cfg()).unwrap();
        assert_eq!((e, c.total()), (0.0, 0));
        let mut cand = t.clone();
        cand[2] = QualityTag::with(QualityClass::Maj, &[Extension::Maj7]);
        let (e, c) = quality_energy(&t, &cand, &[RelaxStage::Family; 4], &cfg()).unwrap();
        assert_eq!((e, c.n_fam), (0.5, 1));
        assert!(quality_energy(&t, &cand[..3], &[RelaxStage::Family; 4], &cfg()).is_err());
    }

    fn all_tags() -> Vec<QualityTag> {
        let mut v: Vec<QualityTag> = QualityClass::ALL.iter().map(|q| tag(*q)).collect();
        v.push(QualityTag::with(QualityClass::Maj, &[Extension::Maj7]));
        v.push(QualityTag::with(QualityClass::Dom, &[Extension::Seven]));
        v.push(QualityTag::with(QualityClass::Min, &[Extension::Seven]));
        v
    }

    fn alpha_of(x: &QualityTag, y: &QualityTag, s: RelaxStage) -> f64 {
        let c = cfg();
        match quality_match(x, y, s) {
            MatchKind::Exact => 0.0,
            MatchKind::Wildcard => c.alpha_wild,
            MatchKind::Missing => c.alpha_miss,
            MatchKind::Family => c.alpha_fam,
            MatchKind::SusRelated => {
                if x.quality == QualityClass::Dom {
                    c.alpha_sus
                } else {
                    c.alpha_fam
                }
            }
            MatchKind::CrossFamily => c.alpha_cross,
            MatchKind::Mismatch => c.alpha_mismatch,
        }
    }

    proptest! {
        #[test]
        fn quality_energy_is_sum_of_beats(picks in proptest::collection::vec((0usize..11, 0usize..11, 0usize..4), 1..7)) {
            let tags = all_tags();
            let stages = [RelaxStage::Strict, RelaxStage::Family, RelaxStage::CrossFamily, RelaxStage::Wildcard];
            let t: Vec<QualityTag> = picks.iter().map(|p| tags[p.0].clone()).collect();
            let c: Vec<QualityTag> = picks.iter().map(|p| tags[p.1].clone()).collect();
            let s: Vec<RelaxStage> = picks.iter().map(|p| stages[p.2]).collect();
            let (e, counts) = quality_energy(&t, &c, &s, &cfg()).unwrap();
            let oracle: f64 = (0..t.len()).map(|b| alpha_of(&t[b], &c[b], s[b])).sum();
            prop_assert!((e - oracle).abs() < 1e-12);
            prop_assert!(counts.total() <= t.len());
        }
    }

    #[test]
    fn voice_motion_examples() {
        let m = voice_motion(&[48, 60, 64], &[48, 60, 64], 12.0);
        assert_eq!((m.motion, m.leaps, m.crossings), (0.0, 0, 0));
        let m = voice_motion(&[60], &[74], 12.0);
        let e = m.motion + cfg().lambda_leap * m.leaps as f64;
        assert_eq!(e, 14.0 + 2.0);
        assert!(voice_motion(&[60, 64], &[65, 59], 12.0).crossings >= 1);
        let m = voice_motion(&[60, 67], &[62, 69], 12.0);
        assert_eq!(m.parallels, 1);
        assert_eq!(voice_motion(&[60, 64, 67], &[60, 64], 12.0).missing, 1);
    }

    #[test]
    fn voice_hints_order_voices() {
        let mut a = NoteEvent::new(Beats::ZERO, Beats::whole(1), 65, 80);
        let mut b = NoteEvent::new(Beats::ZERO, Beats::whole(1), 59, 80);
        a.voice_hint = Some(0);
        b.voice_hint = Some(1);
        assert_eq!(first_onset_voices(&[b.clone(), a.clone()]), vec![65, 59]);
        b.voice_hint = None;
        assert_eq!(first_onset_voices(&[b, a]), vec![59, 65]);
    }

    #[test]
    fn anticipation_and_tonic() {
        let notes = vec![NoteEvent::new(Beats::ZERO, Beats::whole(1), 62, 80), NoteEvent::new(Beats::whole(2), Beats::whole(1), 60, 80)];
        assert_eq!(anticipation_collisions(&[60], &notes), 1);
        assert_eq!(anticipation_collisions(&[50], &notes), 1);
        assert_eq!(anticipation_collisions(&[66], &notes), 0);
        let ctx = VoiceLeadingContext { prev_voices: None, sustained_in: &[], final_measure: true, tonic_pc: 0 };
        assert_eq!(voice_leading_energy(&notes, &ctx, &cfg()), cfg().lambda_tonic);
        let tonic = vec![NoteEvent::new(Beats::ZERO, Beats::whole(1), 48, 80)];
        assert_eq!(voice_leading_energy(&tonic, &ctx, &cfg()), 0.0);
    }

    fn features(vel: f64, stac: f64, rate: f64) -> ContinuousStyleFeatures {
        ContinuousStyleFeatures {
            velocity_median: vel,
            staccato_ratio: stac,
            onset_rate: rate,
            syncopation_score: 0.0,
            register_mean: Some(60.0),
            register_span: Some(0.0),
            texture_scores: [0.0; 6],
        }
    }

    fn table() -> QuantileTable {
        let fs: Vec<ContinuousStyleFeatures> = (0..40).map(|i| features(40.0 + i as f64 * 2.0, i as f64 / 40.0, 0.5 + i as f64 * 0.1)).collect();
        crate::labeler::build_quantile_table(&fs).unwrap()
    }

    fn quiet_gentle() -> StyleVector {
        StyleVector::from_labels(["quiet", "gentle", "slow", "steady", "block", "mid"]).unwrap()
    }

    #[test]
    fn style_energy_rules() {
        let st = GenerationState::new(0);
        let p = quiet_gentle();
        let f = features(50.0, 0.0, 0.5);
        assert_eq!(style_energy(&p, None, &p, &f, &st, false, false, 1.0, &cfg()), Ok((0.0, false)));
        let other = p.with(Axis::Texture, 1);
        assert_eq!(style_energy(&p, None, &other, &f, &st, false, false, 1.0, &cfg()), Err(StyleReject::NotPermitted));
        assert_eq!(style_energy(&p, None, &other, &f, &st, true, false, 1.0, &cfg()), Err(StyleReject::SlackExhausted));
        let busy = features(50.0, 0.0, 2.0);
        assert_eq!(style_energy(&p, None, &p, &busy, &st, false, false, 1.0, &cfg()), Err(StyleReject::QuietGuard));
    }

    #[test]
    fn budget_arithmetic() {
        let mut st = GenerationState::new(0);
        st.phrase_selections = 20;
        st.song_selections = 20;
        let c = RetrieverConfig { rho_phrase: 0.1, rho_song: 0.1, ..cfg() };
        assert_eq!(st.phrase_budget(&c), 2);
    }

    #[test]
    fn drift_monotone_in_overshoot() {
        let q = table();
        let st = GenerationState::new(0);
        let p = quiet_gentle();
        let (_, hi) = band_for(&q, Axis::Dyn, 0).unwrap();
        let inside = features(hi - 1.0, 0.0, 0.5);
        assert_eq!(drift_penalty(&st, &inside, &p, &q, &cfg()), 0.0);
        let mut last = 0.0;
        for k in 1..10 {
            let e = drift_penalty(&st, &features(hi + 5.0 * k as f64, 0.0, 0.5), &p, &q, &cfg());
            assert!(e > last, "{e} {last}");
            last = e;
        }
    }

    #[test]
    fn repeat_allowance() {
        let mut st = GenerationState::new(0);
        let id = RecordId { song: 0, measure: 0 };
        let no_cooldown = RetrieverConfig { cooldown_penalty: 0.0, ..cfg() };
        assert_eq!(diversity_penalty(&st, 7, id, false, &cfg()), DiversityTerms::default());
        st.push_signature(7);
        assert_eq!(diversity_penalty(&st, 7, RecordId { song: 0, measure: 1 }, false, &no_cooldown).e_diversity, 0.0);
        // The cooldown window starts at the previous measure.
        assert!(diversity_penalty(&st, 7, RecordId { song: 0, measure: 1 }, false, &cfg()).e_diversity > 0.0);
        st.push_signature(7);
        assert!(diversity_penalty(&st, 7, RecordId { song: 0, measure: 2 }, false, &no_cooldown).e_diversity > 0.0);
        let plain = diversity_penalty(&st, 7, id, false, &cfg()).e_diversity;
        assert!(diversity_penalty(&st, 7, id, true, &cfg()).e_diversity > plain);
    }
}
