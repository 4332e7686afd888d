use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::harmony::{normalization_offset, normalize_key, to_roman, ChordSymbol, KeyContext, MeasureSpan, Mode, RelaxStage};
use crate::index::{active_signature, CorpusIndex, MeasureRecord, RecordId, StyleFilter};
use crate::ingest::{ArrangedMeasure, Arrangement};
use crate::labeler::median;
use crate::planner::{snap_style, SlotDistributions};
use crate::song::{NoteEvent, SectionLabel, Song, StyleVector};

use super::energy::{diversity_penalty, drift_penalty, quality_energy, role_energy, style_distance, style_energy, voice_leading_energy, VoiceLeadingContext};
use super::pool::{beat_stage, build_candidate_pool, Target, STAGES};
use super::reharm::{reharmonize, BeatPolicy, ReharmLimits};
use super::select::{select, Scored};
use super::state::GenerationState;
use super::{EnergyBreakdown, RetrieverConfig, RetrieverError};

/// Stage number logged for forced selections.
pub const FORCED_STAGE: u8 = STAGES as u8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureLog {
    pub index: usize,
    pub section: SectionLabel,
    pub planned: StyleVector,
    pub snapped: StyleVector,
    pub chosen_style: StyleVector,
    pub stage: u8,
    pub forced: bool,
    /// Pool size at each visited ladder stage.
    pub pool_sizes: Vec<usize>,
    /// Candidates that passed reharmonization and style checks.
    pub feasible: usize,
    pub source: RecordId,
    pub source_id: String,
    pub deviated: bool,
    pub energy: EnergyBreakdown,
}

impl MeasureLog {
    pub fn strict_pool(&self) -> usize {
        self.pool_sizes.first().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionHealth {
    pub section: SectionLabel,
    pub measures: usize,
    pub strict_misses: usize,
    pub median_strict_pool: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub arrangement: Arrangement,
    pub log: Vec<MeasureLog>,
    /// Measures whose strict pool was empty.
    pub strict_misses: usize,
    pub median_strict_pool: f64,
    pub sections: Vec<SectionHealth>,
}

fn degree(c: &ChordSymbol, key: &KeyContext) -> Option<u8> {
    (!c.is_no_chord()).then(|| to_roman(c, key).degree)
}

fn transpose(notes: &[NoteEvent], semitones: i32) -> Vec<NoteEvent> {
    notes.iter().map(|x| NoteEvent { pitch: (x.pitch as i32 + semitones).clamp(0, 127) as u8, ..*x }).collect()
}

fn default_key(n: usize) -> KeyContext {
    KeyContext { tonic_pc: 0, mode: Mode::Major, span: MeasureSpan { start: 0, end: n } }
}

struct Step<'a> {
    target: Target,
    chords: &'a [ChordSymbol],
    key: KeyContext,
    dist: Option<&'a SlotDistributions>,
    harmonic_change: bool,
    policies: Vec<BeatPolicy>,
    onset_median: f64,
    /// Semitones from the normalized key back to the song's key.
    back: i32,
}

fn score<'a>(
    rec: &'a MeasureRecord,
    step: &Step<'_>,
    stage: u8,
    state: &GenerationState,
    index: &CorpusIndex,
    cfg: &RetrieverConfig,
    limits: &ReharmLimits,
    forced: bool,
) -> Option<Scored<'a>> {
    let t = &step.target;
    let reharm = reharmonize(&rec.pattern, &rec.chords, step.chords, &step.key, &step.policies, limits).ok()?;
    let (e_style, deviates) = match style_energy(
        &t.style,
        step.dist,
        &rec.style,
        &rec.features,
        state,
        step.harmonic_change,
        t.is_boundary(),
        step.onset_median,
        cfg,
    ) {
        Ok(v) => v,
        Err(_) if forced => (cfg.style_weight * style_distance(&t.style, &rec.style, &cfg.style_weights).min(cfg.style_cap), rec.style != t.style),
        Err(_) => return None,
    };
    let stages: Vec<RelaxStage> = (0..t.length_beats as usize).map(|b| beat_stage(stage.min(6), b, t)).collect();
    let (e_qual, counts) = quality_energy(&t.qual_seq, &rec.qual_seq, &stages, cfg).ok()?;
    let vl = VoiceLeadingContext {
        prev_voices: state.prev_voices.as_deref(),
        sustained_in: &state.sustained,
        final_measure: t.song_end,
        tonic_pc: step.key.mode.normalized_tonic(),
    };
    let e_vl = voice_leading_energy(&reharm.notes, &vl, cfg);
    let signature = active_signature(&transpose(&reharm.notes, step.back), t.length_beats).hash;
    let div = diversity_penalty(state, signature, rec.id, step.harmonic_change, cfg);
    let energy = EnergyBreakdown {
        e_qual,
        e_vl,
        e_style,
        e_drift: drift_penalty(state, &rec.features, &t.style, &index.quantiles, cfg),
        e_diversity: div.e_diversity,
        e_role: role_energy(t, &rec.role, cfg),
        e_reuse: div.e_reuse,
        total: 0.0,
        stage,
        counts,
    }
    .finish();
    Some(Scored { record: rec, reharm, energy, deviates, signature })
}

fn score_all<'a>(
    recs: &[&'a MeasureRecord],
    step: &Step<'_>,
    stage: u8,
    state: &GenerationState,
    index: &CorpusIndex,
    cfg: &RetrieverConfig,
    limits: &ReharmLimits,
    forced: bool,
) -> Vec<Scored<'a>> {
    recs.par_iter().map(|r| score(r, step, stage, state, index, cfg, limits, forced)).collect::<Vec<_>>().into_iter().flatten().collect()
}

/// Minimum-energy pick, preferring candidates that keep the planned style so
/// forced picks do not spend slack.
fn forced_pick(scored: &[Scored<'_>]) -> Option<usize> {
    (0..scored.len()).min_by(|a, b| {
        let (x, y) = (&scored[*a], &scored[*b]);
        x.deviates
            .cmp(&y.deviates)
            .then(x.energy.total.total_cmp(&y.energy.total))
            .then(x.record.id.cmp(&y.record.id))
    })
}

fn median_usize(v: &[usize]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut f: Vec<f64> = v.iter().map(|x| *x as f64).collect();
    median(&mut f)
}

/// The query for measure `t` of a key-normalized song. `prev_chosen` is the
/// style actually used at `t - 1` and `next_planned` the plan at `t + 1`.
pub fn measure_target(norm: &Song, t: usize, style: StyleVector, prev_chosen: Option<StyleVector>, next_planned: Option<StyleVector>) -> Target {
    let n = norm.measures.len();
    let m = &norm.measures[t];
    let section_start = t == 0 || norm.measures[t - 1].section_label != m.section_label;
    let section_end = t + 1 == n || norm.measures[t + 1].section_label != m.section_label;
    Target {
        index: t,
        length_beats: m.length_beats,
        style,
        qual_seq: m.chords.iter().map(|c| c.tag()).collect(),
        phrase_role: m.phrase_role,
        song_start: t == 0,
        song_end: t + 1 == n,
        pickup: m.phrase_role.opens_phrase() && m.length_beats < norm.meter.numerator,
        section_interior: !section_start && !section_end,
        neighbor_styles: prev_chosen.into_iter().chain(next_planned).collect(),
    }
}

/// Realizes `plan` against `song` measure by measure. `dists` optionally
/// supplies planner slot distributions for an expected style distance.
pub fn generate_song(
    plan: &[StyleVector],
    dists: Option<&[SlotDistributions]>,
    song: &Song,
    index: &CorpusIndex,
    cfg: &RetrieverConfig,
) -> Result<Generated, RetrieverError> {
    cfg.validate()?;
    let n = song.measures.len();
    if plan.len() != n || dists.is_some_and(|d| d.len() != n) {
        return Err(RetrieverError::PlanLength { plan: plan.len(), measures: n });
    }
    let norm = normalize_key(song);
    let limits = ReharmLimits::from_config(cfg);
    let onset_median = index.quantiles.onset_rate.breakpoints.get(1).copied().unwrap_or(f64::INFINITY);
    let mut state = GenerationState::new(cfg.seed);
    let mut out = Vec::with_capacity(n);
    let mut log: Vec<MeasureLog> = Vec::with_capacity(n);
    let mut prev_style: Option<StyleVector> = None;
    for t in 0..n {
        let m = &norm.measures[t];
        let len = m.length_beats;
        let key = norm.key_at(t).copied().unwrap_or_else(|| default_key(n));
        let snapped = snap_style(&plan[t], index.inventory(), len, &[]).map_err(|_| RetrieverError::CorpusExhausted(len))?;
        let section_start = t == 0 || norm.measures[t - 1].section_label != m.section_label;
        let phrase_start = section_start || m.phrase_role.opens_phrase();
        if section_start {
            state.start_section();
        }
        if phrase_start {
            state.start_phrase();
        }
        let target = measure_target(&norm, t, snapped, prev_style, plan.get(t + 1).copied());
        let harmonic_change = t > 0
            && match (m.chords.first(), norm.measures[t - 1].chords.last()) {
                (Some(a), Some(b)) => degree(a, &key) != degree(b, &key),
                _ => false,
            };
        let policies = (0..len as usize)
            .map(|b| if super::pool::is_weak_beat(b, len) { cfg.weak_policy } else { cfg.strong_policy })
            .collect();
        let src_key = song.key_at(t).copied().unwrap_or_else(|| default_key(n));
        let back = -normalization_offset(src_key.tonic_pc, src_key.mode);
        let step = Step { target, chords: &m.chords, key, dist: dists.map(|d| &d[t]), harmonic_change, policies, onset_median, back };

        let pool = build_candidate_pool(index, &step.target, cfg);
        let mut recs = pool.records.clone();
        let novelty = if section_start { &state.prev_section_sources } else { &state.prev_phrase_sources };
        if cfg.boundary_novelty && phrase_start && t > 0 {
            let fresh: Vec<&MeasureRecord> = recs.iter().copied().filter(|r| !novelty.contains(&r.id)).collect();
            if !fresh.is_empty() {
                recs = fresh;
            }
        }
        let scored = score_all(&recs, &step, pool.stage, &state, index, cfg, &limits, false);
        let feasible = scored.len();
        let (chosen, forced) = match select(&scored, cfg, &mut state.rng) {
            Some(i) => (scored[i].clone(), false),
            None => {
                let fallback: Vec<&MeasureRecord> = if recs.is_empty() {
                    index.query(len, StyleFilter::Any, |_| true, |_| true)
                } else {
                    recs.clone()
                };
                if fallback.is_empty() {
                    return Err(RetrieverError::CorpusExhausted(len));
                }
                let relaxed = score_all(&fallback, &step, FORCED_STAGE, &state, index, cfg, &ReharmLimits::relaxed(), true);
                let i = forced_pick(&relaxed).ok_or(RetrieverError::CorpusExhausted(len))?;
                (relaxed[i].clone(), true)
            }
        };
        let debit = chosen.deviates && !forced;
        state.commit(chosen.record.id, chosen.signature, &chosen.reharm.notes, m.length().ticks(), &chosen.record.features, debit);
        prev_style = Some(chosen.record.style);
        let notes = transpose(&chosen.reharm.notes, back);
        let source_id = format!("{}:{}", index.songs[chosen.record.id.song as usize].id, chosen.record.id.measure);
        out.push(ArrangedMeasure { index: t, length_beats: len, source_id: source_id.clone(), notes });
        log.push(MeasureLog {
            index: t,
            section: m.section_label,
            planned: plan[t],
            snapped,
            chosen_style: chosen.record.style,
            stage: if forced { FORCED_STAGE } else { pool.stage },
            forced,
            pool_sizes: pool.sizes.clone(),
            feasible,
            source: chosen.record.id,
            source_id,
            deviated: chosen.deviates,
            energy: EnergyBreakdown { stage: if forced { FORCED_STAGE } else { pool.stage }, ..chosen.energy },
        });
    }
    let strict: Vec<usize> = log.iter().map(|l| l.strict_pool()).collect();
    let mut sections = Vec::new();
    for s in SectionLabel::ALL {
        let sizes: Vec<usize> = log.iter().filter(|l| l.section == s).map(|l| l.strict_pool()).collect();
        if !sizes.is_empty() {
            sections.push(SectionHealth {
                section: s,
                measures: sizes.len(),
                strict_misses: sizes.iter().filter(|x| **x == 0).count(),
                median_strict_pool: median_usize(&sizes),
            });
        }
    }
    Ok(Generated {
        arrangement: Arrangement { song_id: song.id.clone(), tempo_bpm: song.tempo_bpm, meter: song.meter, measures: out },
        strict_misses: strict.iter().filter(|x| **x == 0).count(),
        median_strict_pool: median_usize(&strict),
        sections,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;
    use crate::retriever::{stage_accepts, SelectMode};
    use crate::synth::{generate as synth, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn index_of(cfg: &SynthConfig) -> (crate::synth::SynthCorpus, CorpusIndex) {
        let corpus = synth(cfg);
        let index = build_index(&corpus.songs, &corpus.labels().unwrap()).unwrap();
        (corpus, index)
    }

    /// Recomputes every logged pool size by scanning all records.
    fn check_against_oracle(g: &Generated, song: &Song, index: &CorpusIndex, cfg: &RetrieverConfig) {
        let norm = normalize_key(song);
        let mut prev = None;
        for (t, l) in g.log.iter().enumerate() {
            let target = measure_target(&norm, t, l.snapped, prev, g.log.get(t + 1).map(|x| x.planned));
            for (stage, size) in l.pool_sizes.iter().enumerate() {
                let brute = index.records.iter().filter(|r| stage_accepts(&target, r, stage as u8, cfg)).count();
                assert_eq!(brute, *size, "measure {t} stage {stage}");
            }
            let first = l.pool_sizes.iter().position(|s| *s >= cfg.min_pool);
            match (first, l.forced) {
                (Some(s), false) => assert_eq!(l.stage as usize, s),
                (None, false) => assert!(l.pool_sizes[l.stage as usize] > 0),
                (_, true) => assert_eq!(l.stage, FORCED_STAGE),
            }
            prev = Some(l.chosen_style);
        }
        assert_eq!(g.strict_misses, g.log.iter().filter(|l| l.strict_pool() == 0).count());
    }

    #[test]
    fn self_retrieval_never_misses_strict_pool() {
        let (corpus, index) = index_of(&SynthConfig { songs: 3, ..Default::default() });
        let cfg = RetrieverConfig { mode: SelectMode::Map, ..Default::default() };
        let g = generate_song(&corpus.styles[0], None, &corpus.songs[0], &index, &cfg).unwrap();
        assert_eq!(g.strict_misses, 0);
        assert_eq!(g.arrangement.measures.len(), corpus.songs[0].measures.len());
        assert!(g.log.iter().all(|l| !l.forced && l.chosen_style == l.planned));
        check_against_oracle(&g, &corpus.songs[0], &index, &cfg);
    }

    #[test]
    fn sparse_corpus_still_fills_every_measure() {
        let (_, index) = index_of(&SynthConfig { songs: 1, measures: 6, ..Default::default() });
        let query = synth(&SynthConfig { songs: 1, seed: 99, pickup_ratio: 1.0, ..Default::default() });
        let song = &query.songs[0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let styles: Vec<StyleVector> = StyleVector::all().collect();
        let plan: Vec<StyleVector> = (0..song.measures.len()).map(|_| styles[rng.gen_range(0..styles.len())]).collect();
        // The corpus has no one-beat measure, so the pickup cannot be served.
        assert!(matches!(generate_song(&plan, None, song, &index, &RetrieverConfig::default()), Err(RetrieverError::CorpusExhausted(1))));
        let mut song = song.clone();
        song.measures.remove(0);
        for (i, m) in song.measures.iter_mut().enumerate() {
            m.index = i;
        }
        song.key_spans[0].span.end -= 1;
        let plan = &plan[1..];
        let cfg = RetrieverConfig::default();
        let g = generate_song(plan, None, &song, &index, &cfg).unwrap();
        assert_eq!(g.arrangement.measures.len(), song.measures.len());
        assert!(g.arrangement.measures.iter().all(|m| !m.notes.is_empty()));
        check_against_oracle(&g, &song, &index, &cfg);
    }

    #[test]
    fn same_seed_same_output() {
        let (_, index) = index_of(&SynthConfig { songs: 4, ..Default::default() });
        let query = synth(&SynthConfig { songs: 1, seed: 3, ..Default::default() });
        let plan = &query.styles[0];
        let cfg = RetrieverConfig::default();
        let a = generate_song(plan, None, &query.songs[0], &index, &cfg).unwrap();
        let b = generate_song(plan, None, &query.songs[0], &index, &cfg).unwrap();
        assert_eq!(a, b);
        check_against_oracle(&a, &query.songs[0], &index, &cfg);
        let c = generate_song(plan, None, &query.songs[0], &index, &RetrieverConfig { seed: cfg.seed + 1, ..cfg.clone() }).unwrap();
        assert_ne!(a.log.iter().map(|l| l.source).collect::<Vec<_>>(), c.log.iter().map(|l| l.source).collect::<Vec<_>>());
    }
}
