//! Feature-based style labeling of performed accompaniment.
//!
//! Continuous features are extracted per measure, corpus quantiles turn them
//! into discrete slot labels, and the same quantiles define the target bands
//! the retriever's drift control steers toward.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::song::{Axis, Beats, Meter, NoteEvent, Song, StyleVector, TICKS_PER_BEAT};

pub const TEXTURE_COUNT: usize = 6;
const MIXED: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStyleFeatures {
    pub velocity_median: f64,
    pub staccato_ratio: f64,
    pub onset_rate: f64,
    pub syncopation_score: f64,
    pub register_mean: Option<f64>,
    pub register_span: Option<f64>,
    /// One score per texture label, in axis order.
    pub texture_scores: [f64; TEXTURE_COUNT],
}

impl ContinuousStyleFeatures {
    pub fn is_empty(&self) -> bool {
        self.register_mean.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("measure has no notes")]
    EmptyMeasure,
    #[error("corpus has {0} measures; at least 4 are needed")]
    CorpusTooSmall(usize),
    #[error("labels for song {0} do not cover its measures")]
    Coverage(String),
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    quantile_sorted(values, 0.5)
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Metrical weight of an onset tick within the measure.
pub fn metrical_weight(tick: i64) -> f64 {
    let t = tick;
    if t == 0 {
        1.0
    } else if t % TICKS_PER_BEAT == 0 {
        0.8
    } else if t % (TICKS_PER_BEAT / 2) == 0 {
        0.3
    } else {
        0.1
    }
}

/// Share of metrical-weight mass that falls off the beat: 0 when every onset is
/// on a beat, 1 when none is.
pub fn syncopation_score(onsets: &[Beats], _meter: Meter) -> f64 {
    let mut on = 0.0;
    let mut total = 0.0;
    for o in onsets {
        let w = metrical_weight(o.ticks());
        total += w;
        if o.ticks() % TICKS_PER_BEAT == 0 {
            on += w;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        1.0 - on / total
    }
}

fn onset_groups(notes: &[NoteEvent]) -> Vec<(i64, Vec<u8>)> {
    let mut groups: BTreeMap<i64, Vec<u8>> = BTreeMap::new();
    for n in notes {
        groups.entry(n.onset.ticks()).or_default().push(n.pitch);
    }
    groups
        .into_iter()
        .map(|(t, mut p)| {
            p.sort_unstable();
            (t, p)
        })
        .collect()
}

fn arp_score(seq: &[u8]) -> f64 {
    if seq.len() < 3 {
        return 0.0;
    }
    let signs: Vec<i32> = seq.windows(2).map(|w| (w[1] as i32 - w[0] as i32).signum()).collect();
    let same = signs.windows(2).filter(|s| s[0] != 0 && s[0] == s[1]).count();
    same as f64 / (signs.len() - 1) as f64
}

fn alberti_score(seq: &[u8]) -> f64 {
    let cells = seq.len() / 4;
    if cells == 0 {
        return 0.0;
    }
    let hits = seq
        .chunks_exact(4)
        .filter(|c| c[0] < c[2] && c[2] < c[1] && c[3] == c[1])
        .count();
    hits as f64 / cells as f64
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum BeatKind {
    Bass,
    Cluster,
    Other,
}

fn stride_score(groups: &[(i64, Vec<u8>)], length_beats: u8) -> f64 {
    if length_beats < 2 || groups.is_empty() {
        return 0.0;
    }
    let lowest = groups.iter().flat_map(|g| g.1.iter()).copied().min().unwrap_or(0);
    let split = lowest as i32 + 12;
    let kind = |pitches: &[u8]| {
        if pitches.iter().all(|p| (*p as i32) < split) {
            BeatKind::Bass
        } else if pitches.len() >= 2 && pitches.iter().all(|p| (*p as i32) >= split) {
            BeatKind::Cluster
        } else {
            BeatKind::Other
        }
    };
    let beats: Vec<Option<BeatKind>> = (0..length_beats as i64)
        .map(|b| groups.iter().find(|g| g.0 == b * TICKS_PER_BEAT).map(|g| kind(&g.1)))
        .collect();
    let alternations = beats
        .windows(2)
        .filter(|w| matches!((w[0], w[1]), (Some(BeatKind::Bass), Some(BeatKind::Cluster)) | (Some(BeatKind::Cluster), Some(BeatKind::Bass))))
        .count();
    let on_beat = beats.iter().filter(|b| b.is_some()).count() as f64 / groups.len() as f64;
    alternations as f64 / (length_beats as f64 - 1.0) * on_beat
}

fn ostinato_score(notes: &[NoteEvent], length_beats: u8) -> f64 {
    let mut best = 0.0f64;
    for cell in [TICKS_PER_BEAT / 2, TICKS_PER_BEAT] {
        let n_cells = (length_beats as i64 * TICKS_PER_BEAT / cell) as usize;
        let mut contents: Vec<Vec<(i64, u8)>> = vec![Vec::new(); n_cells];
        for n in notes {
            let k = (n.onset.ticks() / cell) as usize;
            if k < n_cells {
                contents[k].push((n.onset.ticks() - k as i64 * cell, n.pitch));
            }
        }
        let mut counts: BTreeMap<Vec<(i64, u8)>, usize> = BTreeMap::new();
        for mut c in contents {
            c.sort_unstable();
            let mut times: Vec<i64> = c.iter().map(|x| x.0).collect();
            times.dedup();
            if times.len() >= 2 {
                *counts.entry(c).or_default() += 1;
            }
        }
        if let Some(&top) = counts.values().max() {
            if top >= 3 {
                best = best.max(top as f64 / n_cells as f64);
            }
        }
    }
    best
}

/// Rule-based texture family. Returns the label index and all scores; a weak
/// or tied maximum yields `mixed`.
pub fn classify_texture(notes: &[NoteEvent], length_beats: u8) -> Result<(u8, [f64; TEXTURE_COUNT]), LabelError> {
    if notes.is_empty() {
        return Err(LabelError::EmptyMeasure);
    }
    let groups = onset_groups(notes);
    let chordal = groups.iter().filter(|g| g.1.len() >= 2).count() as f64 / groups.len() as f64;
    let mono = groups.iter().all(|g| g.1.len() == 1);
    let seq: Vec<u8> = groups.iter().map(|g| g.1[0]).collect();
    let mut scores = [0.0; TEXTURE_COUNT];
    scores[0] = chordal;
    if mono {
        scores[1] = arp_score(&seq);
        scores[2] = alberti_score(&seq);
    }
    scores[3] = stride_score(&groups, length_beats);
    scores[4] = ostinato_score(notes, length_beats);
    let top = scores[..MIXED].iter().copied().fold(0.0, f64::max);
    scores[MIXED] = 1.0 - top;
    let winners: Vec<usize> = (0..MIXED).filter(|i| scores[*i] == top).collect();
    let label = if top < 0.5 || winners.len() != 1 { MIXED } else { winners[0] };
    Ok((label as u8, scores))
}

pub fn extract_features(notes: &[NoteEvent], length_beats: u8, meter: Meter) -> ContinuousStyleFeatures {
    if notes.is_empty() {
        return ContinuousStyleFeatures {
            velocity_median: 0.0,
            staccato_ratio: 0.0,
            onset_rate: 0.0,
            syncopation_score: 0.0,
            register_mean: None,
            register_span: None,
            texture_scores: [0.0; TEXTURE_COUNT],
        };
    }
    let n = notes.len() as f64;
    let mut vel: Vec<f64> = notes.iter().map(|x| x.velocity as f64).collect();
    let staccato = notes.iter().filter(|x| x.duration.ticks() * 4 <= TICKS_PER_BEAT).count() as f64 / n;
    let onsets: Vec<Beats> = notes.iter().map(|x| x.onset).collect();
    let mut pitches: Vec<f64> = notes.iter().map(|x| x.pitch as f64).collect();
    pitches.sort_by(f64::total_cmp);
    let (_, texture_scores) = classify_texture(notes, length_beats).expect("non-empty");
    ContinuousStyleFeatures {
        velocity_median: median(&mut vel),
        staccato_ratio: staccato,
        onset_rate: n / length_beats.max(1) as f64,
        syncopation_score: syncopation_score(&onsets, meter),
        register_mean: Some(pitches.iter().sum::<f64>() / n),
        register_span: Some(quantile_sorted(&pitches, 0.95) - quantile_sorted(&pitches, 0.05)),
        texture_scores,
    }
}

/// Breakpoints of one continuous feature plus the observed range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileAxis {
    pub breakpoints: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// Set when breakpoints are not strictly increasing.
    pub degenerate: bool,
}

impl QuantileAxis {
    fn build(values: &[f64], qs: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let breakpoints: Vec<f64> = qs.iter().map(|q| quantile_sorted(&v, *q)).collect();
        let degenerate = breakpoints.windows(2).any(|w| !(w[1] > w[0]));
        QuantileAxis { breakpoints, min: v.first().copied().unwrap_or(0.0), max: v.last().copied().unwrap_or(0.0), degenerate }
    }

    /// Number of breakpoints strictly below `x`; values on a breakpoint fall low.
    pub fn bin(&self, x: f64) -> u8 {
        self.breakpoints.iter().filter(|b| x > **b).count() as u8
    }

    /// Closed target band of label `k`.
    pub fn band(&self, k: u8) -> (f64, f64) {
        let k = k as usize;
        let lo = if k == 0 { self.min } else { self.breakpoints[k - 1] };
        let hi = if k >= self.breakpoints.len() { self.max } else { self.breakpoints[k] };
        (lo.min(hi), hi.max(lo))
    }
}

const QUARTILES: [f64; 3] = [0.25, 0.5, 0.75];
const THIRDS: [f64; 2] = [0.33, 0.66];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub velocity_median: QuantileAxis,
    pub staccato_ratio: QuantileAxis,
    pub onset_rate: QuantileAxis,
    pub syncopation_score: QuantileAxis,
    pub register_mean: QuantileAxis,
}

/// Builds corpus quantiles. Silent measures are left out so they do not pile
/// zeros into the low bins.
pub fn build_quantile_table(features: &[ContinuousStyleFeatures]) -> Result<QuantileTable, LabelError> {
    if features.len() < 4 {
        return Err(LabelError::CorpusTooSmall(features.len()));
    }
    let sounding: Vec<&ContinuousStyleFeatures> = features.iter().filter(|f| !f.is_empty()).collect();
    let pool: Vec<&ContinuousStyleFeatures> = if sounding.is_empty() { features.iter().collect() } else { sounding };
    let col = |f: fn(&ContinuousStyleFeatures) -> f64| pool.iter().map(|x| f(x)).collect::<Vec<f64>>();
    Ok(QuantileTable {
        velocity_median: QuantileAxis::build(&col(|f| f.velocity_median), &QUARTILES),
        staccato_ratio: QuantileAxis::build(&col(|f| f.staccato_ratio), &THIRDS),
        onset_rate: QuantileAxis::build(&col(|f| f.onset_rate), &QUARTILES),
        syncopation_score: QuantileAxis::build(&col(|f| f.syncopation_score), &THIRDS),
        register_mean: QuantileAxis::build(&col(|f| f.register_mean.unwrap_or(0.0)), &THIRDS),
    })
}

/// Labels used for a measure with no accompaniment notes.
pub fn empty_measure_style() -> StyleVector {
    StyleVector::from_labels(["quiet", "gentle", "slow", "steady", "mixed", "mid"]).expect("valid labels")
}

pub fn label_measure(f: &ContinuousStyleFeatures, q: &QuantileTable) -> StyleVector {
    let Some(register) = f.register_mean else { return empty_measure_style() };
    let top = f.texture_scores[..MIXED].iter().copied().fold(0.0, f64::max);
    let winners: Vec<usize> = (0..MIXED).filter(|i| f.texture_scores[*i] == top).collect();
    let texture = if top < 0.5 || winners.len() != 1 { MIXED } else { winners[0] };
    StyleVector::new([
        q.velocity_median.bin(f.velocity_median),
        q.staccato_ratio.bin(f.staccato_ratio),
        q.onset_rate.bin(f.onset_rate),
        q.syncopation_score.bin(f.syncopation_score),
        texture as u8,
        q.register_mean.bin(register),
    ])
    .expect("bins stay inside every axis")
}

/// Target band of the continuous feature behind the dyn, art or rhythm axis.
pub fn band_for(q: &QuantileTable, axis: Axis, label: u8) -> Option<(f64, f64)> {
    match axis {
        Axis::Dyn => Some(q.velocity_median.band(label)),
        Axis::Art => Some(q.staccato_ratio.band(label)),
        Axis::Rhythm => Some(q.onset_rate.band(label)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureLabel {
    pub style: StyleVector,
    pub features: ContinuousStyleFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongLabels {
    pub id: String,
    pub measures: Vec<MeasureLabel>,
}

impl SongLabels {
    pub fn styles(&self) -> Vec<StyleVector> {
        self.measures.iter().map(|m| m.style).collect()
    }
}

/// The `labels.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub quantiles: QuantileTable,
    pub songs: Vec<SongLabels>,
}

impl LabelFile {
    pub fn get(&self, id: &str) -> Option<&SongLabels> {
        self.songs.iter().find(|s| s.id == id)
    }
}

pub fn song_features(song: &Song) -> Vec<ContinuousStyleFeatures> {
    song.measures.iter().map(|m| extract_features(&m.accompaniment, m.length_beats, song.meter)).collect()
}

/// Extracts features for every measure, builds quantiles over the corpus and labels each measure.
pub fn label_corpus(songs: &[Song]) -> Result<LabelFile, LabelError> {
    let features: Vec<Vec<ContinuousStyleFeatures>> = songs.iter().map(song_features).collect();
    let flat: Vec<ContinuousStyleFeatures> = features.iter().flatten().cloned().collect();
    let quantiles = build_quantile_table(&flat)?;
    let songs = songs
        .iter()
        .zip(features)
        .map(|(s, fs)| SongLabels {
            id: s.id.clone(),
            measures: fs.into_iter().map(|f| MeasureLabel { style: label_measure(&f, &quantiles), features: f }).collect(),
        })
        .collect();
    Ok(LabelFile { quantiles, songs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn note(onset_ticks: i64, dur_ticks: i64, pitch: u8, vel: u8) -> NoteEvent {
        NoteEvent::new(Beats::from_ticks(onset_ticks), Beats::from_ticks(dur_ticks), pitch, vel)
    }

    fn texture_name(notes: &[NoteEvent]) -> &'static str {
        Axis::Texture.labels()[classify_texture(notes, 4).unwrap().0 as usize]
    }

    #[test]
    fn quarter_and_staccato_features() {
        let notes: Vec<NoteEvent> = (0..8).map(|i| note((i / 2) * 24, 24, 48 + (i as u8 % 2) * 12, 80)).collect();
        let f = extract_features(&notes, 4, Meter::default());
        assert_eq!(f.onset_rate, 2.0);
        assert_eq!(f.velocity_median, 80.0);
        let short: Vec<NoteEvent> = (0..4).map(|i| NoteEvent::new(Beats::whole(i), Beats::snap(0.1), 60, 70)).collect();
        assert_eq!(extract_features(&short, 4, Meter::default()).staccato_ratio, 1.0);
    }

    #[test]
    fn syncopation_examples() {
        let m = Meter::default();
        assert_eq!(syncopation_score(&(0..4).map(Beats::whole).collect::<Vec<_>>(), m), 0.0);
        assert_eq!(syncopation_score(&[Beats::from_ticks(36)], m), 1.0);
        // Equal weighted mass on and off the beat: beats 2-4 (3 x 0.8) against
        // two notes on each of the four "and"s (8 x 0.3).
        let mut onsets: Vec<Beats> = (1..4).map(Beats::whole).collect();
        for k in 0..4 {
            onsets.push(Beats::from_ticks(k * 24 + 12));
            onsets.push(Beats::from_ticks(k * 24 + 12));
        }
        assert!((syncopation_score(&onsets, m) - 0.5).abs() < 1e-12);
        let offbeats: Vec<Beats> = (0..4).map(|k| Beats::from_ticks(k * 24 + 12)).collect();
        assert_eq!(syncopation_score(&offbeats, m), 1.0);
    }

    #[test]
    fn texture_examples() {
        let block: Vec<NoteEvent> = (0..4).flat_map(|b| [48, 52, 55].map(|p| note(b * 24, 24, p, 70))).collect();
        assert_eq!(texture_name(&block), "block");
        let alberti: Vec<NoteEvent> = (0..8).map(|i| note(i * 12, 12, [48, 55, 52, 55][i as usize % 4], 70)).collect();
        assert_eq!(texture_name(&alberti), "alberti");
        let mut stride = vec![note(0, 24, 36, 80), note(48, 24, 43, 80)];
        for b in [1, 3] {
            stride.extend([55, 60, 64].map(|p| note(b * 24, 24, p, 70)));
        }
        assert_eq!(texture_name(&stride), "stride");
        let arp: Vec<NoteEvent> = (0..8).map(|i| note(i * 12, 12, [48, 52, 55, 60, 64, 60, 55, 52][i as usize], 70)).collect();
        assert_eq!(texture_name(&arp), "arp");
        let ost: Vec<NoteEvent> = (0..8).map(|i| note(i * 12, 12, [48, 60][i as usize % 2], 70)).collect();
        assert_eq!(texture_name(&ost), "ostinato");
        assert_eq!(classify_texture(&[], 4), Err(LabelError::EmptyMeasure));
    }

    #[test]
    fn quantile_oracle() {
        let v: Vec<f64> = (1..=100).map(|x| x as f64).collect();
        assert_eq!(quantile_sorted(&v, 0.25), 25.75);
        let feats: Vec<ContinuousStyleFeatures> = v
            .iter()
            .map(|x| ContinuousStyleFeatures { velocity_median: *x, register_mean: Some(60.0), ..extract_features(&[], 4, Meter::default()) })
            .collect();
        let q = build_quantile_table(&feats).unwrap();
        assert_eq!(q.velocity_median.breakpoints, vec![25.75, 50.5, 75.25]);
        assert!(!q.velocity_median.degenerate);
        assert!(q.register_mean.degenerate);
        assert!(matches!(build_quantile_table(&feats[..3]), Err(LabelError::CorpusTooSmall(3))));
    }

    fn corpus_table() -> QuantileTable {
        let feats: Vec<ContinuousStyleFeatures> = (0..40)
            .map(|i| ContinuousStyleFeatures {
                velocity_median: 40.0 + i as f64,
                staccato_ratio: i as f64 / 40.0,
                onset_rate: 1.0 + (i % 8) as f64,
                syncopation_score: (i % 5) as f64 / 5.0,
                register_mean: Some(48.0 + (i % 24) as f64),
                register_span: Some(12.0),
                texture_scores: [0.0; 6],
            })
            .collect();
        build_quantile_table(&feats).unwrap()
    }

    #[test]
    fn labels_from_quantiles() {
        let q = corpus_table();
        let at = |v: f64| ContinuousStyleFeatures {
            velocity_median: v,
            staccato_ratio: 0.0,
            onset_rate: 1.0,
            syncopation_score: 0.0,
            register_mean: Some(60.0),
            register_span: Some(1.0),
            texture_scores: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        };
        let median = q.velocity_median.breakpoints[1];
        let s = label_measure(&at(median), &q);
        assert!(["soft", "medium"].contains(&s.label(Axis::Dyn)));
        assert_eq!(label_measure(&at(q.velocity_median.breakpoints[2] + 1.0), &q).label(Axis::Dyn), "loud");
        assert_eq!(label_measure(&at(median), &q).label(Axis::Texture), "block");
        let empty = extract_features(&[], 4, Meter::default());
        assert_eq!(label_measure(&empty, &q), empty_measure_style());
    }

    #[test]
    fn bands_cover_range() {
        let q = corpus_table();
        assert_eq!(q.velocity_median.band(0).0, 40.0);
        assert_eq!(q.velocity_median.band(3).1, 79.0);
        assert_eq!(q.velocity_median.band(1), (q.velocity_median.breakpoints[0], q.velocity_median.breakpoints[1]));
    }

    fn arb_notes() -> impl Strategy<Value = Vec<NoteEvent>> {
        prop::collection::vec((0i64..96, 1i64..48, 30u8..100, 1u8..128), 1..16)
            .prop_map(|v| v.into_iter().map(|(o, d, p, vel)| note(o, d, p, vel)).collect())
    }

    proptest! {
        #[test]
        fn octave_shift_changes_only_register(notes in arb_notes()) {
            let q = corpus_table();
            let up: Vec<NoteEvent> = notes.iter().map(|n| NoteEvent { pitch: n.pitch + 12, ..n.clone() }).collect();
            let a = label_measure(&extract_features(&notes, 4, Meter::default()), &q);
            let b = label_measure(&extract_features(&up, 4, Meter::default()), &q);
            for axis in Axis::ALL.into_iter().filter(|a| *a != Axis::Register) {
                prop_assert_eq!(a.get(axis), b.get(axis));
            }
        }

        #[test]
        fn syncopation_ignores_velocity(notes in arb_notes(), v in 1u8..128) {
            let louder: Vec<NoteEvent> = notes.iter().map(|n| NoteEvent { velocity: v, ..n.clone() }).collect();
            let a = extract_features(&notes, 4, Meter::default()).syncopation_score;
            let b = extract_features(&louder, 4, Meter::default()).syncopation_score;
            prop_assert_eq!(a, b);
        }

        #[test]
        fn ratios_bounded(notes in arb_notes()) {
            let f = extract_features(&notes, 4, Meter::default());
            prop_assert!((0.0..=1.0).contains(&f.staccato_ratio));
            prop_assert!((0.0..=1.0).contains(&f.syncopation_score));
            prop_assert!(f.onset_rate >= 0.0);
        }
    }
}
