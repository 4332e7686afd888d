//! Seeded synthetic corpus with a known section-to-style mapping.
//!
//! Every song follows one of three tempo profiles. The profile and the
//! section position fully determine each measure's ground-truth style, and a
//! per-measure variant changes the rhythm skeleton inside that style.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::harmony::{ChordSymbol, Extension, KeyContext, MeasureSpan, Mode, QualityClass};
use crate::labeler::{build_quantile_table, song_features, LabelError, LabelFile, MeasureLabel, SongLabels};
use crate::rng::mix;
use crate::song::{Beats, DynamicsTrend, Measure, Meter, NoteEvent, PhraseRole, SectionLabel, Song, StyleVector, TICKS_PER_BEAT};

pub const PROFILES: usize = 3;
pub const PROFILE_TEMPI: [f64; PROFILES] = [78.0, 108.0, 138.0];
const SONG_MEASURES: usize = 56;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub songs: usize,
    pub seed: u64,
    /// Rhythm variants per style key, at most 8.
    pub variants: usize,
    pub measures: usize,
    pub sevenths: bool,
    pub minor_ratio: f64,
    /// Probability that a song opens with a one-beat pickup.
    pub pickup_ratio: f64,
    /// Probability that a measure uses variant 0 instead of a uniform draw.
    pub dominant_variant: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            songs: 12,
            seed: 7,
            variants: 8,
            measures: SONG_MEASURES,
            sevenths: true,
            minor_ratio: 0.3,
            pickup_ratio: 0.0,
            dominant_variant: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub songs: Vec<Song>,
    /// Ground-truth style of every measure.
    pub styles: Vec<Vec<StyleVector>>,
    pub profiles: Vec<usize>,
    pub variants: Vec<Vec<usize>>,
}

impl SynthCorpus {
    /// Label file carrying the ground-truth styles with extracted features.
    pub fn labels(&self) -> Result<LabelFile, LabelError> {
        let features: Vec<_> = self.songs.iter().map(song_features).collect();
        let flat: Vec<_> = features.iter().flatten().cloned().collect();
        let quantiles = build_quantile_table(&flat)?;
        let songs = self
            .songs
            .iter()
            .zip(features)
            .zip(&self.styles)
            .map(|((s, fs), st)| SongLabels {
                id: s.id.clone(),
                measures: fs.into_iter().zip(st).map(|(f, style)| MeasureLabel { style: *style, features: f }).collect(),
            })
            .collect();
        Ok(LabelFile { quantiles, songs })
    }
}

const TABLE: [[[&str; 6]; 8]; PROFILES] = [
    [
        ["quiet", "gentle", "slow", "steady", "block", "warm"],
        ["soft", "gentle", "medium", "steady", "arp", "mid"],
        ["soft", "gentle", "medium", "light_sync", "arp", "mid"],
        ["medium", "normal", "medium", "steady", "alberti", "mid"],
        ["loud", "normal", "fast", "steady", "block", "bright"],
        ["loud", "normal", "fast", "light_sync", "block", "bright"],
        ["medium", "gentle", "medium", "steady", "stride", "warm"],
        ["soft", "gentle", "slow", "steady", "block", "warm"],
    ],
    [
        ["soft", "normal", "fast", "steady", "ostinato", "mid"],
        ["medium", "normal", "medium", "steady", "stride", "warm"],
        ["medium", "normal", "medium", "steady", "alberti", "warm"],
        ["medium", "normal", "fast", "light_sync", "arp", "mid"],
        ["loud", "staccato", "fast", "syncopated", "block", "bright"],
        ["loud", "staccato", "dense", "steady", "ostinato", "bright"],
        ["soft", "gentle", "medium", "steady", "arp", "mid"],
        ["quiet", "gentle", "slow", "steady", "block", "mid"],
    ],
    [
        ["medium", "staccato", "fast", "steady", "ostinato", "mid"],
        ["medium", "staccato", "dense", "light_sync", "ostinato", "warm"],
        ["medium", "normal", "fast", "syncopated", "arp", "warm"],
        ["loud", "normal", "fast", "steady", "alberti", "mid"],
        ["loud", "staccato", "fast", "syncopated", "arp", "bright"],
        ["loud", "staccato", "fast", "syncopated", "mixed", "bright"],
        ["soft", "normal", "medium", "steady", "block", "mid"],
        ["soft", "gentle", "medium", "steady", "stride", "warm"],
    ],
];

fn style_slot(section: SectionLabel, phrase_in_section: usize) -> usize {
    let second = (phrase_in_section % 2 == 1) as usize;
    match section {
        SectionLabel::Intro => 0,
        SectionLabel::Verse => 1 + second,
        SectionLabel::Prechorus => 3,
        SectionLabel::Chorus => 4 + second,
        SectionLabel::Bridge | SectionLabel::Other => 6,
        SectionLabel::Outro => 7,
    }
}

/// Ground-truth style of a measure given its profile and section position.
pub fn planned_style(profile: usize, section: SectionLabel, phrase_in_section: usize) -> StyleVector {
    StyleVector::from_labels(TABLE[profile % PROFILES][style_slot(section, phrase_in_section)]).expect("table labels are valid")
}

/// Every distinct style the profiles can emit.
pub fn style_keys() -> Vec<StyleVector> {
    let mut v: Vec<StyleVector> = TABLE.iter().flatten().map(|l| StyleVector::from_labels(*l).expect("valid")).collect();
    v.sort();
    v.dedup();
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub section: SectionLabel,
    pub phrase_in_section: usize,
    pub role: PhraseRole,
}

/// Section layout of `n` measures: intro, repeated verse/prechorus/chorus/bridge
/// blocks and an outro, cut to length. Phrases are four measures.
pub fn layout(n: usize) -> Vec<Slot> {
    use SectionLabel::*;
    let sections: Vec<(SectionLabel, usize)> = if n == SONG_MEASURES {
        vec![(Intro, 4), (Verse, 8), (Prechorus, 4), (Chorus, 8), (Verse, 8), (Prechorus, 4), (Chorus, 8), (Bridge, 4), (Chorus, 4), (Outro, 4)]
    } else {
        let body = [(Verse, 8), (Prechorus, 4), (Chorus, 8), (Bridge, 4)];
        let mut s = vec![(Intro, 4.min(n))];
        let mut total = s[0].1;
        let mut i = 0;
        while total + 4 < n {
            let (label, len) = body[i % body.len()];
            let len = len.min(n - 4 - total);
            s.push((label, len));
            total += len;
            i += 1;
        }
        if n > total {
            s.push((Outro, n - total));
        }
        s
    };
    let mut out = Vec::with_capacity(n);
    for (section, len) in sections {
        for j in 0..len {
            let phrase = j / 4;
            let phrase_len = (len - phrase * 4).min(4);
            let pos = j % 4;
            let role = match (phrase_len, pos) {
                (1, _) => PhraseRole::Single,
                (_, 0) => PhraseRole::Begin,
                (l, p) if p + 1 == l => PhraseRole::End,
                _ => PhraseRole::Mid,
            };
            out.push(Slot { section, phrase_in_section: phrase, role });
        }
    }
    out.truncate(n);
    out
}

// Progressions as (scale degree, quality). A major chord on degree 4 is the dominant.
const MAJOR_PROGS: [[(usize, QualityClass); 4]; 4] = {
    use QualityClass::*;
    [
        [(0, Maj), (4, Maj), (5, Min), (3, Maj)],
        [(5, Min), (3, Maj), (0, Maj), (4, Maj)],
        [(0, Maj), (3, Maj), (4, Maj), (0, Maj)],
        [(1, Min), (4, Maj), (0, Maj), (5, Min)],
    ]
};

const MINOR_PROGS: [[(usize, QualityClass); 4]; 4] = {
    use QualityClass::*;
    [
        [(0, Min), (5, Maj), (2, Maj), (6, Maj)],
        [(0, Min), (3, Min), (6, Maj), (2, Maj)],
        [(0, Min), (5, Maj), (3, Min), (4, Maj)],
        [(3, Min), (4, Min), (0, Min), (0, Min)],
    ]
};

fn chord_for(key: &KeyContext, degree: usize, quality: QualityClass, sevenths: bool) -> ChordSymbol {
    let root = (key.tonic_pc + key.mode.scale()[degree]) % 12;
    let dominant = degree == 4 && quality == QualityClass::Maj;
    if sevenths && dominant {
        ChordSymbol::new(root, QualityClass::Dom)
    } else if sevenths && degree == 1 && quality == QualityClass::Min {
        ChordSymbol::new(root, QualityClass::Min).with_extensions(&[Extension::Seven])
    } else {
        ChordSymbol::new(root, quality)
    }
}

/// Chord pitch classes: the quality template first, then extensions.
fn tones(chord: &ChordSymbol) -> Vec<u8> {
    let mut v: Vec<u8> = chord.quality.template().iter().map(|i| (chord.root_pc + i) % 12).collect();
    for e in &chord.extensions {
        let pc = (chord.root_pc + e.interval()) % 12;
        if !v.contains(&pc) {
            v.push(pc);
        }
    }
    v
}

fn at_or_above(pc: u8, floor: i32) -> i32 {
    floor + (pc as i32 - floor).rem_euclid(12)
}

/// Close triad voicing in the given inversion, lowest note at or above `floor`.
fn stack(chord: &ChordSymbol, floor: i32, inversion: usize) -> Vec<i32> {
    let t = tones(chord);
    let triad = &t[..3.min(t.len())];
    let mut out = Vec::with_capacity(3);
    let mut prev = floor - 1;
    for k in 0..triad.len() {
        let p = at_or_above(triad[(k + inversion) % triad.len()], prev + 1);
        out.push(p);
        prev = p;
    }
    out
}

fn next_tone_above(chord: &ChordSymbol, prev: i32) -> i32 {
    tones(chord).iter().map(|pc| at_or_above(*pc, prev + 1)).min().unwrap_or(prev + 12)
}

fn grid_step(rhythm: u8) -> i64 {
    [96, 24, 12, 6][rhythm as usize]
}

fn apply_tension(mut ev: Vec<i64>, tension: u8, step: i64, span: i64) -> Vec<i64> {
    match tension {
        1 if step >= TICKS_PER_BEAT => {
            if let Some(last) = ev.iter_mut().rev().find(|e| **e > 0) {
                *last -= TICKS_PER_BEAT / 2;
            }
        }
        1 => ev.retain(|e| *e != 2 * TICKS_PER_BEAT || span <= 2 * TICKS_PER_BEAT),
        2 if step >= TICKS_PER_BEAT => {
            for e in ev.iter_mut().filter(|e| **e > 0) {
                *e += TICKS_PER_BEAT / 2;
            }
            ev.retain(|e| *e < span);
        }
        2 => ev.retain(|e| *e == 0 || e % TICKS_PER_BEAT != 0),
        _ => {}
    }
    ev.sort_unstable();
    ev.dedup();
    ev
}

/// One extra onset (or, on the sixteenth grid, one removed onset) chosen by `choice`.
fn embellish(mut ev: Vec<i64>, step: i64, choice: usize, span: i64) -> Vec<i64> {
    if choice == 0 {
        return ev;
    }
    if step <= 6 {
        let offbeats: Vec<i64> = [18, 42, 66, 90].into_iter().filter(|t| ev.contains(t)).collect();
        if let Some(t) = offbeats.get((choice - 1) % offbeats.len().max(1)) {
            ev.retain(|e| e != t);
        }
        return ev;
    }
    let primary: &[i64] = if step >= TICKS_PER_BEAT { &[84, 36, 60] } else { &[90, 42, 66] };
    let free: Vec<i64> = primary
        .iter()
        .chain(&[12, 30, 54, 78, 18, 42, 66, 90])
        .copied()
        .filter(|t| *t < span && !ev.contains(t))
        .collect();
    let mut seen = Vec::new();
    for t in free {
        if !seen.contains(&t) {
            seen.push(t);
        }
    }
    if let Some(t) = seen.get(choice - 1) {
        ev.push(*t);
        ev.sort_unstable();
    }
    ev
}

/// Onset times of the ostinato cell within one beat.
fn ostinato_cell(rhythm: u8, choice: usize) -> &'static [i64] {
    let fast: [&[i64]; 4] = [&[0, 12], &[0, 6, 12], &[0, 12, 18], &[0, 18]];
    let dense: [&[i64]; 4] = [&[0, 6, 12, 18], &[0, 6, 12], &[0, 12, 18], &[0, 6, 18]];
    if rhythm >= 3 {
        dense[choice % 4]
    } else {
        fast[choice % 4]
    }
}

fn chord_at<'a>(chords: &'a [ChordSymbol], tick: i64) -> &'a ChordSymbol {
    &chords[((tick / TICKS_PER_BEAT) as usize).min(chords.len() - 1)]
}

fn clamp_pitch(p: i32) -> u8 {
    p.clamp(21, 108) as u8
}

/// Renders one measure of accompaniment in the song key.
pub fn render(style: StyleVector, chords: &[ChordSymbol], length_beats: u8, variant: usize) -> Vec<NoteEvent> {
    let s = style.slots();
    let (dynamic, art, rhythm, tension, texture, register) = (s[0], s[1], s[2], s[3], s[4], s[5]);
    let span = length_beats as i64 * TICKS_PER_BEAT;
    let step = grid_step(rhythm);
    let legato_mode = variant % 2;
    let choice = (variant / 2) % 4;
    let center = [48, 57, 67][register as usize];
    let base_vel = [42u8, 58, 74, 96][dynamic as usize];

    // Onset groups: (tick, pitches).
    let mut groups: Vec<(i64, Vec<i32>)> = Vec::new();
    let mut held_low = false;
    match texture {
        4 => {
            let cell = ostinato_cell(rhythm, choice);
            let mut ev: Vec<i64> = (0..length_beats as i64)
                .flat_map(|b| cell.iter().map(move |c| b * TICKS_PER_BEAT + c))
                .collect();
            ev = apply_tension(ev, tension, 6, span);
            let root = at_or_above(chords[0].root_pc, center - 10);
            let fifth = root + 7;
            let oct = root + 12;
            let shapes: [[i32; 4]; 4] = [[root, fifth, oct, fifth], [root, oct, root, fifth], [fifth, root, fifth, oct], [oct, fifth, root, fifth]];
            let shape = shapes[variant % 4];
            for t in ev {
                let within = t % TICKS_PER_BEAT;
                let k = cell.iter().position(|c| *c == within).unwrap_or(0);
                let p = shape[k];
                groups.push((t, if rhythm >= 3 && within == 0 { vec![p, p + 12] } else { vec![p] }));
            }
        }
        _ => {
            let mut ev: Vec<i64> = (0..span).step_by(step as usize).collect();
            if ev.is_empty() {
                ev.push(0);
            }
            ev = apply_tension(ev, tension, step, span);
            if texture != 2 {
                ev = embellish(ev, step, choice, span);
            }
            match texture {
                0 => {
                    for t in ev {
                        let b = (t / TICKS_PER_BEAT) as usize;
                        let mut v = stack(chord_at(chords, t), center - 5, (variant + b) % 3);
                        if rhythm != 1 {
                            // Open dyads keep slow measures sparse and fast ones below dense in note starts.
                            v.remove(1);
                        }
                        groups.push((t, v));
                    }
                }
                1 => {
                    let start = center - 9;
                    let mut prev = start - 1;
                    for (i, t) in ev.into_iter().enumerate() {
                        let c = chord_at(chords, t);
                        let p = if i % 8 == 0 { next_tone_above(c, start - 1) } else { next_tone_above(c, prev) };
                        groups.push((t, vec![p]));
                        prev = p;
                    }
                }
                2 => {
                    held_low = choice % 2 == 1;
                    let drop = if choice >= 2 { 12 } else { 0 };
                    for (i, t) in ev.iter().enumerate() {
                        let cell_start = ev[i - i % 4];
                        let v = stack(chord_at(chords, cell_start), center - 5, variant % 3);
                        let p = if ev.len() - (i - i % 4) < 4 { v[0] - drop } else { [v[0] - drop, v[2], v[1], v[2]][i % 4] };
                        groups.push((*t, vec![p]));
                    }
                }
                3 => {
                    let bass_for = |t: i64| {
                        let c = chord_at(chords, t);
                        let fifth_bass = variant % 4 >= 2 && (t / TICKS_PER_BEAT) % 4 == 2;
                        let pc = if fifth_bass { (c.root_pc + 7) % 12 } else { c.root_pc };
                        at_or_above(pc, center - 17)
                    };
                    let lowest = ev.iter().map(|t| bass_for(*t)).min().unwrap_or(center - 17);
                    for t in ev {
                        let on_beat = t % TICKS_PER_BEAT == 0;
                        let beat = t / TICKS_PER_BEAT;
                        if on_beat && beat % 2 == 1 {
                            let floor = (lowest + 12).max(center - 3);
                            groups.push((t, stack(chord_at(chords, t), floor, variant % 3)));
                        } else {
                            groups.push((t, vec![bass_for(t)]));
                        }
                    }
                }
                _ => {
                    let n_block = (ev.len().saturating_sub(1)) / 2;
                    let mut prev = center - 10;
                    for (i, t) in ev.into_iter().enumerate() {
                        let c = chord_at(chords, t);
                        if i < n_block {
                            groups.push((t, stack(c, center - 5, variant % 3)));
                        } else {
                            prev = next_tone_above(c, prev);
                            groups.push((t, vec![prev]));
                        }
                    }
                }
            }
        }
    }

    let mut notes = Vec::new();
    for (i, (t, pitches)) in groups.iter().enumerate() {
        let next = groups.get(i + 1).map(|g| g.0).unwrap_or(span);
        let ioi = (next - t).max(1);
        let long = if legato_mode == 0 { ioi.max(7) } else { (ioi * 3 / 2).max(7) };
        let short = (ioi / 2).clamp(3, 6);
        let mut dur = match art {
            0 => long,
            1 if i % 2 == 0 => long,
            _ => short,
        };
        if held_low && i % 4 == 0 && art != 2 {
            let cell_end = groups.get(i + 4).map(|g| g.0).unwrap_or(span);
            dur = (cell_end - t).max(dur);
        }
        let accent = if *t == 0 {
            8
        } else if *t == 2 * TICKS_PER_BEAT {
            4
        } else {
            0
        };
        for p in pitches {
            notes.push(NoteEvent::new(Beats::from_ticks(*t), Beats::from_ticks(dur), clamp_pitch(*p), (base_vel + accent).min(127)));
        }
    }
    notes
}

fn melody(rng: &mut ChaCha8Rng, key: &KeyContext, chords: &[ChordSymbol], length_beats: u8, last: &mut i32) -> Vec<NoteEvent> {
    let scale: Vec<u8> = key.mode.scale().iter().map(|d| (key.tonic_pc + d) % 12).collect();
    let rhythm: &[(i64, i64)] = match rng.gen_range(0..3) {
        0 => &[(0, 24), (24, 24), (48, 24), (72, 24)],
        1 => &[(0, 48), (48, 24), (72, 24)],
        _ => &[(0, 12), (12, 12), (24, 24), (48, 12), (60, 12), (72, 24)],
    };
    let span = length_beats as i64 * TICKS_PER_BEAT;
    let mut out = Vec::new();
    for (i, (on, dur)) in rhythm.iter().filter(|(on, _)| *on < span).enumerate() {
        let c = chord_at(chords, *on);
        let pool: Vec<u8> = if i == 0 { tones(c) } else { scale.clone() };
        let step: i32 = rng.gen_range(-3..=3);
        let target = (*last + step).clamp(64, 81);
        let p = (64..=81).filter(|p| pool.contains(&((*p % 12) as u8))).min_by_key(|p| (p - target).abs()).unwrap_or(target);
        *last = p;
        out.push(NoteEvent::new(Beats::from_ticks(*on), Beats::from_ticks((*dur).min(span - on)), p as u8, 88));
    }
    out
}

fn song(cfg: &SynthConfig, i: usize) -> (Song, Vec<StyleVector>, usize, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, i as u64, 0));
    let profile = i % PROFILES;
    let tonic = rng.gen_range(0..12u8);
    let mode = if rng.gen_bool(cfg.minor_ratio.clamp(0.0, 1.0)) { Mode::Minor } else { Mode::Major };
    let pickup = rng.gen_bool(cfg.pickup_ratio.clamp(0.0, 1.0));
    let mut slots = layout(cfg.measures.max(1));
    if pickup {
        slots.insert(0, Slot { section: SectionLabel::Intro, phrase_in_section: 0, role: PhraseRole::Begin });
    }
    let n = slots.len();
    let key = KeyContext { tonic_pc: tonic, mode, span: MeasureSpan { start: 0, end: n } };
    let progs = if mode == Mode::Major { &MAJOR_PROGS } else { &MINOR_PROGS };
    let tempo = PROFILE_TEMPI[profile] + rng.gen_range(-3.0..3.0);
    let seconds_per_beat = 60.0 / tempo;
    let variants = cfg.variants.clamp(1, 8);

    let mut measures = Vec::with_capacity(n);
    let mut styles = Vec::with_capacity(n);
    let mut chosen = Vec::with_capacity(n);
    let mut prog = progs[0];
    let mut beat_clock = 0usize;
    let mut last_pitch = 72;
    for (m, slot) in slots.iter().enumerate() {
        let is_pickup = pickup && m == 0;
        let length_beats: u8 = if is_pickup { 1 } else { 4 };
        if slot.role.opens_phrase() && !is_pickup {
            prog = *progs.choose(&mut rng).expect("nonempty");
        }
        let pos = if is_pickup { 3 } else { (m - pickup as usize) % 4 };
        let (degree, quality) = if m + 1 == n { (0, if mode == Mode::Major { QualityClass::Maj } else { QualityClass::Min }) } else { prog[pos] };
        let chord = chord_for(&key, degree, quality, cfg.sevenths);
        let chords = vec![chord; length_beats as usize];
        let style = planned_style(profile, slot.section, slot.phrase_in_section);
        let variant = match cfg.dominant_variant {
            Some(p) if rng.gen_bool(p.clamp(0.0, 1.0)) => 0,
            _ => rng.gen_range(0..variants),
        };
        let accompaniment = render(style, &chords, length_beats, variant);
        let mel = melody(&mut rng, &key, &chords, length_beats, &mut last_pitch);
        let dynamics_trend = match slot.section {
            SectionLabel::Prechorus => DynamicsTrend::Crescendo,
            SectionLabel::Outro => DynamicsTrend::Decrescendo,
            _ => DynamicsTrend::None,
        };
        measures.push(Measure {
            index: m,
            length_beats,
            beat_positions: (0..length_beats as usize).map(|b| (beat_clock + b) as f64 * seconds_per_beat).collect(),
            melody: mel,
            accompaniment,
            chords,
            section_label: slot.section,
            phrase_role: slot.role,
            dynamics_trend,
        });
        beat_clock += length_beats as usize;
        styles.push(style);
        chosen.push(variant);
    }
    let song = Song { id: format!("synth{i:04}"), key_spans: vec![key], meter: Meter::default(), tempo_bpm: tempo, measures };
    (song, styles, profile, chosen)
}

/// Generates the corpus; identical configs give identical corpora.
pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut corpus = SynthCorpus { songs: Vec::new(), styles: Vec::new(), profiles: Vec::new(), variants: Vec::new() };
    for i in 0..cfg.songs {
        let (s, st, p, v) = song(cfg, i);
        corpus.songs.push(s);
        corpus.styles.push(st);
        corpus.profiles.push(p);
        corpus.variants.push(v);
    }
    corpus
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::active_signature;
    use crate::labeler::classify_texture;
    use crate::song::{validate_song, Axis};
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn songs_validate_and_are_deterministic() {
        let cfg = SynthConfig { songs: 6, pickup_ratio: 0.5, ..Default::default() };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.songs, b.songs);
        for s in &a.songs {
            assert!(validate_song(s).is_empty(), "{:?}", validate_song(s));
        }
        assert!(a.songs.iter().any(|s| s.measures[0].length_beats == 1));
    }

    #[test]
    fn layout_has_requested_length_and_phrases() {
        for n in [1, 3, 8, 20, 56, 100] {
            let l = layout(n);
            assert_eq!(l.len(), n);
            assert!(l[0].role.opens_phrase());
            assert!(l[n - 1].role.is_cadential() || n > 56, "{n}");
        }
        let l = layout(56);
        assert_eq!(l.iter().filter(|s| s.section == SectionLabel::Chorus).count(), 20);
    }

    #[test]
    fn labeler_recovers_every_texture() {
        for style in style_keys() {
            let chords = vec![ChordSymbol::new(2, QualityClass::Min); 4];
            for v in 0..8 {
                let notes = render(style, &chords, 4, v);
                let (label, scores) = classify_texture(&notes, 4).unwrap();
                assert_eq!(label, style.get(Axis::Texture), "{} v{v} {scores:?}", style.key());
            }
        }
    }

    #[test]
    fn every_style_key_has_four_skeletons() {
        let chords = vec!["G:7".parse::<ChordSymbol>().unwrap(); 4];
        for style in style_keys() {
            let sigs: BTreeSet<u64> = (0..8).map(|v| active_signature(&render(style, &chords, 4, v), 4).hash).collect();
            assert!(sigs.len() >= 4, "{} has {} skeletons", style.key(), sigs.len());
        }
    }

    #[test]
    fn realized_features_follow_labels() {
        let corpus = generate(&SynthConfig::default());
        let labels = corpus.labels().unwrap();
        let mut by: BTreeMap<(usize, u8), Vec<f64>> = BTreeMap::new();
        for s in &labels.songs {
            for m in &s.measures {
                by.entry((0, m.style.get(Axis::Dyn))).or_default().push(m.features.velocity_median);
                by.entry((1, m.style.get(Axis::Art))).or_default().push(m.features.staccato_ratio);
                by.entry((2, m.style.get(Axis::Rhythm))).or_default().push(m.features.onset_rate);
            }
        }
        let mean = |k| {
            let v: &Vec<f64> = &by[&k];
            v.iter().sum::<f64>() / v.len() as f64
        };
        for axis in 0..3 {
            let levels: Vec<u8> = by.keys().filter(|k| k.0 == axis).map(|k| k.1).collect();
            for w in levels.windows(2) {
                assert!(mean((axis, w[0])) < mean((axis, w[1])), "axis {axis} {:?}", w);
            }
        }
    }
}
