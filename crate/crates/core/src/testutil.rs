//! Seeded generators shared by unit tests.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::harmony::{ChordSymbol, KeyContext, MeasureSpan, Mode};
use crate::song::{Beats, DynamicsTrend, Measure, Meter, NoteEvent, PhraseRole, SectionLabel, Song};

pub fn random_chord<R: Rng>(rng: &mut R) -> ChordSymbol {
    let texts = ["C:maj", "D:min7", "G:dom7", "A:min", "F:maj7", "E:sus4", "B:hdim7", "Eb:aug", "G:dom/B", "N", "F:min6"];
    let c: ChordSymbol = texts.choose(rng).unwrap().parse().unwrap();
    c.transpose(rng.gen_range(0..12))
}

pub fn random_notes<R: Rng>(rng: &mut R, length_beats: u8, max_notes: usize) -> Vec<NoteEvent> {
    let n = rng.gen_range(0..=max_notes);
    let mut notes: Vec<NoteEvent> = (0..n)
        .map(|_| {
            let onset = Beats::from_ticks(rng.gen_range(0..length_beats as i64 * 24));
            let duration = Beats::from_ticks(rng.gen_range(1..72));
            NoteEvent::new(onset, duration, rng.gen_range(30..100), rng.gen_range(1..=127))
        })
        .collect();
    notes.sort_by_key(|n| (n.onset, n.pitch));
    notes
}

pub fn random_song<R: Rng>(rng: &mut R, max_measures: usize) -> Song {
    let count = rng.gen_range(1..=max_measures);
    let numerator = *[3u8, 4].choose(rng).unwrap();
    let mut measures = Vec::with_capacity(count);
    let mut time = 0.0f64;
    for index in 0..count {
        let length_beats = if index == 0 && rng.gen_bool(0.2) { 1 } else { numerator };
        let beat_positions = if rng.gen_bool(0.5) {
            (0..length_beats)
                .map(|_| {
                    time += rng.gen_range(0.3..0.8);
                    time
                })
                .collect()
        } else {
            vec![]
        };
        measures.push(Measure {
            index,
            length_beats,
            beat_positions,
            melody: random_notes(rng, length_beats, 4),
            accompaniment: random_notes(rng, length_beats, 8),
            chords: (0..length_beats).map(|_| random_chord(rng)).collect(),
            section_label: *SectionLabel::ALL.choose(rng).unwrap(),
            phrase_role: *PhraseRole::ALL.choose(rng).unwrap(),
            dynamics_trend: *DynamicsTrend::ALL.choose(rng).unwrap(),
        });
    }
    let split = rng.gen_range(0..count);
    let mut key_spans = vec![];
    let mode = |rng: &mut R| if rng.gen_bool(0.5) { Mode::Major } else { Mode::Minor };
    if split > 0 {
        key_spans.push(KeyContext { tonic_pc: rng.gen_range(0..12), mode: mode(rng), span: MeasureSpan { start: 0, end: split } });
    }
    key_spans.push(KeyContext { tonic_pc: rng.gen_range(0..12), mode: mode(rng), span: MeasureSpan { start: split, end: count } });
    Song {
        id: format!("rand{}", rng.gen::<u32>()),
        key_spans,
        meter: Meter { numerator, denominator: 4 },
        tempo_bpm: (rng.gen_range(600..1800) as f64) / 10.0,
        measures,
    }
}
