use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::song::{Beats, Meter, NoteEvent, TICKS_PER_BEAT};

pub const PPQN: u16 = 480;
const MIDI_TICKS_PER_GRID: i64 = PPQN as i64 / TICKS_PER_BEAT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrangedMeasure {
    pub index: usize,
    pub length_beats: u8,
    /// `song:measure` of the retrieved source, or a marker for forced picks.
    pub source_id: String,
    /// Measure-relative notes after reharmonization.
    pub notes: Vec<NoteEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrangement {
    pub song_id: String,
    pub tempo_bpm: f64,
    pub meter: Meter,
    pub measures: Vec<ArrangedMeasure>,
}

impl Arrangement {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.measures.is_empty() {
            return Err(IngestError::InvalidArrangement("arrangement has no measures".into()));
        }
        for (pos, m) in self.measures.iter().enumerate() {
            if m.index != pos {
                return Err(IngestError::InvalidArrangement(format!("measure {pos} has index {}", m.index)));
            }
            if m.length_beats == 0 {
                return Err(IngestError::InvalidArrangement(format!("measure {pos} has zero length")));
            }
        }
        if !(self.tempo_bpm.is_finite() && self.tempo_bpm > 0.0) {
            return Err(IngestError::InvalidArrangement(format!("tempo {}", self.tempo_bpm)));
        }
        Ok(())
    }

    /// Measure start positions in song beats.
    pub fn measure_starts(&self) -> Vec<Beats> {
        let mut t = Beats::ZERO;
        self.measures
            .iter()
            .map(|m| {
                let s = t;
                t = t + Beats::whole(m.length_beats as i64);
                s
            })
            .collect()
    }
}

/// Absolute-time note in grid ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct AbsNote {
    start: i64,
    end: i64,
    pitch: u8,
    velocity: u8,
}

/// The exact notes `midi_bytes` renders, in absolute grid ticks: same-onset
/// duplicates merged and same-pitch overlaps truncated at the next onset.
fn rendered_notes(arr: &Arrangement) -> Vec<AbsNote> {
    let starts = arr.measure_starts();
    let mut by_start: BTreeMap<(u8, i64), AbsNote> = BTreeMap::new();
    for (m, start) in arr.measures.iter().zip(&starts) {
        for n in &m.notes {
            let s = start.ticks() + n.onset.ticks();
            let note = AbsNote { start: s, end: s + n.duration.ticks().max(1), pitch: n.pitch, velocity: n.velocity.max(1) };
            by_start
                .entry((n.pitch, s))
                .and_modify(|e| e.end = e.end.max(note.end))
                .or_insert(note);
        }
    }
    let mut out: Vec<AbsNote> = Vec::with_capacity(by_start.len());
    let mut last_for_pitch: BTreeMap<u8, usize> = BTreeMap::new();
    // BTreeMap order is (pitch, start), so each pitch's notes arrive in time order.
    for ((pitch, _), note) in by_start {
        if let Some(&i) = last_for_pitch.get(&pitch) {
            let prev: &mut AbsNote = &mut out[i];
            if prev.end > note.start {
                prev.end = note.start;
            }
        }
        last_for_pitch.insert(pitch, out.len());
        out.push(note);
    }
    out.sort();
    out
}

/// Renders the arrangement as a type-1 SMF: a conductor track and one piano track.
pub fn midi_bytes(arr: &Arrangement) -> Result<Vec<u8>, IngestError> {
    arr.validate()?;
    let us_per_quarter = (60_000_000.0 / arr.tempo_bpm).round() as u32;
    let den_pow = (arr.meter.denominator.max(1) as f64).log2().round() as u8;
    let conductor = vec![
        TrackEvent { delta: u28::new(0), kind: TrackEventKind::Meta(MetaMessage::TrackName(arr.song_id.as_bytes())) },
        TrackEvent { delta: u28::new(0), kind: TrackEventKind::Meta(MetaMessage::Tempo(u24::new(us_per_quarter))) },
        TrackEvent {
            delta: u28::new(0),
            kind: TrackEventKind::Meta(MetaMessage::TimeSignature(arr.meter.numerator, den_pow, 24, 8)),
        },
        TrackEvent { delta: u28::new(0), kind: TrackEventKind::Meta(MetaMessage::EndOfTrack) },
    ];

    // (tick, is_on, pitch, velocity); offs sort before ons at equal ticks.
    let mut events: Vec<(i64, bool, u8, u8)> = Vec::new();
    for n in rendered_notes(arr) {
        events.push((n.start * MIDI_TICKS_PER_GRID, true, n.pitch, n.velocity));
        events.push((n.end * MIDI_TICKS_PER_GRID, false, n.pitch, 0));
    }
    events.sort();
    let mut piano = vec![TrackEvent { delta: u28::new(0), kind: TrackEventKind::Meta(MetaMessage::TrackName(b"PIANO")) }];
    let mut now = 0i64;
    for (tick, on, pitch, vel) in events {
        let message = if on {
            MidiMessage::NoteOn { key: u7::new(pitch), vel: u7::new(vel) }
        } else {
            MidiMessage::NoteOff { key: u7::new(pitch), vel: u7::new(0) }
        };
        piano.push(TrackEvent {
            delta: u28::new((tick - now) as u32),
            kind: TrackEventKind::Midi { channel: u4::new(0), message },
        });
        now = tick;
    }
    piano.push(TrackEvent { delta: u28::new(0), kind: TrackEventKind::Meta(MetaMessage::EndOfTrack) });

    let mut smf = Smf::new(Header::new(Format::Parallel, Timing::Metrical(u15::new(PPQN))));
    smf.tracks.push(conductor);
    smf.tracks.push(piano);
    let mut bytes = Vec::new();
    smf.write_std(&mut bytes)?;
    Ok(bytes)
}

pub fn write_midi(arr: &Arrangement, path: &Path) -> Result<(), IngestError> {
    let bytes = midi_bytes(arr)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MidiNote {
    pub start_tick: u64,
    pub duration_ticks: u64,
    pub pitch: u8,
    pub velocity: u8,
    pub channel: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiTrack {
    pub name: Option<String>,
    pub notes: Vec<MidiNote>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MidiFile {
    pub ppqn: u16,
    /// (tick, microseconds per quarter), sorted by tick.
    pub tempo_map: Vec<(u64, u32)>,
    pub time_signature: Option<(u8, u8)>,
    pub tracks: Vec<MidiTrack>,
}

impl MidiFile {
    pub fn tick_to_seconds(&self, tick: u64) -> f64 {
        let mut seconds = 0.0;
        let mut last_tick = 0u64;
        let mut tempo = 500_000u32;
        for &(t, us) in &self.tempo_map {
            if t >= tick {
                break;
            }
            seconds += (t - last_tick) as f64 * tempo as f64 / 1e6 / self.ppqn as f64;
            last_tick = t;
            tempo = us;
        }
        seconds + (tick - last_tick) as f64 * tempo as f64 / 1e6 / self.ppqn as f64
    }

    pub fn first_tempo_bpm(&self) -> f64 {
        let us = self.tempo_map.first().map(|t| t.1).unwrap_or(500_000);
        60_000_000.0 / us as f64
    }
}

pub fn read_midi(bytes: &[u8]) -> Result<MidiFile, IngestError> {
    let smf = Smf::parse(bytes).map_err(|e| IngestError::Midi(e.to_string()))?;
    let ppqn = match smf.header.timing {
        Timing::Metrical(t) => t.as_int(),
        Timing::Timecode(..) => return Err(IngestError::Midi("timecode timing is not supported".into())),
    };
    let mut tempo_map = Vec::new();
    let mut time_signature = None;
    let mut tracks = Vec::new();
    for track in &smf.tracks {
        let mut now = 0u64;
        let mut name = None;
        let mut open: BTreeMap<(u8, u8), VecDeque<(u64, u8)>> = BTreeMap::new();
        let mut notes = Vec::new();
        for ev in track {
            now += ev.delta.as_int() as u64;
            match ev.kind {
                TrackEventKind::Meta(MetaMessage::TrackName(n)) => name = Some(String::from_utf8_lossy(n).into_owned()),
                TrackEventKind::Meta(MetaMessage::Tempo(t)) => tempo_map.push((now, t.as_int())),
                TrackEventKind::Meta(MetaMessage::TimeSignature(n, d, _, _)) => {
                    time_signature.get_or_insert((n, 1u8 << d.min(6)));
                }
                TrackEventKind::Midi { channel, message } => {
                    let ch = channel.as_int();
                    let (key, on_vel) = match message {
                        MidiMessage::NoteOn { key, vel } => (key.as_int(), vel.as_int()),
                        MidiMessage::NoteOff { key, .. } => (key.as_int(), 0),
                        _ => continue,
                    };
                    if on_vel > 0 {
                        open.entry((ch, key)).or_default().push_back((now, on_vel));
                    } else if let Some((start, vel)) = open.get_mut(&(ch, key)).and_then(|q| q.pop_front()) {
                        notes.push(MidiNote { start_tick: start, duration_ticks: now - start, pitch: key, velocity: vel, channel: ch });
                    }
                }
                _ => {}
            }
        }
        notes.sort_by_key(|n| (n.start_tick, n.pitch));
        tracks.push(MidiTrack { name, notes });
    }
    tempo_map.sort_by_key(|t| t.0);
    Ok(MidiFile { ppqn, tempo_map, time_signature, tracks })
}

/// Splits all notes of a MIDI file back into measures of the given lengths,
/// converting ticks to the 24-per-beat grid. Notes belong to the measure that
/// contains their onset.
pub fn arrangement_notes(file: &MidiFile, measure_lengths: &[u8]) -> Vec<Vec<NoteEvent>> {
    let mut starts = Vec::with_capacity(measure_lengths.len());
    let mut t = 0i64;
    for &l in measure_lengths {
        starts.push(t);
        t += l as i64 * TICKS_PER_BEAT;
    }
    let to_grid = |tick: u64| ((tick as i64) * TICKS_PER_BEAT + file.ppqn as i64 / 2) / file.ppqn as i64;
    let mut out = vec![Vec::new(); measure_lengths.len()];
    let mut all: Vec<&MidiNote> = file.tracks.iter().flat_map(|tr| tr.notes.iter()).collect();
    all.sort_by_key(|n| (n.start_tick, n.pitch));
    for n in all {
        let onset = to_grid(n.start_tick);
        let end = to_grid(n.start_tick + n.duration_ticks);
        let Some(m) = starts.iter().rposition(|s| *s <= onset) else { continue };
        out[m].push(NoteEvent::new(
            Beats::from_ticks(onset - starts[m]),
            Beats::from_ticks((end - onset).max(1)),
            n.pitch,
            n.velocity,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_notes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arrangement(measures: Vec<Vec<NoteEvent>>, lengths: &[u8]) -> Arrangement {
        Arrangement {
            song_id: "t".into(),
            tempo_bpm: 96.0,
            meter: Meter::default(),
            measures: measures
                .into_iter()
                .zip(lengths)
                .enumerate()
                .map(|(index, (notes, &length_beats))| ArrangedMeasure { index, length_beats, source_id: "x".into(), notes })
                .collect(),
        }
    }

    #[test]
    fn one_note_ticks() {
        let arr = arrangement(vec![vec![NoteEvent::new(Beats::ZERO, Beats::whole(1), 60, 80)]], &[4]);
        let file = read_midi(&midi_bytes(&arr).unwrap()).unwrap();
        assert_eq!(file.ppqn, 480);
        assert_eq!(file.tracks.len(), 2);
        assert_eq!(file.tempo_map.len(), 1);
        let n = file.tracks[1].notes[0];
        assert_eq!((n.start_tick, n.start_tick + n.duration_ticks, n.velocity), (0, 480, 80));
    }

    #[test]
    fn empty_arrangement_is_rejected() {
        let arr = arrangement(vec![], &[]);
        assert!(matches!(midi_bytes(&arr), Err(IngestError::InvalidArrangement(_))));
    }

    /// Oracle: with no same-pitch overlaps the rendered notes are the input notes.
    fn without_overlaps(notes: Vec<NoteEvent>, start: i64, taken: &mut Vec<(u8, i64, i64)>) -> Vec<NoteEvent> {
        notes
            .into_iter()
            .filter(|n| {
                let (s, e) = (start + n.onset.ticks(), start + n.onset.ticks() + n.duration.ticks());
                let clash = taken.iter().any(|&(p, ts, te)| p == n.pitch && s < te && ts < e);
                if !clash {
                    taken.push((n.pitch, s, e));
                }
                !clash
            })
            .collect()
    }

    #[test]
    fn round_trip_reproduces_notes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let count = rng.gen_range(1..6);
            let lengths: Vec<u8> = (0..count).map(|_| rng.gen_range(2..=6)).collect();
            let mut taken = Vec::new();
            let mut start = 0;
            let mut measures = Vec::new();
            for &l in &lengths {
                let notes = without_overlaps(random_notes(&mut rng, l, 10), start, &mut taken);
                start += l as i64 * 24;
                measures.push(notes);
            }
            let arr = arrangement(measures.clone(), &lengths);
            let file = read_midi(&midi_bytes(&arr).unwrap()).unwrap();
            let back = arrangement_notes(&file, &lengths);
            for (a, b) in measures.iter().zip(&back) {
                let mut a = a.clone();
                a.sort_by_key(|n| (n.onset, n.pitch));
                assert_eq!(&a, b);
            }
        }
    }

    #[test]
    fn overlapping_same_pitch_is_truncated() {
        let notes = vec![
            NoteEvent::new(Beats::ZERO, Beats::whole(4), 60, 80),
            NoteEvent::new(Beats::whole(1), Beats::whole(1), 60, 70),
            NoteEvent::new(Beats::whole(1), Beats::whole(2), 60, 90),
        ];
        let arr = arrangement(vec![notes], &[4]);
        let file = read_midi(&midi_bytes(&arr).unwrap()).unwrap();
        let back = arrangement_notes(&file, &[4]);
        assert_eq!(back[0].len(), 2);
        assert_eq!(back[0][0].duration, Beats::whole(1));
        assert_eq!(back[0][1].duration, Beats::whole(2));
    }
}
