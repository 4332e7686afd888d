//! POP909-style song directories: one MIDI file plus text sidecars for beats,
//! chords, keys and phrase structure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::midi::{read_midi, MidiFile, MidiNote};
use super::IngestError;
use crate::harmony::{ChordSymbol, KeyContext, MeasureSpan, Mode, QualityClass};
use crate::song::{Beats, DynamicsTrend, Measure, Meter, NoteEvent, PhraseRole, SectionLabel, Song};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceDirectory {
    pub midi_path: PathBuf,
    pub beat_annotation_path: PathBuf,
    pub chord_annotation_path: PathBuf,
    pub phrase_annotation_path: PathBuf,
    pub key_annotation_path: PathBuf,
}

fn first_existing(dir: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

impl SourceDirectory {
    /// Locates the sidecar files of one song directory.
    pub fn discover(dir: &Path) -> Result<Self, IngestError> {
        let missing = |what: &str| IngestError::MalformedAnnotation { path: dir.to_path_buf(), message: format!("no {what} file") };
        let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let midi_path = first_existing(dir, &[&format!("{id}.mid")])
            .or_else(|| {
                let mut mids: Vec<PathBuf> = std::fs::read_dir(dir)
                    .ok()?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("mid")))
                    .collect();
                mids.sort();
                mids.into_iter().next()
            })
            .ok_or_else(|| missing("MIDI"))?;
        Ok(SourceDirectory {
            midi_path,
            beat_annotation_path: first_existing(dir, &["beat_midi.txt", "beats.txt"]).ok_or_else(|| missing("beat"))?,
            chord_annotation_path: first_existing(dir, &["chord_midi.txt", "chords.txt"]).ok_or_else(|| missing("chord"))?,
            phrase_annotation_path: first_existing(dir, &["human_label1.txt", "phrases.txt"]).ok_or_else(|| missing("phrase"))?,
            key_annotation_path: first_existing(dir, &["key_audio.txt", "key.txt"]).ok_or_else(|| missing("key"))?,
        })
    }
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|e| IngestError::MalformedAnnotation { path: path.to_path_buf(), message: e.to_string() })
}

fn malformed(path: &Path, line: usize, message: impl std::fmt::Display) -> IngestError {
    IngestError::MalformedAnnotation { path: path.to_path_buf(), message: format!("line {}: {message}", line + 1) }
}

struct BeatGrid {
    times: Vec<f64>,
    downbeat: Vec<bool>,
}

impl BeatGrid {
    fn parse(path: &Path) -> Result<Self, IngestError> {
        let text = read_text(path)?;
        let mut times = Vec::new();
        let mut downbeat = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            let t: f64 = cols[0].parse().map_err(|_| malformed(path, i, "bad time"))?;
            if let Some(&prev) = times.last() {
                if !(t > prev) {
                    return Err(malformed(path, i, format!("beat time {t} not after {prev}")));
                }
            }
            let flag = match cols.get(1) {
                Some(c) => c.parse::<f64>().map_err(|_| malformed(path, i, "bad downbeat flag"))? != 0.0,
                None => false,
            };
            times.push(t);
            downbeat.push(flag);
        }
        if times.len() < 2 {
            return Err(IngestError::MalformedAnnotation { path: path.to_path_buf(), message: "fewer than two beats".into() });
        }
        if !downbeat.iter().any(|d| *d) {
            return Err(IngestError::MalformedAnnotation { path: path.to_path_buf(), message: "no downbeats marked".into() });
        }
        Ok(BeatGrid { times, downbeat })
    }

    fn interval(&self, i: usize) -> f64 {
        let n = self.times.len();
        let i = i.min(n - 2);
        self.times[i + 1] - self.times[i]
    }

    /// Time of beat `i`, extrapolating past the last annotation.
    fn time_of(&self, i: usize) -> f64 {
        let n = self.times.len();
        if i < n {
            self.times[i]
        } else {
            self.times[n - 1] + (i - n + 1) as f64 * self.interval(n - 2)
        }
    }

    /// Fractional beat position of a time in seconds.
    fn beat_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t < self.times[0] {
            return (t - self.times[0]) / self.interval(0);
        }
        let i = self.times.partition_point(|x| *x <= t) - 1;
        if i >= n - 1 {
            return (n - 1) as f64 + (t - self.times[n - 1]) / self.interval(n - 2);
        }
        i as f64 + (t - self.times[i]) / (self.times[i + 1] - self.times[i])
    }

    fn median_interval(&self) -> f64 {
        let mut d: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        if n % 2 == 1 {
            d[n / 2]
        } else {
            (d[n / 2 - 1] + d[n / 2]) / 2.0
        }
    }
}

/// Splits the beat grid into measures: (first beat index, length in beats).
fn measure_layout(grid: &BeatGrid) -> (Vec<(usize, u8)>, u8) {
    let downs: Vec<usize> = grid.downbeat.iter().enumerate().filter(|(_, d)| **d).map(|(i, _)| i).collect();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for w in downs.windows(2) {
        *counts.entry(w[1] - w[0]).or_default() += 1;
    }
    let numerator = counts
        .iter()
        .filter(|(len, _)| (2..=6).contains(*len))
        .max_by_key(|(len, c)| (**c, std::cmp::Reverse(**len)))
        .map(|(len, _)| *len as u8)
        .unwrap_or(4);
    let mut layout = Vec::new();
    let push_span = |start: usize, len: usize, layout: &mut Vec<(usize, u8)>| {
        let mut s = start;
        let mut rest = len;
        while rest > 0 {
            let l = if rest > 6 { (numerator as usize).min(rest) } else { rest };
            layout.push((s, l as u8));
            s += l;
            rest -= l;
        }
    };
    if downs[0] > 0 {
        push_span(0, downs[0], &mut layout);
    }
    for w in downs.windows(2) {
        push_span(w[0], w[1] - w[0], &mut layout);
    }
    let last = *downs.last().unwrap();
    let remaining = grid.times.len() - last;
    push_span(last, remaining.max(numerator as usize), &mut layout);
    (layout, numerator)
}

struct Span<T> {
    start: f64,
    end: f64,
    value: T,
}

fn parse_spans<T>(path: &Path, mut parse: impl FnMut(&str) -> Option<T>) -> Result<Vec<Span<T>>, IngestError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() < 3 {
            return Err(malformed(path, i, "expected `start end label`"));
        }
        let start: f64 = cols[0].parse().map_err(|_| malformed(path, i, "bad start"))?;
        let end: f64 = cols[1].parse().map_err(|_| malformed(path, i, "bad end"))?;
        if end < start {
            return Err(malformed(path, i, "span ends before it starts"));
        }
        let value = parse(cols[2]).ok_or_else(|| malformed(path, i, format!("bad label {:?}", cols[2])))?;
        out.push(Span { start, end, value });
    }
    Ok(out)
}

fn span_at<T>(spans: &[Span<T>], t: f64) -> Option<&T> {
    spans.iter().find(|s| s.start <= t && t < s.end).map(|s| &s.value)
}

fn parse_key(label: &str) -> Option<(u8, Mode)> {
    let (root, mode) = label.split_once(':')?;
    let mode = match mode.to_ascii_lowercase().as_str() {
        "maj" | "major" => Mode::Major,
        "min" | "minor" => Mode::Minor,
        _ => return None,
    };
    let c: ChordSymbol = format!("{root}:maj").parse().ok()?;
    Some((c.root_pc, mode))
}

/// Chord labels that do not parse keep their root (when readable) with quality `other`.
fn parse_chord_lenient(label: &str) -> (ChordSymbol, bool) {
    match label.parse::<ChordSymbol>() {
        Ok(c) => (c, true),
        Err(_) => {
            let root = label.split(':').next().and_then(|r| format!("{r}:maj").parse::<ChordSymbol>().ok());
            (ChordSymbol::new(root.map(|c| c.root_pc).unwrap_or(0), QualityClass::Other), false)
        }
    }
}

fn section_for(letter: char) -> SectionLabel {
    match letter {
        'i' | 'I' => SectionLabel::Intro,
        'A' => SectionLabel::Verse,
        'B' => SectionLabel::Chorus,
        'C' => SectionLabel::Bridge,
        'D' => SectionLabel::Prechorus,
        'o' | 'O' => SectionLabel::Outro,
        _ => SectionLabel::Other,
    }
}

/// Compact phrase strings such as `i4A8B8o4`: a letter then a measure count.
fn parse_phrases(path: &Path) -> Result<Vec<(SectionLabel, usize)>, IngestError> {
    let text = read_text(path)?;
    let text: String = text.split_whitespace().collect();
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if !c.is_ascii_alphabetic() {
            return Err(IngestError::MalformedAnnotation { path: path.to_path_buf(), message: format!("unexpected {c:?}") });
        }
        let mut digits = String::new();
        while let Some(d) = chars.peek().filter(|d| d.is_ascii_digit()) {
            digits.push(*d);
            chars.next();
        }
        let n: usize = digits
            .parse()
            .map_err(|_| IngestError::MalformedAnnotation { path: path.to_path_buf(), message: format!("phrase {c} has no length") })?;
        if n > 0 {
            out.push((section_for(c), n));
        }
    }
    Ok(out)
}

fn select_tracks(file: &MidiFile, path: &Path) -> Result<(Vec<MidiNote>, Vec<MidiNote>), IngestError> {
    let named = |keys: &[&str]| -> Vec<usize> {
        file.tracks
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.notes.is_empty())
            .filter(|(_, t)| t.name.as_ref().is_some_and(|n| keys.iter().any(|k| n.to_ascii_uppercase().contains(k))))
            .map(|(i, _)| i)
            .collect()
    };
    let melody = named(&["MELODY", "VOCAL"]);
    if melody.len() != 1 {
        return Err(IngestError::TrackAmbiguity(format!("{}: {} melody tracks", path.display(), melody.len())));
    }
    let mut accomp = named(&["PIANO", "BRIDGE"]);
    accomp.retain(|i| *i != melody[0]);
    if accomp.is_empty() {
        let mut rest: Vec<(usize, usize)> = file
            .tracks
            .iter()
            .enumerate()
            .filter(|(i, t)| *i != melody[0] && !t.notes.is_empty())
            .map(|(i, t)| (t.notes.len(), i))
            .collect();
        rest.sort_by(|a, b| b.cmp(a));
        match rest.as_slice() {
            [] => return Err(IngestError::TrackAmbiguity(format!("{}: no accompaniment track", path.display()))),
            [a, b, ..] if a.0 == b.0 => {
                return Err(IngestError::TrackAmbiguity(format!("{}: tracks {} and {} tie on note count", path.display(), a.1, b.1)))
            }
            [a, ..] => accomp.push(a.1),
        }
    }
    let take = |ids: &[usize]| -> Vec<MidiNote> {
        let mut v: Vec<MidiNote> = ids.iter().flat_map(|i| file.tracks[*i].notes.iter().copied()).collect();
        v.sort_by_key(|n| (n.start_tick, n.pitch));
        v
    };
    Ok((take(&melody), take(&accomp)))
}

/// Ingests one song directory into a [`Song`]. Also returns the chord labels
/// that did not parse.
pub fn ingest_dataset_song(dir: &SourceDirectory, id: &str) -> Result<(Song, Vec<String>), IngestError> {
    let bytes = std::fs::read(&dir.midi_path)?;
    let file = read_midi(&bytes)?;
    let (melody, accomp) = select_tracks(&file, &dir.midi_path)?;
    let grid = BeatGrid::parse(&dir.beat_annotation_path)?;
    let (layout, numerator) = measure_layout(&grid);

    let mut unrecognized = Vec::new();
    let chords = parse_spans(&dir.chord_annotation_path, |label| {
        let (c, ok) = parse_chord_lenient(label);
        if !ok {
            unrecognized.push(label.to_string());
        }
        Some(c)
    })?;
    let keys = parse_spans(&dir.key_annotation_path, parse_key)?;
    if keys.is_empty() {
        return Err(IngestError::MalformedAnnotation { path: dir.key_annotation_path.clone(), message: "no keys".into() });
    }
    let phrases = parse_phrases(&dir.phrase_annotation_path)?;

    // Phrase annotations count full measures; a leading pickup joins the first phrase.
    let pickup = layout.first().is_some_and(|(_, l)| *l < numerator) && grid.downbeat.first() == Some(&false);
    let mut structure: Vec<(SectionLabel, PhraseRole)> = Vec::new();
    for (section, n) in &phrases {
        for k in 0..*n {
            let role = match (*n, k) {
                (1, _) => PhraseRole::Single,
                (_, 0) => PhraseRole::Begin,
                (n, k) if k == n - 1 => PhraseRole::End,
                _ => PhraseRole::Mid,
            };
            structure.push((*section, role));
        }
    }
    if pickup {
        let section = structure.first().map(|s| s.0).unwrap_or(SectionLabel::Other);
        structure.insert(0, (section, PhraseRole::Begin));
    }

    let to_beats = |tick: u64| grid.beat_at(file.tick_to_seconds(tick));
    let measure_of = |beat: Beats| layout.iter().rposition(|(s, _)| Beats::whole(*s as i64) <= beat);
    let assign = |notes: &[MidiNote]| -> Vec<Vec<NoteEvent>> {
        let mut out = vec![Vec::new(); layout.len()];
        for n in notes {
            let onset = Beats::snap(to_beats(n.start_tick));
            let end = Beats::snap(to_beats(n.start_tick + n.duration_ticks));
            let Some(mi) = measure_of(onset) else { continue };
            let start = Beats::whole(layout[mi].0 as i64);
            if onset - start >= Beats::whole(layout[mi].1 as i64) {
                continue;
            }
            out[mi].push(NoteEvent::new(
                onset - start,
                Beats::from_ticks((end - onset).ticks().max(1)),
                n.pitch.min(127),
                n.velocity.clamp(1, 127),
            ));
        }
        out
    };
    let mel = assign(&melody);
    let acc = assign(&accomp);

    let mut measures = Vec::with_capacity(layout.len());
    let mut key_per_measure = Vec::with_capacity(layout.len());
    for (index, &(first_beat, length)) in layout.iter().enumerate() {
        let beat_positions: Vec<f64> = (0..length as usize).map(|b| grid.time_of(first_beat + b)).collect();
        let chords_here = (0..length as usize)
            .map(|b| {
                let t = grid.time_of(first_beat + b) + 0.25 * grid.interval(first_beat + b);
                span_at(&chords, t).cloned().unwrap_or_else(ChordSymbol::no_chord)
            })
            .collect();
        let key = span_at(&keys, beat_positions[0]).copied().unwrap_or(if index == 0 { keys[0].value } else { *key_per_measure.last().unwrap() });
        key_per_measure.push(key);
        let (section_label, phrase_role) = structure.get(index).copied().unwrap_or((SectionLabel::Other, PhraseRole::Single));
        measures.push(Measure {
            index,
            length_beats: length,
            beat_positions,
            melody: mel[index].clone(),
            accompaniment: acc[index].clone(),
            chords: chords_here,
            section_label,
            phrase_role,
            dynamics_trend: DynamicsTrend::None,
        });
    }

    let mut key_spans: Vec<KeyContext> = Vec::new();
    for (i, (tonic_pc, mode)) in key_per_measure.into_iter().enumerate() {
        match key_spans.last_mut() {
            Some(k) if k.tonic_pc == tonic_pc && k.mode == mode => k.span.end = i + 1,
            _ => key_spans.push(KeyContext { tonic_pc, mode, span: MeasureSpan { start: i, end: i + 1 } }),
        }
    }
    let tempo_bpm = (600.0 / grid.median_interval()).round() / 10.0;
    let song = Song { id: id.to_string(), key_spans, meter: Meter { numerator, denominator: 4 }, tempo_bpm, measures };
    Ok((song, unrecognized))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkippedSong {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub songs: usize,
    pub unrecognized_chords: usize,
    pub unrecognized_labels: BTreeMap<String, usize>,
    pub skipped: Vec<SkippedSong>,
}

/// Ingests every song directory under `root` in parallel; output is sorted by id.
pub fn ingest_dataset(root: &Path) -> Result<(Vec<Song>, IngestReport), IngestError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let results: Vec<(String, Result<(Song, Vec<String>), IngestError>)> = dirs
        .par_iter()
        .map(|d| {
            let id = d.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let r = SourceDirectory::discover(d).and_then(|src| ingest_dataset_song(&src, &id));
            (id, r)
        })
        .collect();
    let mut report = IngestReport::default();
    let mut songs = Vec::new();
    for (id, r) in results {
        match r {
            Ok((song, bad)) => {
                report.unrecognized_chords += bad.len();
                for b in bad {
                    *report.unrecognized_labels.entry(b).or_default() += 1;
                }
                songs.push(song);
            }
            Err(e) => report.skipped.push(SkippedSong { id, reason: e.to_string() }),
        }
    }
    report.songs = songs.len();
    Ok((songs, report))
}
