//! Beat-synchronous song representation shared by every stage of the pipeline.
//!
//! Time is measured in beats on a fixed grid of [`TICKS_PER_BEAT`] ticks, so
//! onsets, durations and everything hashed from them are exact.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::harmony::{ChordSymbol, KeyContext};

/// Resolution of the beat grid.
pub const TICKS_PER_BEAT: i64 = 24;

/// A beat position or duration, stored as an integer number of grid ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Beats(i64);

impl Beats {
    pub const ZERO: Beats = Beats(0);

    pub const fn from_ticks(ticks: i64) -> Self {
        Beats(ticks)
    }

    pub const fn whole(beats: i64) -> Self {
        Beats(beats * TICKS_PER_BEAT)
    }

    /// Exact rational `num/den` beats, if it lands on the grid.
    pub fn from_ratio(num: i64, den: i64) -> Option<Self> {
        if den <= 0 {
            return None;
        }
        let scaled = num.checked_mul(TICKS_PER_BEAT)?;
        (scaled % den == 0).then(|| Beats(scaled / den))
    }

    /// Nearest grid point to a real-valued beat position.
    pub fn snap(beats: f64) -> Self {
        Beats((beats * TICKS_PER_BEAT as f64).round() as i64)
    }

    pub const fn ticks(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / TICKS_PER_BEAT as f64
    }

    /// Zero-based index of the beat containing this position.
    pub fn beat_index(self) -> i64 {
        self.0.div_euclid(TICKS_PER_BEAT)
    }
}

impl std::ops::Add for Beats {
    type Output = Beats;
    fn add(self, rhs: Beats) -> Beats {
        Beats(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Beats {
    type Output = Beats;
    fn sub(self, rhs: Beats) -> Beats {
        Beats(self.0 - rhs.0)
    }
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

impl fmt::Display for Beats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = gcd(self.0, TICKS_PER_BEAT);
        write!(f, "{}/{}", self.0 / g, TICKS_PER_BEAT / g)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid beat value {0:?}: expected \"num/den\" on the {TICKS_PER_BEAT}-tick grid")]
pub struct BeatsParseError(String);

impl FromStr for Beats {
    type Err = BeatsParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || BeatsParseError(s.to_string());
        let (num, den) = s.split_once('/').unwrap_or((s, "1"));
        let num: i64 = num.trim().parse().map_err(|_| err())?;
        let den: i64 = den.trim().parse().map_err(|_| err())?;
        Beats::from_ratio(num, den).ok_or_else(err)
    }
}

impl Serialize for Beats {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Beats {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One performed note. Onsets are relative to the start of the owning measure;
/// the note may sound past the bar line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset: Beats,
    pub duration: Beats,
    pub pitch: u8,
    pub velocity: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voice_hint: Option<u8>,
}

impl NoteEvent {
    pub fn new(onset: Beats, duration: Beats, pitch: u8, velocity: u8) -> Self {
        NoteEvent { onset, duration, pitch, velocity, voice_hint: None }
    }

    pub fn end(&self) -> Beats {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionLabel {
    Intro,
    Verse,
    Prechorus,
    Chorus,
    Bridge,
    Outro,
    Other,
}

impl SectionLabel {
    pub const ALL: [SectionLabel; 7] = [
        SectionLabel::Intro,
        SectionLabel::Verse,
        SectionLabel::Prechorus,
        SectionLabel::Chorus,
        SectionLabel::Bridge,
        SectionLabel::Outro,
        SectionLabel::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SectionLabel::Intro => "intro",
            SectionLabel::Verse => "verse",
            SectionLabel::Prechorus => "prechorus",
            SectionLabel::Chorus => "chorus",
            SectionLabel::Bridge => "bridge",
            SectionLabel::Outro => "outro",
            SectionLabel::Other => "other",
        }
    }
}

impl FromStr for SectionLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        SectionLabel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown section label {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhraseRole {
    Begin,
    Mid,
    End,
    Single,
}

impl PhraseRole {
    pub const ALL: [PhraseRole; 4] =
        [PhraseRole::Begin, PhraseRole::Mid, PhraseRole::End, PhraseRole::Single];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Roles that close a phrase.
    pub fn is_cadential(self) -> bool {
        matches!(self, PhraseRole::End | PhraseRole::Single)
    }

    pub fn opens_phrase(self) -> bool {
        matches!(self, PhraseRole::Begin | PhraseRole::Single)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsTrend {
    #[default]
    None,
    Crescendo,
    Decrescendo,
    Swell,
    Drop,
}

impl DynamicsTrend {
    pub const ALL: [DynamicsTrend; 5] = [
        DynamicsTrend::None,
        DynamicsTrend::Crescendo,
        DynamicsTrend::Decrescendo,
        DynamicsTrend::Swell,
        DynamicsTrend::Drop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Meter {
    pub numerator: u8,
    pub denominator: u8,
}

impl Default for Meter {
    fn default() -> Self {
        Meter { numerator: 4, denominator: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub index: usize,
    pub length_beats: u8,
    /// Absolute time in seconds of each beat of the measure.
    pub beat_positions: Vec<f64>,
    pub melody: Vec<NoteEvent>,
    pub accompaniment: Vec<NoteEvent>,
    /// One chord per beat.
    pub chords: Vec<ChordSymbol>,
    pub section_label: SectionLabel,
    pub phrase_role: PhraseRole,
    pub dynamics_trend: DynamicsTrend,
}

impl Measure {
    pub fn length(&self) -> Beats {
        Beats::whole(self.length_beats as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Song {
    pub id: String,
    pub key_spans: Vec<KeyContext>,
    pub meter: Meter,
    pub tempo_bpm: f64,
    pub measures: Vec<Measure>,
}

impl Song {
    /// The key span containing measure `index`.
    pub fn key_at(&self, index: usize) -> Option<&KeyContext> {
        self.key_spans.iter().find(|k| k.span.contains(index))
    }

    /// Start of each measure in song beats.
    pub fn measure_starts(&self) -> Vec<Beats> {
        let mut t = Beats::ZERO;
        self.measures
            .iter()
            .map(|m| {
                let start = t;
                t = t + m.length();
                start
            })
            .collect()
    }
}

/// The six style axes, in slot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Dyn,
    Art,
    Rhythm,
    Tension,
    Texture,
    Register,
}

const DYN_LABELS: &[&str] = &["quiet", "soft", "medium", "loud"];
const ART_LABELS: &[&str] = &["gentle", "normal", "staccato"];
const RHYTHM_LABELS: &[&str] = &["slow", "medium", "fast", "dense"];
const TENSION_LABELS: &[&str] = &["steady", "light_sync", "syncopated"];
const TEXTURE_LABELS: &[&str] = &["block", "arp", "alberti", "stride", "ostinato", "mixed"];
const REGISTER_LABELS: &[&str] = &["warm", "mid", "bright"];

impl Axis {
    pub const ALL: [Axis; 6] =
        [Axis::Dyn, Axis::Art, Axis::Rhythm, Axis::Tension, Axis::Texture, Axis::Register];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Dyn => "dyn",
            Axis::Art => "art",
            Axis::Rhythm => "rhythm",
            Axis::Tension => "tension",
            Axis::Texture => "texture",
            Axis::Register => "register",
        }
    }

    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Axis::Dyn => DYN_LABELS,
            Axis::Art => ART_LABELS,
            Axis::Rhythm => RHYTHM_LABELS,
            Axis::Tension => TENSION_LABELS,
            Axis::Texture => TEXTURE_LABELS,
            Axis::Register => REGISTER_LABELS,
        }
    }

    pub fn size(self) -> usize {
        self.labels().len()
    }

    pub fn label_index(self, label: &str) -> Option<u8> {
        self.labels().iter().position(|l| *l == label).map(|i| i as u8)
    }

    pub fn from_name(name: &str) -> Option<Axis> {
        Axis::ALL.into_iter().find(|a| a.name() == name)
    }
}

/// Total number of labels across all axes.
pub const STYLE_LABEL_COUNT: usize = 23;

/// The six discrete style slots of one measure.
///
/// Ordering is lexicographic in slot order, which is the tie-break order used
/// throughout decoding and retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StyleVector([u8; 6]);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StyleError {
    #[error("label index {index} out of range for axis {axis}")]
    OutOfRange { axis: &'static str, index: u8 },
    #[error("unknown {axis} label {label:?}")]
    UnknownLabel { axis: &'static str, label: String },
}

impl StyleVector {
    pub fn new(slots: [u8; 6]) -> Result<Self, StyleError> {
        for axis in Axis::ALL {
            let index = slots[axis.index()];
            if index as usize >= axis.size() {
                return Err(StyleError::OutOfRange { axis: axis.name(), index });
            }
        }
        Ok(StyleVector(slots))
    }

    pub fn from_labels(labels: [&str; 6]) -> Result<Self, StyleError> {
        let mut slots = [0u8; 6];
        for axis in Axis::ALL {
            let label = labels[axis.index()];
            slots[axis.index()] = axis.label_index(label).ok_or_else(|| StyleError::UnknownLabel {
                axis: axis.name(),
                label: label.to_string(),
            })?;
        }
        Ok(StyleVector(slots))
    }

    pub fn slots(&self) -> [u8; 6] {
        self.0
    }

    pub fn get(&self, axis: Axis) -> u8 {
        self.0[axis.index()]
    }

    pub fn label(&self, axis: Axis) -> &'static str {
        axis.labels()[self.get(axis) as usize]
    }

    /// Copy with one slot replaced. Panics if `index` is outside the axis vocabulary.
    pub fn with(mut self, axis: Axis, index: u8) -> Self {
        assert!((index as usize) < axis.size(), "label index out of range");
        self.0[axis.index()] = index;
        self
    }

    /// Stable textual key, e.g. `quiet/gentle/slow/steady/block/warm`.
    pub fn key(&self) -> String {
        Axis::ALL.iter().map(|a| self.label(*a)).collect::<Vec<_>>().join("/")
    }

    pub fn hamming(&self, other: &StyleVector) -> usize {
        self.0.iter().zip(other.0.iter()).filter(|(a, b)| a != b).count()
    }

    /// Every vector in the style space, in lexicographic order.
    pub fn all() -> impl Iterator<Item = StyleVector> {
        let sizes: Vec<usize> = Axis::ALL.iter().map(|a| a.size()).collect();
        let total: usize = sizes.iter().product();
        (0..total).map(move |mut n| {
            let mut slots = [0u8; 6];
            for i in (0..6).rev() {
                slots[i] = (n % sizes[i]) as u8;
                n /= sizes[i];
            }
            StyleVector(slots)
        })
    }
}

impl fmt::Display for StyleVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for StyleVector {
    type Err = StyleError;
    fn from_str(s: &str) -> Result<Self, StyleError> {
        let parts: Vec<&str> = s.split('/').collect();
        let labels: [&str; 6] = parts.try_into().map_err(|_| StyleError::UnknownLabel {
            axis: "style",
            label: s.to_string(),
        })?;
        StyleVector::from_labels(labels)
    }
}

impl Serialize for StyleVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let labels: Vec<&str> = Axis::ALL.iter().map(|a| self.label(*a)).collect();
        labels.serialize(s)
    }
}

impl<'de> Deserialize<'de> for StyleVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let labels: Vec<String> = Vec::deserialize(d)?;
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let arr: [&str; 6] = refs
            .try_into()
            .map_err(|_| serde::de::Error::custom("style vector must have 6 labels"))?;
        StyleVector::from_labels(arr).map_err(serde::de::Error::custom)
    }
}

/// One invariant violation found by [`validate_song`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub measure: Option<usize>,
    pub field: String,
    pub message: String,
}

fn violation(measure: Option<usize>, field: &str, message: String) -> Violation {
    Violation { measure, field: field.to_string(), message }
}

fn check_notes(m: &Measure, notes: &[NoteEvent], field: &str, out: &mut Vec<Violation>) {
    for (i, n) in notes.iter().enumerate() {
        let f = format!("{field}[{i}]");
        if !(1..=127).contains(&n.velocity) {
            out.push(violation(Some(m.index), &format!("{f}.velocity"), format!("velocity {} outside 1..=127", n.velocity)));
        }
        if n.pitch > 127 {
            out.push(violation(Some(m.index), &format!("{f}.pitch"), format!("pitch {} outside 0..=127", n.pitch)));
        }
        if n.duration.ticks() <= 0 {
            out.push(violation(Some(m.index), &format!("{f}.duration"), "duration must be positive".into()));
        }
        if n.onset.ticks() < 0 || n.onset >= m.length() {
            out.push(violation(Some(m.index), &format!("{f}.onset"), format!("onset {} outside the measure", n.onset)));
        }
    }
}

/// Checks every structural invariant of a song. Returns an empty list iff the
/// song is well formed.
pub fn validate_song(song: &Song) -> Vec<Violation> {
    let mut out = Vec::new();
    if song.measures.is_empty() {
        out.push(violation(None, "measures", "song has no measures".into()));
    }
    if song.meter.numerator == 0 || song.meter.denominator == 0 {
        out.push(violation(None, "meter", "meter components must be positive".into()));
    }
    if !(song.tempo_bpm.is_finite() && song.tempo_bpm > 0.0) {
        out.push(violation(None, "tempo_bpm", format!("tempo {} must be positive", song.tempo_bpm)));
    }
    // Key spans must tile 0..measures.len() in order.
    let mut expected_start = 0usize;
    for (i, k) in song.key_spans.iter().enumerate() {
        if k.tonic_pc > 11 {
            out.push(violation(None, &format!("key_spans[{i}].tonic_pc"), format!("tonic {} outside 0..=11", k.tonic_pc)));
        }
        if k.span.start != expected_start || k.span.end <= k.span.start {
            out.push(violation(
                None,
                &format!("key_spans[{i}].span"),
                format!("span {}..{} does not continue at measure {expected_start}", k.span.start, k.span.end),
            ));
        }
        expected_start = k.span.end;
    }
    if song.key_spans.is_empty() || expected_start != song.measures.len() {
        out.push(violation(None, "key_spans", format!("key spans cover {expected_start} of {} measures", song.measures.len())));
    }
    for (pos, m) in song.measures.iter().enumerate() {
        if m.index != pos {
            out.push(violation(Some(m.index), "index", format!("measure at position {pos} has index {}", m.index)));
        }
        if !(1..=6).contains(&m.length_beats) {
            out.push(violation(Some(m.index), "length_beats", format!("length {} outside 1..=6", m.length_beats)));
        }
        if m.chords.len() != m.length_beats as usize {
            out.push(violation(
                Some(m.index),
                "chords",
                format!("{} chords for {} beats", m.chords.len(), m.length_beats),
            ));
        }
        if !m.beat_positions.is_empty() {
            if m.beat_positions.len() != m.length_beats as usize {
                out.push(violation(Some(m.index), "beat_positions", format!("{} anchors for {} beats", m.beat_positions.len(), m.length_beats)));
            } else if m.beat_positions.windows(2).any(|w| !(w[1] > w[0])) {
                out.push(violation(Some(m.index), "beat_positions", "beat anchors not strictly increasing".into()));
            }
        }
        check_notes(m, &m.melody, "melody", &mut out);
        check_notes(m, &m.accompaniment, "accompaniment", &mut out);
    }
    out
}
