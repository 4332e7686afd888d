//! Chord symbols, keys, Roman numerals and quality matching.
//!
//! Chords are factorized into a root, a [`QualityClass`] and optional
//! extensions/alterations. Harmony is compared by quality rather than by root,
//! so most of the retriever only ever looks at [`QualityTag`]s.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::song::Song;

/// Set of pitch classes packed into the low 12 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct PcSet(u16);

impl PcSet {
    pub const EMPTY: PcSet = PcSet(0);

    pub fn from_pcs<I: IntoIterator<Item = u8>>(pcs: I) -> Self {
        let mut s = PcSet(0);
        for pc in pcs {
            s.insert(pc);
        }
        s
    }

    pub fn insert(&mut self, pc: u8) {
        self.0 |= 1 << (pc % 12);
    }

    pub fn contains(&self, pc: u8) -> bool {
        self.0 & (1 << (pc % 12)) != 0
    }

    pub fn union(self, other: PcSet) -> PcSet {
        PcSet(self.0 | other.0)
    }

    pub fn difference(self, other: PcSet) -> PcSet {
        PcSet(self.0 & !other.0)
    }

    pub fn intersection(self, other: PcSet) -> PcSet {
        PcSet(self.0 & other.0)
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn bits(&self) -> u16 {
        self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0..12u8).filter(move |pc| self.contains(*pc))
    }

    /// Transposes every member by `semitones`.
    pub fn transpose(self, semitones: i32) -> PcSet {
        PcSet::from_pcs(self.iter().map(|pc| (pc as i32 + semitones).rem_euclid(12) as u8))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityClass {
    Maj,
    Min,
    Dom,
    Dim,
    Aug,
    Sus2,
    Sus4,
    Other,
}

impl QualityClass {
    pub const ALL: [QualityClass; 8] = [
        QualityClass::Maj,
        QualityClass::Min,
        QualityClass::Dom,
        QualityClass::Dim,
        QualityClass::Aug,
        QualityClass::Sus2,
        QualityClass::Sus4,
        QualityClass::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QualityClass::Maj => "maj",
            QualityClass::Min => "min",
            QualityClass::Dom => "dom",
            QualityClass::Dim => "dim",
            QualityClass::Aug => "aug",
            QualityClass::Sus2 => "sus2",
            QualityClass::Sus4 => "sus4",
            QualityClass::Other => "other",
        }
    }

    /// Intervals above the root.
    pub fn template(self) -> &'static [u8] {
        match self {
            QualityClass::Maj => &[0, 4, 7],
            QualityClass::Min => &[0, 3, 7],
            QualityClass::Dom => &[0, 4, 7, 10],
            QualityClass::Dim => &[0, 3, 6],
            QualityClass::Aug => &[0, 4, 8],
            QualityClass::Sus2 => &[0, 2, 7],
            QualityClass::Sus4 => &[0, 5, 7],
            QualityClass::Other => &[0],
        }
    }

    pub fn is_sus(self) -> bool {
        matches!(self, QualityClass::Sus2 | QualityClass::Sus4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Extension {
    #[serde(rename = "6")]
    Six,
    #[serde(rename = "7")]
    Seven,
    #[serde(rename = "maj7")]
    Maj7,
    #[serde(rename = "9")]
    Nine,
    #[serde(rename = "11")]
    Eleven,
    #[serde(rename = "13")]
    Thirteen,
}

impl Extension {
    pub const ALL: [Extension; 6] = [
        Extension::Six,
        Extension::Seven,
        Extension::Maj7,
        Extension::Nine,
        Extension::Eleven,
        Extension::Thirteen,
    ];

    pub fn interval(self) -> u8 {
        match self {
            Extension::Six => 9,
            Extension::Seven => 10,
            Extension::Maj7 => 11,
            Extension::Nine => 2,
            Extension::Eleven => 5,
            Extension::Thirteen => 9,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Extension::Six => "6",
            Extension::Seven => "7",
            Extension::Maj7 => "maj7",
            Extension::Nine => "9",
            Extension::Eleven => "11",
            Extension::Thirteen => "13",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Alteration {
    Flat5,
    Sharp5,
    Flat9,
    Sharp9,
    Sharp11,
    Flat13,
}

impl Alteration {
    pub const ALL: [Alteration; 6] = [
        Alteration::Flat5,
        Alteration::Sharp5,
        Alteration::Flat9,
        Alteration::Sharp9,
        Alteration::Sharp11,
        Alteration::Flat13,
    ];

    pub fn interval(self) -> u8 {
        match self {
            Alteration::Flat5 => 6,
            Alteration::Sharp5 => 8,
            Alteration::Flat9 => 1,
            Alteration::Sharp9 => 3,
            Alteration::Sharp11 => 6,
            Alteration::Flat13 => 8,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Alteration::Flat5 => "b5",
            Alteration::Sharp5 => "#5",
            Alteration::Flat9 => "b9",
            Alteration::Sharp9 => "#9",
            Alteration::Sharp11 => "#11",
            Alteration::Flat13 => "b13",
        }
    }
}

/// A quality class together with its extensions; the unit compared beat by
/// beat during retrieval.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QualityTag {
    pub quality: QualityClass,
    pub extensions: BTreeSet<Extension>,
}

impl QualityTag {
    pub fn plain(quality: QualityClass) -> Self {
        QualityTag { quality, extensions: BTreeSet::new() }
    }

    pub fn with(quality: QualityClass, extensions: &[Extension]) -> Self {
        QualityTag { quality, extensions: extensions.iter().copied().collect() }
    }
}

impl Serialize for QualityTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut text = self.quality.name().to_string();
        for e in &self.extensions {
            text.push('+');
            text.push_str(e.token());
        }
        s.serialize_str(&text)
    }
}

impl<'de> Deserialize<'de> for QualityTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let mut parts = text.split('+');
        let q = parts.next().unwrap_or_default();
        let quality = QualityClass::ALL
            .into_iter()
            .find(|c| c.name() == q)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown quality {q:?}")))?;
        let mut extensions = BTreeSet::new();
        for p in parts {
            let e = Extension::ALL
                .into_iter()
                .find(|e| e.token() == p)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown extension {p:?}")))?;
            extensions.insert(e);
        }
        Ok(QualityTag { quality, extensions })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChordSymbol {
    pub root_pc: u8,
    pub quality: QualityClass,
    pub extensions: BTreeSet<Extension>,
    pub alterations: BTreeSet<Alteration>,
    pub bass_pc: Option<u8>,
}

impl ChordSymbol {
    pub fn new(root_pc: u8, quality: QualityClass) -> Self {
        ChordSymbol {
            root_pc: root_pc % 12,
            quality,
            extensions: BTreeSet::new(),
            alterations: BTreeSet::new(),
            bass_pc: None,
        }
    }

    /// The "no chord" symbol, written `N`.
    pub fn no_chord() -> Self {
        ChordSymbol::new(0, QualityClass::Other)
    }

    pub fn is_no_chord(&self) -> bool {
        self.quality == QualityClass::Other
    }

    pub fn with_extensions(mut self, exts: &[Extension]) -> Self {
        self.extensions.extend(exts.iter().copied());
        self
    }

    pub fn tag(&self) -> QualityTag {
        QualityTag { quality: self.quality, extensions: self.extensions.clone() }
    }

    pub fn transpose(&self, semitones: i32) -> ChordSymbol {
        let shift = |pc: u8| (pc as i32 + semitones).rem_euclid(12) as u8;
        ChordSymbol {
            root_pc: shift(self.root_pc),
            bass_pc: self.bass_pc.map(shift),
            ..self.clone()
        }
    }

    fn check_consistency(&self) -> Result<(), String> {
        let e = &self.extensions;
        if e.contains(&Extension::Maj7) && e.contains(&Extension::Seven) {
            return Err("both 7 and maj7".into());
        }
        if self.quality == QualityClass::Dom && e.contains(&Extension::Maj7) {
            return Err("maj7 on a dominant chord".into());
        }
        if self.quality == QualityClass::Other && (!e.is_empty() || !self.alterations.is_empty()) {
            return Err("extensions on an unrecognized quality".into());
        }
        Ok(())
    }
}

const NOTE_NAMES: [&str; 12] = ["C", "C#", "D", "Eb", "E", "F", "F#", "G", "Ab", "A", "Bb", "B"];

fn parse_note(s: &str) -> Option<u8> {
    let mut chars = s.chars();
    let base = match chars.next()? {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return None,
    };
    let mut pc = base as i32;
    for c in chars {
        match c {
            '#' => pc += 1,
            'b' => pc -= 1,
            _ => return None,
        }
    }
    Some(pc.rem_euclid(12) as u8)
}

/// Harte-style scale-degree bass, e.g. `3`, `b7`, relative to the root.
fn parse_degree_interval(s: &str) -> Option<u8> {
    let (shift, digits) = match s.as_bytes().first()? {
        b'b' => (-1, &s[1..]),
        b'#' => (1, &s[1..]),
        _ => (0, s),
    };
    let major = [0, 2, 4, 5, 7, 9, 11];
    let degree: usize = digits.parse().ok()?;
    if degree == 0 || degree > 13 {
        return None;
    }
    let base = major[(degree - 1) % 7] as i32;
    Some((base + shift).rem_euclid(12) as u8)
}

/// Shorthand quality tokens. Each entry is a distinct (quality, extensions) pair.
const SHORTHANDS: &[(&str, QualityClass, &[Extension])] = &[
    ("maj7", QualityClass::Maj, &[Extension::Maj7]),
    ("maj6", QualityClass::Maj, &[Extension::Six]),
    ("maj9", QualityClass::Maj, &[Extension::Maj7, Extension::Nine]),
    ("min7", QualityClass::Min, &[Extension::Seven]),
    ("min6", QualityClass::Min, &[Extension::Six]),
    ("min9", QualityClass::Min, &[Extension::Seven, Extension::Nine]),
    ("minmaj7", QualityClass::Min, &[Extension::Maj7]),
    ("dom7", QualityClass::Dom, &[Extension::Seven]),
    ("dom9", QualityClass::Dom, &[Extension::Seven, Extension::Nine]),
    ("dom13", QualityClass::Dom, &[Extension::Seven, Extension::Thirteen]),
    ("hdim7", QualityClass::Dim, &[Extension::Seven]),
    ("dim7", QualityClass::Dim, &[Extension::Six]),
];

/// Aliases accepted on input only.
const ALIASES: &[(&str, QualityClass, &[Extension])] = &[
    ("7", QualityClass::Dom, &[Extension::Seven]),
    ("9", QualityClass::Dom, &[Extension::Seven, Extension::Nine]),
    ("13", QualityClass::Dom, &[Extension::Seven, Extension::Thirteen]),
    ("11", QualityClass::Dom, &[Extension::Seven, Extension::Eleven]),
    ("sus", QualityClass::Sus4, &[]),
    ("", QualityClass::Maj, &[]),
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid chord symbol {text:?}: {reason}")]
pub struct ChordParseError {
    pub text: String,
    pub reason: String,
}

impl FromStr for ChordSymbol {
    type Err = ChordParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| ChordParseError { text: text.to_string(), reason: reason.to_string() };
        let s = text.trim();
        if s == "N" || s == "X" {
            return Ok(ChordSymbol::no_chord());
        }
        let (root, rest) = s.split_once(':').unwrap_or((s, "maj"));
        let root_pc = parse_note(root).ok_or_else(|| err("bad root"))?;
        let (body, bass) = match rest.rsplit_once('/') {
            Some((b, bass)) => (b, Some(bass)),
            None => (rest, None),
        };
        let (qual_tok, list) = match body.find('(') {
            Some(i) => {
                let close = body.rfind(')').filter(|c| *c > i).ok_or_else(|| err("unclosed '('"))?;
                if close != body.len() - 1 {
                    return Err(err("trailing text after ')'"));
                }
                (&body[..i], Some(&body[i + 1..close]))
            }
            None => (body, None),
        };
        let mut chord = if let Some(q) = QualityClass::ALL.into_iter().find(|q| q.name() == qual_tok) {
            ChordSymbol::new(root_pc, q)
        } else if let Some((_, q, exts)) =
            SHORTHANDS.iter().chain(ALIASES.iter()).find(|(tok, _, _)| *tok == qual_tok)
        {
            ChordSymbol::new(root_pc, *q).with_extensions(exts)
        } else {
            return Err(err("unknown quality"));
        };
        if let Some(list) = list {
            for item in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                if let Some(e) = Extension::ALL.into_iter().find(|e| e.token() == item) {
                    chord.extensions.insert(e);
                } else if item == "b7" {
                    chord.extensions.insert(Extension::Seven);
                } else if let Some(a) = Alteration::ALL.into_iter().find(|a| a.token() == item) {
                    chord.alterations.insert(a);
                } else {
                    return Err(err("unknown extension or alteration"));
                }
            }
        }
        if let Some(b) = bass {
            let pc = parse_note(b)
                .or_else(|| parse_degree_interval(b).map(|i| (root_pc + i) % 12))
                .ok_or_else(|| err("bad bass"))?;
            if pc != root_pc {
                chord.bass_pc = Some(pc);
            }
        }
        chord.check_consistency().map_err(|r| err(&r))?;
        Ok(chord)
    }
}

impl fmt::Display for ChordSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == ChordSymbol::no_chord() {
            return f.write_str("N");
        }
        write!(f, "{}:", NOTE_NAMES[self.root_pc as usize])?;
        let shorthand = SHORTHANDS.iter().find(|(_, q, exts)| {
            *q == self.quality && exts.len() == self.extensions.len() && exts.iter().all(|e| self.extensions.contains(e))
        });
        let mut items: Vec<&str> = Vec::new();
        match shorthand {
            Some((tok, _, _)) => f.write_str(tok)?,
            None => {
                f.write_str(self.quality.name())?;
                items.extend(self.extensions.iter().map(|e| e.token()));
            }
        }
        items.extend(self.alterations.iter().map(|a| a.token()));
        if !items.is_empty() {
            write!(f, "({})", items.join(","))?;
        }
        if let Some(b) = self.bass_pc {
            write!(f, "/{}", NOTE_NAMES[b as usize])?;
        }
        Ok(())
    }
}

impl Serialize for ChordSymbol {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChordSymbol {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

impl Mode {
    pub fn scale(self) -> [u8; 7] {
        match self {
            Mode::Major => [0, 2, 4, 5, 7, 9, 11],
            Mode::Minor => [0, 2, 3, 5, 7, 8, 10],
        }
    }

    /// Tonic after normalization: C for major, A for minor.
    pub fn normalized_tonic(self) -> u8 {
        match self {
            Mode::Major => 0,
            Mode::Minor => 9,
        }
    }
}

/// Half-open measure range `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasureSpan {
    pub start: usize,
    pub end: usize,
}

impl MeasureSpan {
    pub fn contains(&self, index: usize) -> bool {
        (self.start..self.end).contains(&index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyContext {
    pub tonic_pc: u8,
    pub mode: Mode,
    pub span: MeasureSpan,
}

impl KeyContext {
    pub fn transpose(&self, semitones: i32) -> KeyContext {
        KeyContext { tonic_pc: (self.tonic_pc as i32 + semitones).rem_euclid(12) as u8, ..*self }
    }
}

/// Transposition in (-6, +6] that moves `tonic` onto the normalized tonic of `mode`.
pub fn normalization_offset(tonic_pc: u8, mode: Mode) -> i32 {
    let d = (mode.normalized_tonic() as i32 - tonic_pc as i32).rem_euclid(12);
    if d > 6 {
        d - 12
    } else {
        d
    }
}

fn shift_pitch(p: u8, offset: i32) -> u8 {
    (p as i32 + offset).clamp(0, 127) as u8
}

/// Transposes every key span to C major / A minor, shifting notes and chords of
/// each span by that span's own offset.
pub fn normalize_key(song: &Song) -> Song {
    let mut out = song.clone();
    for (span_i, key) in song.key_spans.iter().enumerate() {
        let offset = normalization_offset(key.tonic_pc, key.mode);
        out.key_spans[span_i] = key.transpose(offset);
        for m in out.measures.iter_mut().filter(|m| key.span.contains(m.index)) {
            for n in m.melody.iter_mut().chain(m.accompaniment.iter_mut()) {
                n.pitch = shift_pitch(n.pitch, offset);
            }
            for c in m.chords.iter_mut() {
                if !c.is_no_chord() {
                    *c = c.transpose(offset);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RomanNumeral {
    pub degree: u8,
    pub quality: QualityClass,
    pub chromatic_offset: i8,
    pub extensions: BTreeSet<Extension>,
    pub bass_degree: Option<u8>,
}

/// (degree, chromatic offset) for a pitch class `rel` semitones above the tonic.
fn degree_of(rel: u8, mode: Mode) -> (u8, i8) {
    let scale = mode.scale();
    if let Some(i) = scale.iter().position(|s| *s == rel) {
        return (i as u8 + 1, 0);
    }
    // Non-diatonic roots under common-practice spelling.
    match (mode, rel) {
        (Mode::Major, 1) => (2, -1),
        (Mode::Major, 3) => (3, -1),
        (Mode::Major, 6) => (4, 1),
        (Mode::Major, 8) => (6, -1),
        (Mode::Major, 10) => (7, -1),
        (Mode::Minor, 1) => (2, -1),
        (Mode::Minor, 4) => (3, 1),
        (Mode::Minor, 6) => (5, -1),
        (Mode::Minor, 9) => (6, 1),
        (Mode::Minor, 11) => (7, 1),
        _ => unreachable!("every pitch class is diatonic or listed"),
    }
}

pub fn to_roman(chord: &ChordSymbol, key: &KeyContext) -> RomanNumeral {
    let rel = (chord.root_pc as i32 - key.tonic_pc as i32).rem_euclid(12) as u8;
    let (degree, chromatic_offset) = degree_of(rel, key.mode);
    let bass_degree = chord.bass_pc.map(|b| {
        let rel = (b as i32 - key.tonic_pc as i32).rem_euclid(12) as u8;
        degree_of(rel, key.mode).0
    });
    RomanNumeral {
        degree,
        quality: chord.quality,
        chromatic_offset,
        extensions: chord.extensions.clone(),
        bass_degree,
    }
}

/// How permissive quality matching is on a given beat, ordered from strict to
/// fully ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxStage {
    Strict,
    Family,
    CrossFamily,
    Wildcard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Family,
    SusRelated,
    CrossFamily,
    Wildcard,
    Missing,
    Mismatch,
}

impl MatchKind {
    /// Whether a candidate beat with this outcome may enter a quality-constrained pool.
    pub fn is_acceptable(self) -> bool {
        !matches!(self, MatchKind::Missing | MatchKind::Mismatch)
    }
}

fn sus_related(a: QualityClass, b: QualityClass) -> bool {
    let other_side = |q: QualityClass| matches!(q, QualityClass::Dom | QualityClass::Maj);
    (a.is_sus() && other_side(b)) || (b.is_sus() && other_side(a))
}

/// Classifies one beat of a target/candidate quality pair.
pub fn quality_match(target: &QualityTag, cand: &QualityTag, stage: RelaxStage) -> MatchKind {
    if target.quality == QualityClass::Other || cand.quality == QualityClass::Other {
        return if stage == RelaxStage::Wildcard { MatchKind::Wildcard } else { MatchKind::Missing };
    }
    if target == cand {
        return MatchKind::Exact;
    }
    if stage == RelaxStage::Wildcard {
        return MatchKind::Wildcard;
    }
    let relaxed = stage >= RelaxStage::Family;
    if target.quality == cand.quality {
        return if relaxed { MatchKind::Family } else { MatchKind::Mismatch };
    }
    if sus_related(target.quality, cand.quality) {
        return if relaxed { MatchKind::SusRelated } else { MatchKind::Mismatch };
    }
    if stage >= RelaxStage::CrossFamily {
        MatchKind::CrossFamily
    } else {
        MatchKind::Mismatch
    }
}

/// Pitch classes of the chord: template, extensions, alterations and bass.
pub fn chord_tone_mask(chord: &ChordSymbol) -> PcSet {
    let mut s = PcSet::EMPTY;
    for i in chord.quality.template() {
        s.insert(chord.root_pc + i);
    }
    for e in &chord.extensions {
        s.insert(chord.root_pc + e.interval());
    }
    for a in &chord.alterations {
        s.insert(chord.root_pc + a.interval());
    }
    if let Some(b) = chord.bass_pc {
        s.insert(b);
    }
    s
}

/// Pitch classes of the bare quality template (no extensions, alterations or bass).
pub fn triad_mask(chord: &ChordSymbol) -> PcSet {
    PcSet::from_pcs(chord.quality.template().iter().map(|i| chord.root_pc + i))
}

/// The seven scale pitch classes; natural minor for minor keys.
pub fn diatonic_mask(key: &KeyContext) -> PcSet {
    PcSet::from_pcs(key.mode.scale().iter().map(|s| key.tonic_pc + s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(s: &str) -> ChordSymbol {
        s.parse().unwrap()
    }

    fn key(tonic_pc: u8, mode: Mode) -> KeyContext {
        KeyContext { tonic_pc, mode, span: MeasureSpan { start: 0, end: 1 } }
    }

    #[test]
    fn parses_grammar_examples() {
        let ch = c("C:maj7");
        assert_eq!((ch.root_pc, ch.quality), (0, QualityClass::Maj));
        assert!(ch.extensions.contains(&Extension::Maj7));
        let g = c("G:dom/B");
        assert_eq!((g.root_pc, g.quality, g.bass_pc), (7, QualityClass::Dom, Some(11)));
        assert_eq!(c("A:min(7,9)/C").to_string(), "A:min9/C");
        assert_eq!(c("C:maj/3").bass_pc, Some(4));
        assert_eq!(c("D:sus4(b7)").extensions.len(), 1);
        assert!("C:dom(maj7)".parse::<ChordSymbol>().is_err());
        assert!("H:maj".parse::<ChordSymbol>().is_err());
        assert_eq!(c("N"), ChordSymbol::no_chord());
    }

    #[test]
    fn masks() {
        assert_eq!(chord_tone_mask(&c("C:maj")), PcSet::from_pcs([0, 4, 7]));
        assert_eq!(chord_tone_mask(&c("G:dom(7)")), PcSet::from_pcs([7, 11, 2, 5]));
        assert_eq!(diatonic_mask(&key(9, Mode::Minor)), PcSet::from_pcs([9, 11, 0, 2, 4, 5, 7]));
    }

    #[test]
    fn roman_examples() {
        let cmaj = key(0, Mode::Major);
        let r = to_roman(&c("D:min7"), &cmaj);
        assert_eq!((r.degree, r.quality, r.chromatic_offset), (2, QualityClass::Min, 0));
        assert!(r.extensions.contains(&Extension::Seven));
        assert_eq!(to_roman(&c("C:maj7"), &cmaj).degree, 1);
        assert_eq!(to_roman(&c("C:maj7"), &key(5, Mode::Major)).degree, 5);
        let eb = to_roman(&c("Eb:maj"), &cmaj);
        assert_eq!((eb.degree, eb.chromatic_offset), (3, -1));
        // Raised-seventh dominant in minor stays on degree 5.
        let v = to_roman(&c("E:dom7"), &key(9, Mode::Minor));
        assert_eq!((v.degree, v.quality), (5, QualityClass::Dom));
    }

    #[test]
    fn degree_table_oracle() {
        // Brute force: every non-diatonic pc must sit one semitone from the
        // diatonic degree it is spelled against.
        for mode in [Mode::Major, Mode::Minor] {
            let scale = mode.scale();
            for rel in 0..12u8 {
                let (deg, off) = degree_of(rel, mode);
                let base = scale[deg as usize - 1] as i32;
                assert_eq!((base + off as i32).rem_euclid(12), rel as i32, "{mode:?} rel {rel}");
            }
        }
    }

    #[test]
    fn normalization_offsets() {
        assert_eq!(normalization_offset(9, Mode::Minor), 0);
        assert_eq!(normalization_offset(7, Mode::Major), 5);
        assert_eq!(normalization_offset(4, Mode::Major), -4);
        assert_eq!(normalization_offset(6, Mode::Major), 6);
    }

    /// Independent truth table for strict and cross-family stages.
    fn expected_kind(t: QualityClass, cq: QualityClass, same_exts: bool, stage: RelaxStage) -> MatchKind {
        use QualityClass::*;
        if t == Other || cq == Other {
            return if stage == RelaxStage::Wildcard { MatchKind::Wildcard } else { MatchKind::Missing };
        }
        if t == cq && same_exts {
            return MatchKind::Exact;
        }
        match stage {
            RelaxStage::Wildcard => MatchKind::Wildcard,
            RelaxStage::Strict => MatchKind::Mismatch,
            _ => {
                if t == cq {
                    MatchKind::Family
                } else if [(Sus2, Dom), (Sus2, Maj), (Sus4, Dom), (Sus4, Maj), (Dom, Sus2), (Maj, Sus2), (Dom, Sus4), (Maj, Sus4)]
                    .contains(&(t, cq))
                {
                    MatchKind::SusRelated
                } else if stage == RelaxStage::CrossFamily {
                    MatchKind::CrossFamily
                } else {
                    MatchKind::Mismatch
                }
            }
        }
    }

    #[test]
    fn quality_match_truth_table() {
        let stages = [RelaxStage::Strict, RelaxStage::Family, RelaxStage::CrossFamily, RelaxStage::Wildcard];
        for t in QualityClass::ALL {
            for cq in QualityClass::ALL {
                for (te, ce) in [(vec![], vec![]), (vec![Extension::Seven], vec![]), (vec![Extension::Nine], vec![Extension::Nine])] {
                    let a = QualityTag::with(t, &te);
                    let b = QualityTag::with(cq, &ce);
                    for s in stages {
                        assert_eq!(quality_match(&a, &b, s), expected_kind(t, cq, te == ce, s), "{a:?} {b:?} {s:?}");
                    }
                }
            }
        }
        let min = QualityTag::plain(QualityClass::Min);
        let min7 = QualityTag::with(QualityClass::Min, &[Extension::Seven]);
        assert_eq!(quality_match(&min, &min7, RelaxStage::Family), MatchKind::Family);
        let dom = QualityTag::plain(QualityClass::Dom);
        assert_eq!(quality_match(&dom, &min, RelaxStage::Strict), MatchKind::Mismatch);
        assert_eq!(quality_match(&dom, &min, RelaxStage::CrossFamily), MatchKind::CrossFamily);
    }

    #[test]
    fn quality_match_symmetric_and_monotone() {
        let tags: Vec<QualityTag> = QualityClass::ALL
            .iter()
            .flat_map(|q| [QualityTag::plain(*q), QualityTag::with(*q, &[Extension::Seven])])
            .collect();
        let stages = [RelaxStage::Strict, RelaxStage::Family, RelaxStage::CrossFamily, RelaxStage::Wildcard];
        for a in &tags {
            for b in &tags {
                for s in stages {
                    let ab = quality_match(a, b, s);
                    if matches!(ab, MatchKind::Exact | MatchKind::Family) {
                        assert_eq!(ab, quality_match(b, a, s));
                    }
                    for later in stages.iter().filter(|l| **l > s) {
                        if ab.is_acceptable() {
                            assert!(quality_match(a, b, *later).is_acceptable());
                        }
                    }
                }
            }
        }
    }

    fn arb_chord() -> impl Strategy<Value = ChordSymbol> {
        let quals = prop::sample::select(QualityClass::ALL[..7].to_vec());
        (0u8..12, quals, prop::collection::btree_set(prop::sample::select(Extension::ALL.to_vec()), 0..3), prop::option::of(0u8..12))
            .prop_filter_map("consistent", |(root, q, exts, bass)| {
                let ch = ChordSymbol { root_pc: root, quality: q, extensions: exts, alterations: BTreeSet::new(), bass_pc: bass.filter(|b| *b != root) };
                ch.check_consistency().ok().map(|_| ch)
            })
    }

    proptest! {
        #[test]
        fn roman_is_transposition_invariant(ch in arb_chord(), tonic in 0u8..12, minor in any::<bool>(), k in -12i32..12) {
            let mode = if minor { Mode::Minor } else { Mode::Major };
            let key = key(tonic, mode);
            prop_assert_eq!(to_roman(&ch.transpose(k), &key.transpose(k)), to_roman(&ch, &key));
        }

        #[test]
        fn mask_contains_root_or_bass(ch in arb_chord()) {
            let m = chord_tone_mask(&ch);
            prop_assert!(m.contains(ch.root_pc));
            if let Some(b) = ch.bass_pc { prop_assert!(m.contains(b)); }
        }

        #[test]
        fn chord_text_round_trips(ch in arb_chord()) {
            let text = ch.to_string();
            prop_assert_eq!(text.parse::<ChordSymbol>().unwrap(), ch);
        }
    }
}
