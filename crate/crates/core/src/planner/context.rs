//! Token tape and structure vector for one target measure.

use serde::{Deserialize, Serialize};

use crate::harmony::{to_roman, Extension, KeyContext, Mode, QualityClass};
use crate::prompt::{PromptVector, PROMPT_DIM};
use crate::song::{Axis, DynamicsTrend, Measure, NoteEvent, PhraseRole, SectionLabel, Song, StyleVector, TICKS_PER_BEAT};

use super::{PlannerConfig, PlannerError};

pub const GLOBAL_TOKENS: usize = 3;
pub const TOKENS_PER_MEASURE: usize = 8;
pub const STRUCT_DIM: usize = 7 + 4 + 3 + 5;
pub const COND_DIM: usize = STRUCT_DIM + PROMPT_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Feature {
    Kind,
    Offset,
    Mode,
    Tempo,
    Meter,
    Section,
    Role,
    Trend,
    Beat,
    Degree,
    Chromatic,
    Quality,
    BassDegree,
    ExtClass,
    Density,
    Register,
    Rhythm,
    Contour,
    StyleDyn,
    StyleArt,
    StyleRhythm,
    StyleTension,
    StyleTexture,
    StyleRegister,
    Length,
}

impl Feature {
    pub const ALL: [Feature; 25] = [
        Feature::Kind,
        Feature::Offset,
        Feature::Mode,
        Feature::Tempo,
        Feature::Meter,
        Feature::Section,
        Feature::Role,
        Feature::Trend,
        Feature::Beat,
        Feature::Degree,
        Feature::Chromatic,
        Feature::Quality,
        Feature::BassDegree,
        Feature::ExtClass,
        Feature::Density,
        Feature::Register,
        Feature::Rhythm,
        Feature::Contour,
        Feature::StyleDyn,
        Feature::StyleArt,
        Feature::StyleRhythm,
        Feature::StyleTension,
        Feature::StyleTexture,
        Feature::StyleRegister,
        Feature::Length,
    ];

    fn style(axis: Axis) -> Feature {
        [Feature::StyleDyn, Feature::StyleArt, Feature::StyleRhythm, Feature::StyleTension, Feature::StyleTexture, Feature::StyleRegister]
            [axis.index()]
    }
}

mod kind {
    pub const MODE: u16 = 0;
    pub const TEMPO: u16 = 1;
    pub const METER: u16 = 2;
    pub const STRUCTURE: u16 = 3;
    pub const HARMONY: u16 = 4;
    pub const MELODY: u16 = 5;
    pub const STYLE: u16 = 6;
    pub const LENGTH: u16 = 7;
    pub const PAD: u16 = 8;
}

/// Sizes of the factorized embedding tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocab {
    pub sizes: Vec<(Feature, usize)>,
}

impl TokenVocab {
    pub fn new(cfg: &PlannerConfig) -> Self {
        let sizes = Feature::ALL
            .into_iter()
            .map(|f| {
                let n = match f {
                    Feature::Kind => 9,
                    Feature::Offset => cfg.past_window + cfg.future_window + 2,
                    Feature::Mode => 2,
                    Feature::Tempo => 8,
                    Feature::Meter => 8,
                    Feature::Section => SectionLabel::ALL.len(),
                    Feature::Role => PhraseRole::ALL.len(),
                    Feature::Trend => DynamicsTrend::ALL.len(),
                    Feature::Beat => 4,
                    Feature::Degree => 8,
                    Feature::Chromatic => 3,
                    Feature::Quality => QualityClass::ALL.len(),
                    Feature::BassDegree => 8,
                    Feature::ExtClass => 4,
                    Feature::Density => 5,
                    Feature::Register => 4,
                    Feature::Rhythm => RHYTHM_TEMPLATES.len(),
                    Feature::Contour => 5,
                    Feature::StyleDyn => Axis::Dyn.size(),
                    Feature::StyleArt => Axis::Art.size(),
                    Feature::StyleRhythm => Axis::Rhythm.size(),
                    Feature::StyleTension => Axis::Tension.size(),
                    Feature::StyleTexture => Axis::Texture.size(),
                    Feature::StyleRegister => Axis::Register.size(),
                    Feature::Length => 7,
                };
                (f, n)
            })
            .collect();
        TokenVocab { sizes }
    }

    pub fn size(&self, f: Feature) -> usize {
        self.sizes[f as usize].1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub features: Vec<(Feature, u16)>,
    /// Excluded from attention keys and pooling.
    pub masked: bool,
    /// Belongs to the target measure.
    pub target: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub tokens: Vec<Token>,
    pub cond: [f64; COND_DIM],
}

impl Context {
    pub fn token_count(past: usize, future: usize) -> usize {
        GLOBAL_TOKENS + TOKENS_PER_MEASURE * (past + 1 + future)
    }
}

/// Sixteen canonical onset patterns over eight equal slots of a measure.
pub const RHYTHM_TEMPLATES: [u8; 16] = [
    0b1000_0000,
    0b1000_1000,
    0b1010_1010,
    0b1111_1111,
    0b1000_1010,
    0b1010_1000,
    0b1001_1000,
    0b1001_0010,
    0b0101_0101,
    0b1110_1110,
    0b1011_1010,
    0b1010_1011,
    0b0010_1010,
    0b1100_1100,
    0b1011_0110,
    0b0000_0000,
];

fn onset_mask(notes: &[NoteEvent], length_beats: u8) -> u8 {
    let span = length_beats.max(1) as i64 * TICKS_PER_BEAT;
    notes.iter().fold(0u8, |m, n| {
        let slot = (n.onset.ticks().clamp(0, span - 1) * 8 / span) as u32;
        m | (0x80 >> slot)
    })
}

/// Nearest template by Hamming distance; ties go to the lower index.
pub fn rhythm_template(notes: &[NoteEvent], length_beats: u8) -> u8 {
    let m = onset_mask(notes, length_beats);
    (0..RHYTHM_TEMPLATES.len()).min_by_key(|i| ((RHYTHM_TEMPLATES[*i] ^ m).count_ones(), *i)).unwrap() as u8
}

/// 0 for silence, then four onset-rate bins.
pub fn density_bin(notes: &[NoteEvent], length_beats: u8) -> u8 {
    if notes.is_empty() {
        return 0;
    }
    let rate = notes.len() as f64 / length_beats.max(1) as f64;
    match rate {
        r if r < 0.75 => 1,
        r if r < 1.5 => 2,
        r if r < 2.5 => 3,
        _ => 4,
    }
}

/// 0 for silence, then low, middle and high thirds of the melody range.
pub fn register_bin(notes: &[NoteEvent]) -> u8 {
    if notes.is_empty() {
        return 0;
    }
    let mean = notes.iter().map(|n| n.pitch as f64).sum::<f64>() / notes.len() as f64;
    match mean {
        m if m < 62.0 => 1,
        m if m < 70.0 => 2,
        _ => 3,
    }
}

/// 0 flat, 1 up, 2 down, 3 arch, 4 v.
pub fn contour_bin(notes: &[NoteEvent]) -> u8 {
    let mut sorted: Vec<&NoteEvent> = notes.iter().collect();
    sorted.sort_by_key(|n| (n.onset, n.pitch));
    let p: Vec<i32> = sorted.iter().map(|n| n.pitch as i32).collect();
    if p.len() < 2 {
        return 0;
    }
    let (first, last) = (p[0], p[p.len() - 1]);
    let inner = &p[1..p.len() - 1];
    if inner.iter().any(|x| *x >= first.max(last) + 2) {
        3
    } else if inner.iter().any(|x| *x <= first.min(last) - 2) {
        4
    } else if last - first >= 2 {
        1
    } else if first - last >= 2 {
        2
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MelodySummary {
    pub density: u8,
    pub register: u8,
    pub rhythm: u8,
    pub contour: u8,
}

pub fn melody_summary(m: &Measure) -> MelodySummary {
    MelodySummary {
        density: density_bin(&m.melody, m.length_beats),
        register: register_bin(&m.melody),
        rhythm: rhythm_template(&m.melody, m.length_beats),
        contour: contour_bin(&m.melody),
    }
}

fn tempo_bin(bpm: f64) -> u16 {
    [70.0, 85.0, 100.0, 115.0, 130.0, 145.0, 160.0].iter().filter(|b| bpm >= **b).count() as u16
}

fn ext_class(exts: &std::collections::BTreeSet<Extension>) -> u16 {
    if exts.iter().any(|e| matches!(e, Extension::Eleven | Extension::Thirteen)) {
        3
    } else if exts.iter().any(|e| matches!(e, Extension::Six | Extension::Nine)) {
        2
    } else if exts.is_empty() {
        0
    } else {
        1
    }
}

fn default_key() -> KeyContext {
    KeyContext { tonic_pc: 0, mode: Mode::Major, span: crate::harmony::MeasureSpan { start: 0, end: usize::MAX } }
}

fn run_bounds(song: &Song, t: usize) -> (usize, usize) {
    let label = song.measures[t].section_label;
    let mut start = t;
    while start > 0 && song.measures[start - 1].section_label == label {
        start -= 1;
    }
    let mut end = t;
    while end + 1 < song.measures.len() && song.measures[end + 1].section_label == label {
        end += 1;
    }
    (start, end)
}

fn phrase_bounds(song: &Song, t: usize, section: (usize, usize)) -> (usize, usize) {
    let ms = &song.measures;
    let mut start = t;
    while start > section.0 && !ms[start].phrase_role.opens_phrase() && !ms[start - 1].phrase_role.is_cadential() {
        start -= 1;
    }
    let mut end = t;
    while end < section.1 && !ms[end].phrase_role.is_cadential() && !ms[end + 1].phrase_role.opens_phrase() {
        end += 1;
    }
    (start, end)
}

fn ratio(pos: usize, start: usize, end: usize) -> f64 {
    if end > start {
        (pos - start) as f64 / (end - start) as f64
    } else {
        0.0
    }
}

/// Section, phrase role, positional scalars and dynamics trend of measure `t`,
/// with the prompt vector appended.
pub fn structure_vector(song: &Song, t: usize, prompt: &PromptVector) -> [f64; COND_DIM] {
    let m = &song.measures[t];
    let mut z = [0.0; COND_DIM];
    z[m.section_label.index()] = 1.0;
    z[7 + m.phrase_role.index()] = 1.0;
    let section = run_bounds(song, t);
    let phrase = phrase_bounds(song, t, section);
    z[11] = (m.length_beats as f64 / song.meter.numerator.max(1) as f64).min(1.0);
    z[12] = ratio(t, section.0, section.1);
    z[13] = ratio(t, phrase.0, phrase.1);
    z[14 + m.dynamics_trend.index()] = 1.0;
    z[STRUCT_DIM..].copy_from_slice(&prompt.0);
    z
}

fn pad(offset: u16, target: bool) -> Token {
    Token { features: vec![(Feature::Kind, kind::PAD), (Feature::Offset, offset)], masked: true, target }
}

/// Builds the token tape around measure `t`. `styles[i]` is the known style of
/// measure `i`; only measures before `t` expose their style tokens.
pub fn encode_context(
    song: &Song,
    styles: &[Option<StyleVector>],
    t: usize,
    cfg: &PlannerConfig,
    prompt: &PromptVector,
) -> Result<Context, PlannerError> {
    if t >= song.measures.len() {
        return Err(PlannerError::IndexOutOfRange(t));
    }
    let p = cfg.past_window as i64;
    let mut tokens = Vec::with_capacity(Context::token_count(cfg.past_window, cfg.future_window));
    let key0 = song.key_at(t).copied().unwrap_or_else(default_key);
    let g = |k: u16, f: Feature, id: u16| Token { features: vec![(Feature::Kind, k), (Feature::Offset, 0), (f, id)], masked: false, target: false };
    tokens.push(g(kind::MODE, Feature::Mode, (key0.mode == Mode::Minor) as u16));
    tokens.push(g(kind::TEMPO, Feature::Tempo, tempo_bin(song.tempo_bpm)));
    tokens.push(g(kind::METER, Feature::Meter, song.meter.numerator.clamp(1, 8) as u16 - 1));
    for o in -p..=cfg.future_window as i64 {
        let idx = t as i64 + o;
        let off = (o + p + 1) as u16;
        let target = o == 0;
        if idx < 0 || idx >= song.measures.len() as i64 {
            tokens.extend((0..TOKENS_PER_MEASURE).map(|_| pad(off, target)));
            continue;
        }
        let i = idx as usize;
        let m = &song.measures[i];
        let base = |k: u16| vec![(Feature::Kind, k), (Feature::Offset, off)];
        let tok = |features: Vec<(Feature, u16)>| Token { features, masked: false, target };
        let mut f = base(kind::STRUCTURE);
        f.extend([
            (Feature::Section, m.section_label.index() as u16),
            (Feature::Role, m.phrase_role.index() as u16),
            (Feature::Trend, m.dynamics_trend.index() as u16),
        ]);
        tokens.push(tok(f));
        let key = song.key_at(i).copied().unwrap_or_else(default_key);
        for slot in 0..4usize {
            let beat = slot * m.length_beats as usize / 4;
            let mut f = base(kind::HARMONY);
            f.push((Feature::Beat, slot as u16));
            match m.chords.get(beat).filter(|c| !c.is_no_chord()) {
                Some(c) => {
                    let r = to_roman(c, &key);
                    f.extend([
                        (Feature::Degree, r.degree as u16),
                        (Feature::Chromatic, (r.chromatic_offset.clamp(-1, 1) + 1) as u16),
                        (Feature::Quality, r.quality as u16),
                        (Feature::BassDegree, r.bass_degree.unwrap_or(0) as u16),
                        (Feature::ExtClass, ext_class(&r.extensions)),
                    ]);
                }
                None => f.extend([(Feature::Degree, 0), (Feature::Chromatic, 1), (Feature::Quality, QualityClass::Other as u16)]),
            }
            tokens.push(tok(f));
        }
        let s = melody_summary(m);
        let mut f = base(kind::MELODY);
        f.extend([
            (Feature::Density, s.density as u16),
            (Feature::Register, s.register as u16),
            (Feature::Rhythm, s.rhythm as u16),
            (Feature::Contour, s.contour as u16),
        ]);
        tokens.push(tok(f));
        match styles.get(i).copied().flatten().filter(|_| o < 0) {
            Some(style) => {
                let mut f = base(kind::STYLE);
                f.extend(Axis::ALL.into_iter().map(|a| (Feature::style(a), style.get(a) as u16)));
                tokens.push(tok(f));
            }
            None => tokens.push(pad(off, target)),
        }
        let mut f = base(kind::LENGTH);
        f.push((Feature::Length, m.length_beats.min(6) as u16));
        tokens.push(tok(f));
    }
    Ok(Context { tokens, cond: structure_vector(song, t, prompt) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_song;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> PlannerConfig {
        PlannerConfig { past_window: 4, future_window: 1, ..PlannerConfig::tiny() }
    }

    #[test]
    fn first_measure_pads_past() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let song = random_song(&mut rng, 10);
        let styles = vec![None; song.measures.len()];
        let ctx = encode_context(&song, &styles, 0, &cfg(), &PromptVector::auto_only()).unwrap();
        assert_eq!(ctx.tokens.len(), Context::token_count(4, 1));
        let past = &ctx.tokens[GLOBAL_TOKENS..GLOBAL_TOKENS + 4 * TOKENS_PER_MEASURE];
        assert!(past.iter().all(|t| t.masked));
        assert!(encode_context(&song, &styles, song.measures.len(), &cfg(), &PromptVector::auto_only()).is_err());
    }

    #[test]
    fn deterministic_and_target_style_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let song = random_song(&mut rng, 12);
        let styles: Vec<Option<StyleVector>> = song.measures.iter().map(|_| StyleVector::all().nth(77)).collect();
        let t = song.measures.len() - 1;
        let a = encode_context(&song, &styles, t, &cfg(), &PromptVector::auto_only()).unwrap();
        let b = encode_context(&song, &styles, t, &cfg(), &PromptVector::auto_only()).unwrap();
        assert_eq!(a, b);
        for tok in a.tokens.iter().filter(|x| x.target) {
            let is_style = tok.features.iter().any(|f| f.0 == Feature::StyleDyn);
            assert!(!is_style);
        }
        assert!(a.cond.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn melody_bins() {
        let n = |o: i64, p: u8| NoteEvent::new(crate::song::Beats::from_ticks(o), crate::song::Beats::whole(1), p, 80);
        let quarters: Vec<NoteEvent> = (0..4).map(|i| n(i * 24, 60 + i as u8 * 2)).collect();
        assert_eq!(rhythm_template(&quarters, 4), 2);
        assert_eq!(rhythm_template(&[], 4), 15);
        assert_eq!(density_bin(&quarters, 4), 2);
        assert_eq!(contour_bin(&quarters), 1);
        assert_eq!(contour_bin(&[n(0, 60), n(24, 67), n(48, 60)]), 3);
        assert_eq!(contour_bin(&[n(0, 60), n(24, 55), n(48, 61)]), 4);
        assert_eq!(register_bin(&quarters), 2);
    }
}
