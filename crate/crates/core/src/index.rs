//! Measure-level retrieval index, style inventories and pattern signatures.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::harmony::{normalize_key, ChordSymbol, Mode, QualityTag};
use crate::labeler::{ContinuousStyleFeatures, LabelFile, QuantileTable};
use crate::song::{NoteEvent, PhraseRole, SectionLabel, Song, StyleVector, TICKS_PER_BEAT};

const CELL_TICKS: i64 = TICKS_PER_BEAT / 4;
const MAGIC: &[u8; 4] = b"ACIX";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("corpus has no measures")]
    EmptyCorpus,
    #[error("labels do not match song {0}")]
    LabelMismatch(String),
    #[error("not an index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatternSignature {
    pub hash: u64,
    pub canonical: String,
}

impl PatternSignature {
    fn from_canonical(canonical: String) -> Self {
        PatternSignature { hash: fnv1a(canonical.as_bytes()), canonical }
    }
}

fn band(pitch: u8) -> usize {
    match pitch {
        0..=47 => 0,
        48..=72 => 1,
        _ => 2,
    }
}

fn grid_cells(pattern: &[NoteEvent], length_beats: u8) -> (Vec<[u8; 3]>, Vec<[bool; 3]>, Vec<u16>) {
    let n = length_beats as usize * 4;
    let mut onsets = vec![[0u8; 3]; n];
    let mut sustain = vec![[false; 3]; n];
    let mut pcs = vec![0u16; n];
    for note in pattern {
        let start = note.onset.ticks();
        let end = note.end().ticks();
        let b = band(note.pitch);
        if start >= 0 {
            let c = (start / CELL_TICKS) as usize;
            if c < n {
                onsets[c][b] = onsets[c][b].saturating_add(1);
                pcs[c] |= 1 << (note.pitch % 12);
            }
        }
        for (c, cell) in sustain.iter_mut().enumerate() {
            let t = c as i64 * CELL_TICKS;
            if start < t && end > t {
                cell[b] = true;
            }
        }
    }
    (onsets, sustain, pcs)
}

fn active_string(onsets: &[[u8; 3]], sustain: &[[bool; 3]]) -> String {
    let mut s = String::with_capacity(onsets.len() * 3);
    for (o, h) in onsets.iter().zip(sustain) {
        for b in 0..3 {
            let bucket = o[b].min(2);
            s.push((b'0' + bucket * 2 + h[b] as u8) as char);
        }
    }
    s
}

/// Pitch-free rhythm and texture skeleton: per sixteenth cell and register band,
/// an onset-count bucket and a sustain flag.
pub fn active_signature(pattern: &[NoteEvent], length_beats: u8) -> PatternSignature {
    let (onsets, sustain, _) = grid_cells(pattern, length_beats);
    PatternSignature::from_canonical(active_string(&onsets, &sustain))
}

/// The active skeleton plus the pitch-class set of every cell's onsets.
pub fn pitch_signature(pattern: &[NoteEvent], length_beats: u8) -> PatternSignature {
    let (onsets, sustain, pcs) = grid_cells(pattern, length_beats);
    let mut s = active_string(&onsets, &sustain);
    s.push('#');
    for (i, p) in pcs.iter().enumerate() {
        if i > 0 {
            s.push('.');
        }
        s.push_str(&format!("{p:x}"));
    }
    PatternSignature::from_canonical(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoleFlags {
    pub phrase_role: PhraseRole,
    pub song_start: bool,
    pub song_end: bool,
    pub pickup: bool,
    pub cadential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordId {
    pub song: u32,
    pub measure: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub id: RecordId,
    pub length_beats: u8,
    pub style: StyleVector,
    pub qual_seq: Vec<QualityTag>,
    pub role: RoleFlags,
    pub section: SectionLabel,
    pub mode: Mode,
    /// Accompaniment in the normalized key, measure-relative.
    pub pattern: Vec<NoteEvent>,
    pub chords: Vec<ChordSymbol>,
    pub first_onset_pitches: Vec<u8>,
    pub sustained_in: Vec<u8>,
    pub features: ContinuousStyleFeatures,
    pub active_sig: PatternSignature,
    pub pitch_sig: PatternSignature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongMeta {
    pub id: String,
    pub measures: usize,
}

/// Empirical style-vector counts per measure length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StyleInventory {
    counts: BTreeMap<u8, BTreeMap<StyleVector, usize>>,
}

impl StyleInventory {
    pub fn add(&mut self, length_beats: u8, style: StyleVector) {
        *self.counts.entry(length_beats).or_default().entry(style).or_default() += 1;
    }

    pub fn lengths(&self) -> impl Iterator<Item = u8> + '_ {
        self.counts.keys().copied()
    }

    pub fn counts(&self, length_beats: u8) -> Option<&BTreeMap<StyleVector, usize>> {
        self.counts.get(&length_beats)
    }

    pub fn count(&self, length_beats: u8, style: &StyleVector) -> usize {
        self.counts.get(&length_beats).and_then(|m| m.get(style)).copied().unwrap_or(0)
    }

    pub fn total(&self, length_beats: u8) -> usize {
        self.counts.get(&length_beats).map(|m| m.values().sum()).unwrap_or(0)
    }

    /// Counts merged over every length.
    pub fn pooled(&self) -> BTreeMap<StyleVector, usize> {
        let mut out = BTreeMap::new();
        for m in self.counts.values() {
            for (s, c) in m {
                *out.entry(*s).or_default() += c;
            }
        }
        out
    }

    /// Most frequent vector; ties go to the lexicographically smaller one.
    pub fn most_common(&self, length_beats: Option<u8>) -> Option<StyleVector> {
        let map = match length_beats {
            Some(l) => self.counts.get(&l)?.clone(),
            None => self.pooled(),
        };
        map.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(s, _)| *s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub songs: Vec<SongMeta>,
    pub records: Vec<MeasureRecord>,
    pub quantiles: QuantileTable,
    #[serde(skip)]
    by_key: HashMap<(u8, StyleVector), Vec<usize>>,
    #[serde(skip)]
    by_length: BTreeMap<u8, Vec<usize>>,
    #[serde(skip)]
    inventory: StyleInventory,
}

/// Which styles a query accepts.
#[derive(Debug, Clone, Copy)]
pub enum StyleFilter<'a> {
    Any,
    One(StyleVector),
    Set(&'a [StyleVector]),
}

impl StyleFilter<'_> {
    pub fn accepts(&self, s: &StyleVector) -> bool {
        match self {
            StyleFilter::Any => true,
            StyleFilter::One(x) => x == s,
            StyleFilter::Set(xs) => xs.contains(s),
        }
    }
}

/// Builds the index from key-normalized songs and their labels.
pub fn build_index(songs: &[Song], labels: &LabelFile) -> Result<CorpusIndex, IndexError> {
    let mut records = Vec::new();
    let mut metas = Vec::new();
    for (si, raw) in songs.iter().enumerate() {
        let song = normalize_key(raw);
        let lab = labels.get(&song.id).ok_or_else(|| IndexError::LabelMismatch(song.id.clone()))?;
        if lab.measures.len() != song.measures.len() {
            return Err(IndexError::LabelMismatch(song.id.clone()));
        }
        metas.push(SongMeta { id: song.id.clone(), measures: song.measures.len() });
        let last = song.measures.len().saturating_sub(1);
        for (mi, m) in song.measures.iter().enumerate() {
            let sustained_in = match mi.checked_sub(1).map(|p| &song.measures[p]) {
                Some(prev) => {
                    let len = prev.length().ticks();
                    let mut v: Vec<u8> = prev.accompaniment.iter().filter(|n| n.end().ticks() > len).map(|n| n.pitch).collect();
                    v.sort_unstable();
                    v.dedup();
                    v
                }
                None => Vec::new(),
            };
            let first_onset_pitches = match m.accompaniment.iter().map(|n| n.onset).min() {
                Some(t) => {
                    let mut v: Vec<u8> = m.accompaniment.iter().filter(|n| n.onset == t).map(|n| n.pitch).collect();
                    v.sort_unstable();
                    v
                }
                None => Vec::new(),
            };
            let mode = song.key_at(m.index).map(|k| k.mode).unwrap_or(Mode::Major);
            records.push(MeasureRecord {
                id: RecordId { song: si as u32, measure: mi as u32 },
                length_beats: m.length_beats,
                style: lab.measures[mi].style,
                qual_seq: m.chords.iter().map(|c| c.tag()).collect(),
                role: RoleFlags {
                    phrase_role: m.phrase_role,
                    song_start: mi == 0,
                    song_end: mi == last,
                    pickup: m.phrase_role.opens_phrase() && m.length_beats < song.meter.numerator,
                    cadential: m.phrase_role.is_cadential(),
                },
                section: m.section_label,
                mode,
                pattern: m.accompaniment.clone(),
                chords: m.chords.clone(),
                first_onset_pitches,
                sustained_in,
                features: lab.measures[mi].features.clone(),
                active_sig: active_signature(&m.accompaniment, m.length_beats),
                pitch_sig: pitch_signature(&m.accompaniment, m.length_beats),
            });
        }
    }
    if records.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    let mut index = CorpusIndex {
        songs: metas,
        records,
        quantiles: labels.quantiles.clone(),
        by_key: HashMap::new(),
        by_length: BTreeMap::new(),
        inventory: StyleInventory::default(),
    };
    index.rebuild_maps();
    Ok(index)
}

impl CorpusIndex {
    fn rebuild_maps(&mut self) {
        self.by_key.clear();
        self.by_length.clear();
        self.inventory = StyleInventory::default();
        for (i, r) in self.records.iter().enumerate() {
            self.by_key.entry((r.length_beats, r.style)).or_default().push(i);
            self.by_length.entry(r.length_beats).or_default().push(i);
            self.inventory.add(r.length_beats, r.style);
        }
    }

    pub fn inventory(&self) -> &StyleInventory {
        &self.inventory
    }

    pub fn record(&self, id: RecordId) -> Option<&MeasureRecord> {
        let offset: usize = self.songs[..id.song as usize].iter().map(|s| s.measures).sum();
        self.records.get(offset + id.measure as usize).filter(|r| r.id == id)
    }

    pub fn lengths(&self) -> Vec<u8> {
        self.by_length.keys().copied().collect()
    }

    /// All records of a length that pass every predicate, in record order.
    pub fn query(
        &self,
        length_beats: u8,
        style: StyleFilter<'_>,
        qual_pred: impl Fn(&[QualityTag]) -> bool,
        role_pred: impl Fn(&RoleFlags) -> bool,
    ) -> Vec<&MeasureRecord> {
        let mut ids: Vec<usize> = match style {
            StyleFilter::Any => self.by_length.get(&length_beats).cloned().unwrap_or_default(),
            StyleFilter::One(s) => self.by_key.get(&(length_beats, s)).cloned().unwrap_or_default(),
            StyleFilter::Set(xs) => {
                let mut v: Vec<usize> = xs.iter().filter_map(|s| self.by_key.get(&(length_beats, *s))).flatten().copied().collect();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        ids.retain(|i| {
            let r = &self.records[*i];
            qual_pred(&r.qual_seq) && role_pred(&r.role)
        });
        ids.into_iter().map(|i| &self.records[i]).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = serde_json::to_vec(self).expect("index serializes");
        let mut out = Vec::with_capacity(body.len() + 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(IndexError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(IndexError::Format(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| IndexError::Format("truncated".into()))?;
        let mut index: CorpusIndex = serde_json::from_slice(body).map_err(|e| IndexError::Format(e.to_string()))?;
        index.rebuild_maps();
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn song_records(&self, song: u32) -> &[MeasureRecord] {
        let start: usize = self.songs[..song as usize].iter().map(|s| s.measures).sum();
        &self.records[start..start + self.songs[song as usize].measures]
    }

    pub fn stats(&self) -> IndexStats {
        let mut per_length = BTreeMap::new();
        for l in self.inventory.lengths() {
            per_length.insert(l, (self.inventory.total(l), self.inventory.counts(l).map_or(0, |m| m.len())));
        }
        let per_song: Vec<Diversity> = (0..self.songs.len() as u32)
            .filter(|s| self.songs[*s as usize].measures > 0)
            .map(|s| pattern_diversity(&self.song_records(s).iter().map(|r| &r.active_sig.canonical).collect::<Vec<_>>()))
            .collect();
        let n = per_song.len().max(1) as f64;
        IndexStats {
            songs: self.songs.len(),
            measures: self.records.len(),
            per_length,
            distinct_styles: self.inventory.pooled().len(),
            mean_unique_ratio: per_song.iter().map(|d| d.unique_ratio).sum::<f64>() / n,
            mean_dominant_ratio: per_song.iter().map(|d| d.dominant_ratio).sum::<f64>() / n,
            mean_repeat_ratio: per_song.iter().map(|d| d.repeat_ratio).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub unique_ratio: f64,
    pub dominant_ratio: f64,
    pub repeat_ratio: f64,
}

/// Distinct share, largest-cluster share and consecutive-repeat share of a sequence.
pub fn pattern_diversity<T: Ord>(seq: &[T]) -> Diversity {
    let n = seq.len();
    if n == 0 {
        return Diversity { unique_ratio: 0.0, dominant_ratio: 0.0, repeat_ratio: 0.0 };
    }
    let mut clusters: BTreeMap<&T, usize> = BTreeMap::new();
    for s in seq {
        *clusters.entry(s).or_default() += 1;
    }
    let repeats = seq.windows(2).filter(|w| w[0] == w[1]).count();
    Diversity {
        unique_ratio: clusters.len() as f64 / n as f64,
        dominant_ratio: *clusters.values().max().unwrap() as f64 / n as f64,
        repeat_ratio: if n > 1 { repeats as f64 / (n - 1) as f64 } else { 0.0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub songs: usize,
    pub measures: usize,
    /// length in beats -> (measures, distinct style vectors)
    pub per_length: BTreeMap<u8, (usize, usize)>,
    pub distinct_styles: usize,
    pub mean_unique_ratio: f64,
    pub mean_dominant_ratio: f64,
    pub mean_repeat_ratio: f64,
}

impl std::fmt::Display for IndexStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "songs              {}", self.songs)?;
        writeln!(f, "measures           {}", self.measures)?;
        writeln!(f, "style vectors      {}", self.distinct_styles)?;
        for (l, (m, s)) in &self.per_length {
            writeln!(f, "  {l} beats          {m} measures, {s} vectors")?;
        }
        writeln!(f, "unique ratio       {:.4}", self.mean_unique_ratio)?;
        writeln!(f, "dominant cluster   {:.4}", self.mean_dominant_ratio)?;
        write!(f, "repeat ratio       {:.6}", self.mean_repeat_ratio)
    }
}
