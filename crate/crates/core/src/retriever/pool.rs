use serde::{Deserialize, Serialize};

use crate::harmony::{quality_match, QualityTag, RelaxStage};
use crate::index::{CorpusIndex, MeasureRecord, RoleFlags, StyleFilter};
use crate::song::{PhraseRole, StyleVector};

use super::energy::style_distance;
use super::RetrieverConfig;

pub const STAGES: usize = 7;

/// What the retriever looks for at one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub index: usize,
    pub length_beats: u8,
    pub style: StyleVector,
    pub qual_seq: Vec<QualityTag>,
    pub phrase_role: PhraseRole,
    pub song_start: bool,
    pub song_end: bool,
    pub pickup: bool,
    /// Neither the first nor the last measure of its section run.
    pub section_interior: bool,
    /// Planned styles of the previous and next measures.
    pub neighbor_styles: Vec<StyleVector>,
}

impl Target {
    pub fn is_boundary(&self) -> bool {
        self.song_start || self.song_end
    }

    /// Mid-phrase and away from the song edges.
    pub fn is_interior(&self) -> bool {
        self.phrase_role == PhraseRole::Mid && !self.is_boundary()
    }
}

/// Beat 1 and, in even lengths, the middle beat are strong.
pub fn is_weak_beat(beat: usize, length_beats: u8) -> bool {
    let l = length_beats as usize;
    beat != 0 && !(l % 2 == 0 && beat == l / 2)
}

/// Quality matching strictness on `beat` at ladder stage `stage`. Stages past
/// the quality-constrained ones reuse the loosest constrained rule for scoring.
pub fn beat_stage(stage: u8, beat: usize, t: &Target) -> RelaxStage {
    let wild = stage >= 1 && t.is_interior() && is_weak_beat(beat, t.length_beats);
    if stage == 0 {
        RelaxStage::Strict
    } else if wild {
        RelaxStage::Wildcard
    } else if stage == 1 {
        RelaxStage::Strict
    } else if stage >= 3 && t.is_interior() && t.section_interior {
        RelaxStage::CrossFamily
    } else {
        RelaxStage::Family
    }
}

pub fn role_ok(t: &Target, r: &RoleFlags, stage: u8) -> bool {
    if stage == 0 && r.phrase_role != t.phrase_role {
        return false;
    }
    if t.song_start && !(r.phrase_role.opens_phrase() && r.pickup == t.pickup) {
        return false;
    }
    if t.song_end && !r.cadential {
        return false;
    }
    true
}

fn qual_ok(t: &Target, q: &[QualityTag], stage: u8) -> bool {
    stage >= 4
        || (q.len() == t.qual_seq.len()
            && t.qual_seq.iter().zip(q).enumerate().all(|(b, (x, y))| quality_match(x, y, beat_stage(stage, b, t)).is_acceptable()))
}

/// The full predicate of one ladder stage.
pub fn stage_accepts(t: &Target, r: &MeasureRecord, stage: u8, cfg: &RetrieverConfig) -> bool {
    if r.length_beats != t.length_beats {
        return false;
    }
    let style = match stage {
        0..=4 => r.style == t.style,
        5 => style_distance(&t.style, &r.style, &cfg.style_weights) <= 1.0,
        _ => style_distance(&t.style, &r.style, &cfg.style_weights) <= 1.0 || t.neighbor_styles.contains(&r.style),
    };
    style && qual_ok(t, &r.qual_seq, stage) && role_ok(t, &r.role, stage)
}

#[derive(Debug, Clone)]
pub struct CandidatePool<'a> {
    pub stage: u8,
    pub records: Vec<&'a MeasureRecord>,
    /// Pool size at every stage visited, starting from 0.
    pub sizes: Vec<usize>,
}

impl CandidatePool<'_> {
    pub fn strict_size(&self) -> usize {
        self.sizes[0]
    }
}

fn styles_for_stage(index: &CorpusIndex, t: &Target, stage: u8, cfg: &RetrieverConfig) -> Vec<StyleVector> {
    let mut v: Vec<StyleVector> = index
        .inventory()
        .counts(t.length_beats)
        .map(|m| m.keys().filter(|s| style_distance(&t.style, s, &cfg.style_weights) <= 1.0).copied().collect())
        .unwrap_or_default();
    if stage >= 6 {
        v.extend(t.neighbor_styles.iter().copied());
        v.sort_unstable();
        v.dedup();
    }
    v
}

/// Walks the relaxation ladder and stops at the first stage whose pool reaches
/// `min_pool`. When none does, the widest nonempty stage is used.
pub fn build_candidate_pool<'a>(index: &'a CorpusIndex, t: &Target, cfg: &RetrieverConfig) -> CandidatePool<'a> {
    let mut sizes = Vec::with_capacity(STAGES);
    let mut widest: Option<(u8, Vec<&'a MeasureRecord>)> = None;
    for stage in 0..STAGES as u8 {
        let styles;
        let filter = if stage <= 4 {
            StyleFilter::One(t.style)
        } else {
            styles = styles_for_stage(index, t, stage, cfg);
            StyleFilter::Set(&styles)
        };
        let recs = index.query(t.length_beats, filter, |q| qual_ok(t, q, stage), |r| role_ok(t, r, stage));
        sizes.push(recs.len());
        if recs.len() >= cfg.min_pool {
            return CandidatePool { stage, records: recs, sizes };
        }
        if !recs.is_empty() && widest.as_ref().map_or(true, |w| recs.len() > w.1.len()) {
            widest = Some((stage, recs));
        }
    }
    match widest {
        Some((stage, records)) => CandidatePool { stage, records, sizes },
        None => CandidatePool { stage: STAGES as u8 - 1, records: Vec::new(), sizes },
    }
}
