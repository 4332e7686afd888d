use serde::{Deserialize, Serialize};

use crate::harmony::{chord_tone_mask, diatonic_mask, ChordSymbol, KeyContext, PcSet};
use crate::song::NoteEvent;

use super::RetrieverConfig;

/// How the allowed pitch classes of a beat are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeatPolicy {
    /// Target chord tones only.
    Strict,
    /// Target chord tones plus the source chord's colors rebuilt on the target root.
    Colored,
    /// Source chord tones go to target chord tones, other notes to the scale.
    Gesture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReharmLimits {
    pub max_mean_shift: f64,
    pub max_register_drift: f64,
    pub min_chord_tone_ratio: f64,
}

impl ReharmLimits {
    pub fn from_config(cfg: &RetrieverConfig) -> Self {
        ReharmLimits {
            max_mean_shift: cfg.max_mean_shift,
            max_register_drift: cfg.max_register_drift,
            min_chord_tone_ratio: cfg.min_chord_tone_ratio,
        }
    }

    /// Limits used by forced selection.
    pub fn relaxed() -> Self {
        ReharmLimits { max_mean_shift: f64::INFINITY, max_register_drift: f64::INFINITY, min_chord_tone_ratio: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "value", rename_all = "snake_case")]
pub enum RejectReason {
    ExcessiveShift(f64),
    RegisterDrift(f64),
    LowChordToneRatio(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reharmonized {
    pub notes: Vec<NoteEvent>,
    pub mean_abs_shift: f64,
    pub chord_tone_ratio: f64,
    pub register_drift: f64,
    pub policies: Vec<BeatPolicy>,
}

/// Nearest pitch whose class is in `allowed`; ties resolve downward.
fn nearest(p: u8, allowed: PcSet) -> u8 {
    for d in 0..=12i32 {
        for x in [p as i32 - d, p as i32 + d] {
            if (0..=127).contains(&x) && allowed.contains((x % 12) as u8) {
                return x as u8;
            }
        }
    }
    p
}

fn allowed_set(policy: BeatPolicy, pc: u8, source: Option<&ChordSymbol>, target: &ChordSymbol, key: &KeyContext) -> PcSet {
    if target.is_no_chord() {
        return diatonic_mask(key);
    }
    let tones = chord_tone_mask(target);
    match policy {
        BeatPolicy::Strict => tones,
        BeatPolicy::Colored => {
            let mut s = tones;
            if let Some(src) = source.filter(|c| !c.is_no_chord()) {
                for e in &src.extensions {
                    s.insert((target.root_pc + e.interval()) % 12);
                }
            }
            s
        }
        BeatPolicy::Gesture => match source.filter(|c| !c.is_no_chord()) {
            Some(src) if !chord_tone_mask(src).contains(pc) => diatonic_mask(key),
            _ => tones,
        },
    }
}

/// Maps every onset of `pattern` to the nearest allowed pitch of its beat.
/// Onsets, durations and velocities are kept as they are.
pub fn reharmonize(
    pattern: &[NoteEvent],
    source_chords: &[ChordSymbol],
    target_chords: &[ChordSymbol],
    key: &KeyContext,
    policies: &[BeatPolicy],
    limits: &ReharmLimits,
) -> Result<Reharmonized, RejectReason> {
    let beats = target_chords.len().max(1);
    let mut notes = Vec::with_capacity(pattern.len());
    let (mut shift, mut chord_hits, mut chord_total) = (0.0, 0usize, 0usize);
    for n in pattern {
        let b = (n.onset.beat_index().max(0) as usize).min(beats - 1);
        let policy = policies.get(b).copied().unwrap_or(BeatPolicy::Strict);
        let Some(target) = target_chords.get(b) else {
            notes.push(n.clone());
            continue;
        };
        let allowed = allowed_set(policy, n.pitch % 12, source_chords.get(b), target, key);
        let p = nearest(n.pitch, allowed);
        shift += (p as f64 - n.pitch as f64).abs();
        if !target.is_no_chord() {
            chord_total += 1;
            chord_hits += chord_tone_mask(target).contains(p % 12) as usize;
        }
        notes.push(NoteEvent { pitch: p, ..*n });
    }
    let count = pattern.len().max(1) as f64;
    let mean_abs_shift = shift / count;
    let mean = |v: &mut dyn Iterator<Item = u8>| v.map(|p| p as f64).sum::<f64>() / count;
    let register_drift = (mean(&mut notes.iter().map(|n| n.pitch)) - mean(&mut pattern.iter().map(|n| n.pitch))).abs();
    let chord_tone_ratio = if chord_total == 0 { 1.0 } else { chord_hits as f64 / chord_total as f64 };
    if mean_abs_shift > limits.max_mean_shift {
        return Err(RejectReason::ExcessiveShift(mean_abs_shift));
    }
    if register_drift > limits.max_register_drift {
        return Err(RejectReason::RegisterDrift(register_drift));
    }
    if chord_tone_ratio < limits.min_chord_tone_ratio {
        return Err(RejectReason::LowChordToneRatio(chord_tone_ratio));
    }
    Ok(Reharmonized { notes, mean_abs_shift, chord_tone_ratio, register_drift, policies: policies.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmony::{MeasureSpan, Mode};
    use crate::song::Beats;
    use crate::testutil::{random_chord, random_notes};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key() -> KeyContext {
        KeyContext { tonic_pc: 0, mode: Mode::Major, span: MeasureSpan { start: 0, end: 1 } }
    }

    fn note(pitch: u8) -> NoteEvent {
        NoteEvent::new(Beats::ZERO, Beats::whole(1), pitch, 80)
    }

    fn run(pitches: &[u8], src: &str, tgt: &str, policy: BeatPolicy) -> Result<Reharmonized, RejectReason> {
        let notes: Vec<NoteEvent> = pitches.iter().map(|p| note(*p)).collect();
        reharmonize(&notes, &[src.parse().unwrap()], &[tgt.parse().unwrap()], &key(), &[policy], &ReharmLimits::relaxed())
    }

    #[test]
    fn identity_when_already_allowed() {
        let r = run(&[48, 60, 64, 67], "C:maj", "C:maj", BeatPolicy::Strict).unwrap();
        assert_eq!(r.notes.iter().map(|n| n.pitch).collect::<Vec<_>>(), vec![48, 60, 64, 67]);
        assert_eq!(r.mean_abs_shift, 0.0);
        assert_eq!(r.chord_tone_ratio, 1.0);
    }

    #[test]
    fn nearest_and_downward_ties() {
        assert_eq!(run(&[61], "C:maj", "C:maj", BeatPolicy::Strict).unwrap().notes[0].pitch, 60);
        assert_eq!(run(&[62], "C:maj", "C:maj", BeatPolicy::Strict).unwrap().notes[0].pitch, 60);
        assert_eq!(run(&[66], "C:maj", "C:maj", BeatPolicy::Strict).unwrap().notes[0].pitch, 67);
    }

    #[test]
    fn gesture_keeps_passing_tones_diatonic() {
        // D over C major is a passing tone: it stays diatonic instead of snapping to C.
        let r = run(&[62, 64], "C:maj", "F:maj", BeatPolicy::Gesture).unwrap();
        assert_eq!(r.notes[0].pitch, 62);
        assert_eq!(r.notes[1].pitch, 65);
        // The minor seventh of the source is rebuilt on D as C.
        assert_eq!(run(&[72], "A:min7", "D:min", BeatPolicy::Strict).unwrap().notes[0].pitch, 74);
        assert_eq!(run(&[72], "A:min7", "D:min", BeatPolicy::Colored).unwrap().notes[0].pitch, 72);
    }

    #[test]
    fn rejections() {
        let strict = ReharmLimits { max_mean_shift: 0.5, max_register_drift: 5.0, min_chord_tone_ratio: 0.5 };
        let notes = vec![note(61), note(66)];
        let r = reharmonize(&notes, &["C:maj".parse().unwrap()], &["C:maj".parse().unwrap()], &key(), &[BeatPolicy::Strict], &strict);
        assert!(matches!(r, Err(RejectReason::ExcessiveShift(_))));
        let low = ReharmLimits { min_chord_tone_ratio: 0.9, ..ReharmLimits::relaxed() };
        let r = reharmonize(&[note(62)], &["C:maj".parse().unwrap()], &["F:maj".parse().unwrap()], &key(), &[BeatPolicy::Gesture], &low);
        assert!(matches!(r, Err(RejectReason::LowChordToneRatio(_))));
    }

    proptest! {
        #[test]
        fn strict_beats_land_on_chord_tones_and_keep_rhythm(seed in 0u64..2000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let notes = random_notes(&mut rng, 4, 12);
            let tgt: Vec<ChordSymbol> = (0..4).map(|_| random_chord(&mut rng)).collect();
            let src: Vec<ChordSymbol> = (0..4).map(|_| random_chord(&mut rng)).collect();
            let r = reharmonize(&notes, &src, &tgt, &key(), &[BeatPolicy::Strict; 4], &ReharmLimits::relaxed()).unwrap();
            prop_assert_eq!(r.notes.len(), notes.len());
            for (a, b) in notes.iter().zip(&r.notes) {
                prop_assert_eq!((a.onset, a.duration, a.velocity), (b.onset, b.duration, b.velocity));
                let beat = (b.onset.beat_index() as usize).min(3);
                let chord = &tgt[beat];
                let allowed = if chord.is_no_chord() { diatonic_mask(&key()) } else { chord_tone_mask(chord) };
                prop_assert!(allowed.contains(b.pitch % 12));
                // Oracle: no allowed pitch is strictly closer, and ties went down.
                let d = (b.pitch as i32 - a.pitch as i32).abs();
                for x in 0..=127i32 {
                    if allowed.contains((x % 12) as u8) {
                        let dx = (x - a.pitch as i32).abs();
                        prop_assert!(dx > d || (dx == d && x >= b.pitch as i32));
                    }
                }
            }
        }
    }
}
