//! Evaluation metrics over generated arrangements and style plans.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::index::Diversity;
use crate::ingest::Arrangement;
use crate::labeler::{median, quantile_sorted};
use crate::song::{SectionLabel, StyleVector, TICKS_PER_BEAT};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("sequence of length {0} is too short")]
    TooShort(usize),
    #[error("runs differ in length")]
    LengthMismatch,
    #[error("need at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("need at least 2 songs, got {0}")]
    TooFewSongs(usize),
    #[error("arrangement has no measures")]
    Empty,
}

/// Unique, dominant-cluster and consecutive-repeat ratios of a signature sequence.
pub fn pattern_diversity<T: Ord>(signatures: &[T]) -> Result<Diversity, MetricsError> {
    if signatures.len() < 2 {
        return Err(MetricsError::TooShort(signatures.len()));
    }
    Ok(crate::index::pattern_diversity(signatures))
}

fn cluster_sizes<T: Ord>(items: impl IntoIterator<Item = T>) -> Vec<usize> {
    let mut m: BTreeMap<T, usize> = BTreeMap::new();
    for x in items {
        *m.entry(x).or_default() += 1;
    }
    let mut v: Vec<usize> = m.into_values().collect();
    v.sort_unstable_by(|a, b| b.cmp(a));
    v
}

/// Shannon entropy in bits of a cluster-size distribution.
pub fn entropy_bits(sizes: &[usize]) -> f64 {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return 0.0;
    }
    sizes
        .iter()
        .filter(|c| **c > 0)
        .map(|c| {
            let p = *c as f64 / n as f64;
            -p * p.log2()
        })
        .fold(0.0, |a, x| a + x)
}

/// Entropy divided by its maximum; a single cluster counts as 1.0.
pub fn normalized_entropy(sizes: &[usize]) -> f64 {
    let k = sizes.iter().filter(|c| **c > 0).count();
    if k <= 1 {
        return 1.0;
    }
    (entropy_bits(sizes) / (k as f64).log2()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionRow {
    pub section: SectionLabel,
    pub measures: usize,
    pub normalized_entropy: f64,
    /// Set when the section used one signature only, so entropy is defined as 1.0.
    pub single_cluster: bool,
    pub top3_coverage: f64,
    pub dominant_ratio: f64,
    pub strict_miss_count: usize,
    pub median_strict_pool: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub unique_ratio: f64,
    pub dominant_cluster_ratio: f64,
    pub repeat_ratio: f64,
    pub sections: Vec<SectionRow>,
}

/// Per-section cluster statistics, grouped by section label in label order.
/// `strict_pools` holds the strict pool size of every measure.
pub fn section_diversity<T: Ord + Clone>(signatures: &[T], sections: &[SectionLabel], strict_pools: &[usize]) -> Result<Vec<SectionRow>, MetricsError> {
    if signatures.len() != sections.len() || strict_pools.len() != sections.len() {
        return Err(MetricsError::LengthMismatch);
    }
    let mut rows = Vec::new();
    for label in SectionLabel::ALL {
        let idx: Vec<usize> = (0..sections.len()).filter(|i| sections[*i] == label).collect();
        if idx.is_empty() {
            continue;
        }
        let n = idx.len() as f64;
        let sizes = cluster_sizes(idx.iter().map(|i| signatures[*i].clone()));
        let mut pools: Vec<f64> = idx.iter().map(|i| strict_pools[*i] as f64).collect();
        rows.push(SectionRow {
            section: label,
            measures: idx.len(),
            normalized_entropy: normalized_entropy(&sizes),
            single_cluster: sizes.len() == 1,
            top3_coverage: sizes.iter().take(3).sum::<usize>() as f64 / n,
            dominant_ratio: sizes[0] as f64 / n,
            strict_miss_count: idx.iter().filter(|i| strict_pools[**i] == 0).count(),
            median_strict_pool: median(&mut pools),
        });
    }
    Ok(rows)
}

pub fn diversity_report<T: Ord + Clone>(signatures: &[T], sections: &[SectionLabel], strict_pools: &[usize]) -> Result<DiversityReport, MetricsError> {
    let d = pattern_diversity(signatures)?;
    Ok(DiversityReport {
        unique_ratio: d.unique_ratio,
        dominant_cluster_ratio: d.dominant_ratio,
        repeat_ratio: d.repeat_ratio,
        sections: section_diversity(signatures, sections, strict_pools)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleSpaceReport {
    pub transition_distance: f64,
    pub boundary_contrast: f64,
    pub axis_entropy: f64,
    pub vector_entropy: f64,
    pub section_mode_ratio: f64,
    pub axis_consistency: f64,
    pub vector_consistency: f64,
}

impl StyleSpaceReport {
    pub const FIELDS: [&'static str; 7] = [
        "transition_distance",
        "boundary_contrast",
        "axis_entropy",
        "vector_entropy",
        "section_mode_ratio",
        "axis_consistency",
        "vector_consistency",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.transition_distance,
            self.boundary_contrast,
            self.axis_entropy,
            self.vector_entropy,
            self.section_mode_ratio,
            self.axis_consistency,
            self.vector_consistency,
        ]
    }
}

/// Fraction of the six slots that differ.
pub fn normalized_hamming(a: &StyleVector, b: &StyleVector) -> f64 {
    a.hamming(b) as f64 / 6.0
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn modal_share<T: Ord>(items: impl IntoIterator<Item = T>) -> f64 {
    let sizes = cluster_sizes(items);
    let n: usize = sizes.iter().sum();
    sizes.first().map_or(1.0, |m| *m as f64 / n as f64)
}

/// Style motion and within-section coherence of a plan.
///
/// The section mode ratio is taken over contiguous section runs; entropies and
/// consistencies over all measures sharing a section label.
pub fn style_space_metrics(plan: &[StyleVector], sections: &[SectionLabel]) -> Result<StyleSpaceReport, MetricsError> {
    if plan.len() < 2 {
        return Err(MetricsError::TooShort(plan.len()));
    }
    if sections.len() != plan.len() {
        return Err(MetricsError::LengthMismatch);
    }
    let mut all = Vec::new();
    let mut across = Vec::new();
    let mut within = Vec::new();
    for i in 1..plan.len() {
        let d = normalized_hamming(&plan[i - 1], &plan[i]);
        all.push(d);
        if sections[i] == sections[i - 1] {
            within.push(d);
        } else {
            across.push(d);
        }
    }
    let mut runs: Vec<Vec<StyleVector>> = Vec::new();
    for i in 0..plan.len() {
        if i == 0 || sections[i] != sections[i - 1] {
            runs.push(Vec::new());
        }
        runs.last_mut().expect("pushed").push(plan[i]);
    }
    let mut groups: BTreeMap<SectionLabel, Vec<StyleVector>> = BTreeMap::new();
    for (s, v) in sections.iter().zip(plan) {
        groups.entry(*s).or_default().push(*v);
    }
    let axis_rows = |g: &Vec<StyleVector>, f: &dyn Fn(Vec<usize>) -> f64| -> f64 {
        mean(&(0..6).map(|a| f(cluster_sizes(g.iter().map(|v| v.slots()[a])))).collect::<Vec<_>>())
    };
    let groups: Vec<&Vec<StyleVector>> = groups.values().collect();
    Ok(StyleSpaceReport {
        transition_distance: mean(&all),
        boundary_contrast: mean(&across) - mean(&within),
        axis_entropy: mean(&groups.iter().map(|g| axis_rows(g, &|s| entropy_bits(&s))).collect::<Vec<_>>()),
        vector_entropy: mean(&groups.iter().map(|g| entropy_bits(&cluster_sizes(g.iter()))).collect::<Vec<_>>()),
        section_mode_ratio: mean(&runs.iter().map(|r| modal_share(r.iter())).collect::<Vec<_>>()),
        axis_consistency: mean(
            &groups.iter().map(|g| axis_rows(g, &|s| s[0] as f64 / s.iter().sum::<usize>() as f64)).collect::<Vec<_>>(),
        ),
        vector_consistency: mean(&groups.iter().map(|g| modal_share(g.iter())).collect::<Vec<_>>()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Isolation {
    pub all_match_ratio: f64,
    pub pairwise_match_mean: f64,
    pub union_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolationReport {
    pub active: Isolation,
    pub pitch: Isolation,
}

/// Agreement between runs over the same measures.
pub fn isolation<T: Ord>(runs: &[Vec<T>]) -> Result<Isolation, MetricsError> {
    if runs.len() < 2 {
        return Err(MetricsError::TooFewRuns(runs.len()));
    }
    let n = runs[0].len();
    if runs.iter().any(|r| r.len() != n) {
        return Err(MetricsError::LengthMismatch);
    }
    if n == 0 {
        return Err(MetricsError::TooShort(0));
    }
    let all = (0..n).filter(|i| runs.iter().all(|r| r[*i] == runs[0][*i])).count();
    let mut pairs = Vec::new();
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            pairs.push((0..n).filter(|i| runs[a][*i] == runs[b][*i]).count() as f64 / n as f64);
        }
    }
    let union: BTreeSet<&T> = runs.iter().flatten().collect();
    Ok(Isolation { all_match_ratio: all as f64 / n as f64, pairwise_match_mean: mean(&pairs), union_size: union.len() })
}

pub fn isolation_metrics<A: Ord, P: Ord>(active: &[Vec<A>], pitch: &[Vec<P>]) -> Result<IsolationReport, MetricsError> {
    Ok(IsolationReport { active: isolation(active)?, pitch: isolation(pitch)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizedFeatures {
    pub starts_per_measure: f64,
    pub velocity_median: f64,
    pub staccato_ratio: f64,
    /// P95 - P5 of all pitches.
    pub register_span: f64,
}

/// Continuous features of rendered notes, pooled over the arrangement.
pub fn realized_features(arr: &Arrangement) -> Result<RealizedFeatures, MetricsError> {
    if arr.measures.is_empty() {
        return Err(MetricsError::Empty);
    }
    let notes: Vec<_> = arr.measures.iter().flat_map(|m| m.notes.iter()).collect();
    let n = notes.len().max(1) as f64;
    let mut vel: Vec<f64> = notes.iter().map(|x| x.velocity as f64).collect();
    let mut pitches: Vec<f64> = notes.iter().map(|x| x.pitch as f64).collect();
    pitches.sort_by(f64::total_cmp);
    Ok(RealizedFeatures {
        starts_per_measure: notes.len() as f64 / arr.measures.len() as f64,
        velocity_median: median(&mut vel),
        staccato_ratio: notes.iter().filter(|x| x.duration.ticks() * 4 <= TICKS_PER_BEAT).count() as f64 / n,
        register_span: quantile_sorted(&pitches, 0.95) - quantile_sorted(&pitches, 0.05),
    })
}

/// Percentile bootstrap interval of the mean. Each resample draws `n` indices
/// with `gen_range(0..n)` from a ChaCha8 stream seeded with `seed`.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64), MetricsError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricsError::TooFewSongs(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level.clamp(0.0, 1.0)) / 2.0;
    Ok((quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail)))
}
