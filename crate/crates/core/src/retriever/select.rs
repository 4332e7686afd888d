use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::index::MeasureRecord;

use super::reharm::Reharmonized;
use super::{EnergyBreakdown, RetrieverConfig, SelectMode};

/// A reharmonized candidate with its energies.
#[derive(Debug, Clone)]
pub struct Scored<'a> {
    pub record: &'a MeasureRecord,
    pub reharm: Reharmonized,
    pub energy: EnergyBreakdown,
    pub deviates: bool,
    /// Active signature of the realized measure.
    pub signature: u64,
}

fn order(a: &Scored<'_>, b: &Scored<'_>) -> std::cmp::Ordering {
    a.energy
        .total
        .total_cmp(&b.energy.total)
        .then(a.energy.e_vl.total_cmp(&b.energy.e_vl))
        .then(a.record.id.cmp(&b.record.id))
}

/// Indices that survive the voice-leading gate and signature deduplication,
/// sorted by total energy.
pub fn gated(pool: &[Scored<'_>], cfg: &RetrieverConfig) -> Vec<usize> {
    let Some(min_vl) = pool.iter().map(|s| s.energy.e_vl).min_by(f64::total_cmp) else { return Vec::new() };
    let mut best: HashMap<u64, usize> = HashMap::new();
    for (i, s) in pool.iter().enumerate() {
        if s.energy.e_vl > min_vl + cfg.delta_vl {
            continue;
        }
        let e = best.entry(s.signature).or_insert(i);
        if order(s, &pool[*e]).is_lt() {
            *e = i;
        }
    }
    let mut kept: Vec<usize> = best.into_values().collect();
    kept.sort_by(|a, b| order(&pool[*a], &pool[*b]));
    kept
}

/// Picks one candidate: the minimum in map mode, otherwise a Boltzmann draw
/// over the `top_k` lowest energies at temperature `T`.
pub fn select<R: Rng>(pool: &[Scored<'_>], cfg: &RetrieverConfig, rng: &mut R) -> Option<usize> {
    let kept = gated(pool, cfg);
    let first = *kept.first()?;
    match cfg.mode {
        SelectMode::Map => Some(first),
        SelectMode::Sample => {
            let top = &kept[..kept.len().min(cfg.top_k)];
            let e0 = pool[first].energy.total;
            let w: Vec<f64> = top.iter().map(|i| (-(pool[*i].energy.total - e0) / cfg.temperature).exp()).collect();
            let dist = WeightedIndex::new(&w).ok()?;
            Some(top[dist.sample(rng)])
        }
    }
}
