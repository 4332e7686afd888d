//! Keyword prompts: per-axis allowed, preferred and excluded label sets, their
//! merge, the soft prompt vector and the feasible style set.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::index::StyleInventory;
use crate::song::{Axis, StyleVector};

pub const PROMPT_DIM: usize = 29;

/// Order in which axis constraints are dropped when no inventory vector satisfies a prompt.
pub const RELAX_ORDER: [Axis; 6] = [Axis::Texture, Axis::Register, Axis::Tension, Axis::Rhythm, Axis::Art, Axis::Dyn];

const REGISTRY_JSON: &str = include_str!("../assets/keywords.json");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown keyword {0:?}")]
    UnknownKeyword(String),
    #[error("bad registry: {0}")]
    Registry(String),
}

/// Constraint sets of one axis. `allowed == None` means unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AxisSets {
    pub allowed: Option<BTreeSet<u8>>,
    pub preferred: BTreeSet<u8>,
    pub excluded: BTreeSet<u8>,
}

impl AxisSets {
    pub fn is_unconstrained(&self) -> bool {
        self.allowed.is_none() && self.preferred.is_empty() && self.excluded.is_empty()
    }

    pub fn permits(&self, label: u8) -> bool {
        !self.excluded.contains(&label) && self.allowed.as_ref().map_or(true, |a| a.contains(&label))
    }

    /// Whether any label is ruled out.
    pub fn restricts(&self) -> bool {
        self.allowed.is_some() || !self.excluded.is_empty()
    }

    fn prune(&mut self) {
        let (allowed, excluded) = (&self.allowed, &self.excluded);
        self.preferred.retain(|p| !excluded.contains(p) && allowed.as_ref().map_or(true, |a| a.contains(p)));
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordRule {
    pub name: String,
    pub axes: [AxisSets; 6],
}

#[derive(Deserialize)]
struct RawAxis {
    allowed: Option<Vec<String>>,
    #[serde(default)]
    preferred: Vec<String>,
    #[serde(default)]
    excluded: Vec<String>,
}

#[derive(Deserialize)]
struct RawRule {
    name: String,
    axes: BTreeMap<String, RawAxis>,
}

fn label_set(axis: Axis, names: &[String]) -> Result<BTreeSet<u8>, PromptError> {
    names
        .iter()
        .map(|n| axis.label_index(n).ok_or_else(|| PromptError::Registry(format!("{} has no label {n}", axis.name()))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    rules: BTreeMap<String, KeywordRule>,
}

impl Registry {
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let raw: Vec<RawRule> = serde_json::from_str(text).map_err(|e| PromptError::Registry(e.to_string()))?;
        let mut rules = BTreeMap::new();
        for r in raw {
            let mut axes: [AxisSets; 6] = Default::default();
            for (name, a) in &r.axes {
                let axis = Axis::from_name(name).ok_or_else(|| PromptError::Registry(format!("unknown axis {name}")))?;
                let sets = &mut axes[axis.index()];
                sets.allowed = a.allowed.as_ref().map(|v| label_set(axis, v)).transpose()?;
                sets.preferred = label_set(axis, &a.preferred)?;
                sets.excluded = label_set(axis, &a.excluded)?;
                if sets.preferred.iter().any(|p| sets.excluded.contains(p) || !sets.allowed.as_ref().map_or(true, |al| al.contains(p))) {
                    return Err(PromptError::Registry(format!("{}: preferred labels must be allowed and not excluded", r.name)));
                }
            }
            rules.insert(r.name.clone(), KeywordRule { name: r.name, axes });
        }
        Ok(Registry { rules })
    }

    /// The bundled fifteen-keyword registry.
    pub fn builtin() -> Self {
        Self::from_json(REGISTRY_JSON).expect("bundled registry is valid")
    }

    pub fn get(&self, name: &str) -> Option<&KeywordRule> {
        self.rules.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn merge<S: AsRef<str>>(&self, names: &[S]) -> Result<PromptConstraints, PromptError> {
        let mut rules = Vec::new();
        for n in names {
            rules.push(self.get(n.as_ref()).ok_or_else(|| PromptError::UnknownKeyword(n.as_ref().to_string()))?);
        }
        Ok(merge_rules(&rules))
    }
}

/// Merged constraints of a keyword set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptConstraints {
    pub axes: [AxisSets; 6],
}

fn merge_rules(rules: &[&KeywordRule]) -> PromptConstraints {
    let mut out = PromptConstraints::default();
    for rule in rules {
        for (dst, src) in out.axes.iter_mut().zip(&rule.axes) {
            if let Some(a) = &src.allowed {
                dst.allowed = Some(match dst.allowed.take() {
                    Some(cur) => cur.intersection(a).copied().collect(),
                    None => a.clone(),
                });
            }
            dst.preferred.extend(&src.preferred);
            dst.excluded.extend(&src.excluded);
        }
    }
    for a in out.axes.iter_mut() {
        a.prune();
    }
    out
}

impl PromptConstraints {
    pub fn axis(&self, axis: Axis) -> &AxisSets {
        &self.axes[axis.index()]
    }

    pub fn is_unconstrained(&self) -> bool {
        self.axes.iter().all(|a| a.is_unconstrained())
    }

    /// Axes whose allowed set became empty in the merge.
    pub fn over_specified(&self) -> Vec<Axis> {
        Axis::ALL.into_iter().filter(|a| self.axis(*a).allowed.as_ref().is_some_and(|s| s.is_empty())).collect()
    }

    pub fn permits(&self, s: &StyleVector) -> bool {
        Axis::ALL.into_iter().all(|a| self.axis(a).permits(s.get(a)))
    }

    /// Labels a restricted axis may take; None when the axis is unrestricted.
    pub fn permitted(&self, axis: Axis) -> Option<Vec<u8>> {
        let sets = self.axis(axis);
        sets.restricts().then(|| (0..axis.size() as u8).filter(|l| sets.permits(*l)).collect())
    }

    pub fn without_axis(&self, axis: Axis) -> Self {
        let mut c = self.clone();
        c.axes[axis.index()] = AxisSets::default();
        c
    }

    /// Union of two constraint sets under the merge rules.
    pub fn combine(&self, other: &PromptConstraints) -> Self {
        let a = KeywordRule { name: String::new(), axes: self.axes.clone() };
        let b = KeywordRule { name: String::new(), axes: other.axes.clone() };
        merge_rules(&[&a, &b])
    }
}

/// Weight vector over each axis's labels plus AUTO, normalized per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptVector(pub [f64; PROMPT_DIM]);

impl PromptVector {
    pub fn offset(axis: Axis) -> usize {
        Axis::ALL[..axis.index()].iter().map(|a| a.size() + 1).sum()
    }

    pub fn block(&self, axis: Axis) -> &[f64] {
        let o = Self::offset(axis);
        &self.0[o..o + axis.size() + 1]
    }

    pub fn auto_only() -> Self {
        prompt_vector(&PromptConstraints::default())
    }
}

pub fn prompt_vector(c: &PromptConstraints) -> PromptVector {
    let mut v = [0.0; PROMPT_DIM];
    for axis in Axis::ALL {
        let sets = c.axis(axis);
        let o = PromptVector::offset(axis);
        let n = axis.size();
        for y in 0..n as u8 {
            let w = if sets.excluded.contains(&y) {
                0.0
            } else if sets.preferred.contains(&y) {
                1.0
            } else if sets.allowed.as_ref().is_some_and(|a| a.contains(&y)) {
                0.5
            } else {
                0.0
            };
            v[o + y as usize] = w;
        }
        let sum: f64 = v[o..o + n].iter().sum();
        if sum == 0.0 {
            v[o + n] = 1.0;
        } else {
            for w in &mut v[o..o + n] {
                *w /= sum;
            }
        }
    }
    PromptVector(v)
}

/// Inventory vectors of length `length_beats` that satisfy every constraint, in vector order.
pub fn constraint_set(c: &PromptConstraints, inv: &StyleInventory, length_beats: u8) -> Vec<StyleVector> {
    inv.counts(length_beats).map(|m| m.keys().filter(|s| c.permits(s)).copied().collect()).unwrap_or_default()
}

/// The feasible set after dropping axis constraints in relaxation order until
/// one vector survives. Returns the set and the axes that were dropped.
pub fn relaxed_constraint_set(c: &PromptConstraints, inv: &StyleInventory, length_beats: u8) -> (Vec<StyleVector>, Vec<Axis>) {
    let mut cur = c.clone();
    let mut dropped = Vec::new();
    let mut set = constraint_set(&cur, inv, length_beats);
    for axis in RELAX_ORDER {
        if !set.is_empty() {
            break;
        }
        if cur.axis(axis).restricts() {
            cur = cur.without_axis(axis);
            dropped.push(axis);
            set = constraint_set(&cur, inv, length_beats);
        }
    }
    (set, dropped)
}

pub fn rule_compatible(rule: &KeywordRule, gt: &StyleVector) -> bool {
    Axis::ALL.into_iter().all(|a| rule.axes[a.index()].permits(gt.get(a)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptScope {
    Song,
    Section,
    Measure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSampling {
    pub p_drop: f64,
    /// Probabilities of song, section and measure scope.
    pub scope_weights: [f64; 3],
    pub max_keywords: usize,
}

impl Default for PromptSampling {
    fn default() -> Self {
        PromptSampling { p_drop: 0.3, scope_weights: [0.4, 0.3, 0.3], max_keywords: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledPrompt {
    pub keywords: Vec<String>,
    pub scope: PromptScope,
}

/// Draws a keyword set whose every rule admits the ground-truth style.
pub fn sample_compatible_keywords<R: Rng>(registry: &Registry, gt: &StyleVector, cfg: &PromptSampling, rng: &mut R) -> SampledPrompt {
    let r: f64 = rng.gen();
    let w = cfg.scope_weights;
    let total: f64 = w.iter().sum();
    let scope = if r * total < w[0] {
        PromptScope::Song
    } else if r * total < w[0] + w[1] {
        PromptScope::Section
    } else {
        PromptScope::Measure
    };
    if cfg.max_keywords == 0 || rng.gen_bool(cfg.p_drop.clamp(0.0, 1.0)) {
        return SampledPrompt { keywords: Vec::new(), scope };
    }
    let eligible: Vec<&str> = registry.rules.values().filter(|r| rule_compatible(r, gt)).map(|r| r.name.as_str()).collect();
    let k = rng.gen_range(1..=cfg.max_keywords).min(eligible.len());
    let mut keywords: Vec<String> = eligible.choose_multiple(rng, k).map(|s| s.to_string()).collect();
    keywords.sort();
    SampledPrompt { keywords, scope }
}

/// Parses `"quiet,gentle"` into trimmed names.
pub fn parse_keyword_list(text: &str) -> Vec<String> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reg() -> Registry {
        Registry::builtin()
    }

    #[test]
    fn registry_has_fifteen() {
        assert_eq!(reg().len(), 15);
        let suite = ["arp", "block", "busy", "dense", "fast", "gentle", "loud", "ostinato", "quiet", "slow", "sparse", "stride"];
        for k in suite {
            assert!(reg().get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn empty_merge_is_auto() {
        let c = reg().merge::<&str>(&[]).unwrap();
        assert!(c.is_unconstrained());
        let v = prompt_vector(&c);
        assert_eq!(v.0.iter().filter(|x| **x == 1.0).count(), 6);
        assert_eq!(v.0.iter().sum::<f64>(), 6.0);
    }

    #[test]
    fn quiet_gentle_guard() {
        let c = reg().merge(&["quiet", "gentle"]).unwrap();
        let q = Axis::Dyn.label_index("quiet").unwrap();
        let g = Axis::Art.label_index("gentle").unwrap();
        assert_eq!(c.axis(Axis::Dyn).preferred, BTreeSet::from([q]));
        assert_eq!(c.axis(Axis::Art).preferred, BTreeSet::from([g]));
        assert!(c.axis(Axis::Rhythm).excluded.contains(&Axis::Rhythm.label_index("dense").unwrap()));
        assert!(c.axis(Axis::Tension).excluded.contains(&Axis::Tension.label_index("syncopated").unwrap()));
        let v = prompt_vector(&c);
        let dyn_block = v.block(Axis::Dyn);
        assert!((dyn_block[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((dyn_block[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_allowed_over_specifies() {
        let c = reg().merge(&["block", "arp"]).unwrap();
        assert_eq!(c.over_specified(), vec![Axis::Texture]);
        let v = prompt_vector(&c);
        assert_eq!(*v.block(Axis::Texture).last().unwrap(), 1.0);
        assert!(matches!(reg().merge(&["nope"]), Err(PromptError::UnknownKeyword(_))));
    }

    fn inventory(styles: &[StyleVector]) -> StyleInventory {
        let mut inv = StyleInventory::default();
        for s in styles {
            inv.add(4, *s);
        }
        inv
    }

    #[test]
    fn constraint_sets() {
        let all: Vec<StyleVector> = StyleVector::all().step_by(97).collect();
        let inv = inventory(&all);
        assert_eq!(constraint_set(&PromptConstraints::default(), &inv, 4).len(), inv.counts(4).unwrap().len());
        let block = Axis::Texture.label_index("block").unwrap();
        let blocks: Vec<StyleVector> = all.iter().map(|s| s.with(Axis::Texture, block)).collect();
        let mut c = PromptConstraints::default();
        c.axes[Axis::Texture.index()].excluded.insert(block);
        assert!(constraint_set(&c, &inventory(&blocks), 4).is_empty());
        let (set, dropped) = relaxed_constraint_set(&c, &inventory(&blocks), 4);
        assert!(!set.is_empty());
        assert_eq!(dropped, vec![Axis::Texture]);
    }

    #[test]
    fn sampling_respects_gt_and_drop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt = StyleVector::from_labels(["loud", "normal", "fast", "syncopated", "stride", "bright"]).unwrap();
        let stride = reg().get("stride").unwrap().clone();
        let alberti = reg().get("alberti").unwrap().clone();
        assert!(rule_compatible(&stride, &gt));
        assert!(!rule_compatible(&alberti, &gt));
        let cfg = PromptSampling { p_drop: 1.0, ..Default::default() };
        for _ in 0..100 {
            assert!(sample_compatible_keywords(&reg(), &gt, &cfg, &mut rng).keywords.is_empty());
        }
    }

    #[test]
    fn sampled_sets_always_compatible() {
        let registry = reg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let all: Vec<StyleVector> = StyleVector::all().collect();
        let cfg = PromptSampling { p_drop: 0.1, ..Default::default() };
        for _ in 0..10_000 {
            let gt = *all.choose(&mut rng).unwrap();
            let s = sample_compatible_keywords(&registry, &gt, &cfg, &mut rng);
            let merged = registry.merge(&s.keywords).unwrap();
            assert!(merged.permits(&gt), "{:?} vs {gt}", s.keywords);
        }
    }

    fn arb_keywords() -> impl Strategy<Value = Vec<String>> {
        let names: Vec<String> = Registry::builtin().names().map(String::from).collect();
        prop::sample::subsequence(names, 0..5)
    }

    proptest! {
        #[test]
        fn prompt_blocks_normalized(kw in arb_keywords()) {
            let v = prompt_vector(&reg().merge(&kw).unwrap());
            for axis in Axis::ALL {
                let s: f64 = v.block(axis).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            prop_assert!(v.0.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn adding_keyword_is_monotone(kw in arb_keywords(), extra in arb_keywords()) {
            let base = reg().merge(&kw).unwrap();
            let mut more = kw.clone();
            more.extend(extra);
            let bigger = reg().merge(&more).unwrap();
            for axis in Axis::ALL {
                let (a, b) = (base.axis(axis), bigger.axis(axis));
                if let Some(ba) = &b.allowed {
                    prop_assert!(a.allowed.as_ref().map_or(true, |aa| ba.is_subset(aa)));
                } else {
                    prop_assert!(a.allowed.is_none());
                }
                prop_assert!(a.excluded.is_subset(&b.excluded));
            }
        }

        #[test]
        fn constraint_set_is_filter(kw in arb_keywords(), step in 1usize..50) {
            let all: Vec<StyleVector> = StyleVector::all().step_by(step).collect();
            let inv = inventory(&all);
            let c = reg().merge(&kw).unwrap();
            let want: Vec<StyleVector> = inv.counts(4).unwrap().keys().filter(|s| {
                Axis::ALL.into_iter().all(|a| {
                    let sets = c.axis(a);
                    let y = s.get(a);
                    !sets.excluded.contains(&y) && sets.allowed.as_ref().map_or(true, |al| al.contains(&y))
                })
            }).copied().collect();
            prop_assert_eq!(constraint_set(&c, &inv, 4), want);
        }
    }
}
