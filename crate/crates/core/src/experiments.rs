//! Planner ablations and the keyword isolation suite.

use serde::{Deserialize, Serialize};

use crate::index::{active_signature, pitch_signature, CorpusIndex, Diversity};
use crate::metrics::{
    bootstrap_ci, isolation_metrics, pattern_diversity, realized_features, style_space_metrics, IsolationReport, MetricsError,
    RealizedFeatures, StyleSpaceReport,
};
use crate::planner::{plan_song, PlanOptions, PlannerError, SlotPredictor};
use crate::retriever::{generate_song, Generated, RetrieverConfig, RetrieverError};
use crate::rng::mix;
use crate::song::{Song, StyleVector};

/// The keywords of the isolation suite, one run each.
pub const SUITE_KEYWORDS: [&str; 12] =
    ["arp", "block", "busy", "dense", "fast", "gentle", "loud", "ostinato", "quiet", "slow", "sparse", "stride"];

/// The rare flat style of the A1-Rare condition.
pub const RARE_STYLE: [&str; 6] = ["quiet", "gentle", "slow", "steady", "block", "warm"];

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// Flat majority style.
    A1,
    /// The planner with no prompt.
    A2,
    /// The planner's first-measure style held for the whole song.
    A3,
    /// A rare flat style.
    A1Rare,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::A1, Condition::A2, Condition::A3, Condition::A1Rare];

    pub fn name(self) -> &'static str {
        match self {
            Condition::A1 => "A1",
            Condition::A2 => "A2",
            Condition::A3 => "A3",
            Condition::A1Rare => "A1-Rare",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub condition: Condition,
    pub song_id: String,
    pub plan: Vec<StyleVector>,
    pub style_space: StyleSpaceReport,
    pub diversity: Diversity,
    /// Share of measures whose retrieved style equals the planned one.
    pub match_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub mean: [f64; 7],
    pub std: [f64; 7],
    pub unique_ratio: f64,
    pub dominant_ratio: f64,
    pub repeat_ratio: f64,
    pub match_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub metric: String,
    pub mean: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub conditions: Vec<ConditionSummary>,
    /// A2 minus A1 per style-space metric, with a bootstrap interval over songs.
    pub deltas: Vec<DeltaRow>,
}

#[derive(Debug, Clone)]
pub struct AblationSettings {
    pub plan: PlanOptions,
    pub retriever: RetrieverConfig,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for AblationSettings {
    fn default() -> Self {
        // The prior weight is off so the planner condition is compared on its own distributions.
        AblationSettings { plan: PlanOptions { lambda_prior: 0.0, ..Default::default() }, retriever: RetrieverConfig::default(), resamples: 10_000, level: 0.95, seed: 0 }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn plan_for(condition: Condition, model: &dyn SlotPredictor, song: &Song, index: &CorpusIndex, opts: &PlanOptions) -> Result<Vec<StyleVector>, ExperimentError> {
    let n = song.measures.len();
    Ok(match condition {
        Condition::A1 => {
            let s = index.inventory().most_common(None).ok_or_else(|| ExperimentError::Setup("empty inventory".into()))?;
            vec![s; n]
        }
        Condition::A1Rare => vec![StyleVector::from_labels(RARE_STYLE).expect("valid labels"); n],
        Condition::A2 => plan_song(model, song, index.inventory(), opts)?.styles,
        Condition::A3 => {
            let first = plan_song(model, song, index.inventory(), opts)?.styles[0];
            vec![first; n]
        }
    })
}

/// Runs every condition on every song under one retriever configuration.
pub fn run_ablation(model: &dyn SlotPredictor, songs: &[Song], index: &CorpusIndex, settings: &AblationSettings) -> Result<AblationReport, ExperimentError> {
    let mut runs = Vec::new();
    for condition in Condition::ALL {
        for (i, song) in songs.iter().enumerate() {
            let opts = PlanOptions { seed: mix(settings.seed, i as u64, 0), ..settings.plan.clone() };
            let plan = plan_for(condition, model, song, index, &opts)?;
            let cfg = RetrieverConfig { seed: mix(settings.seed, i as u64, 1), ..settings.retriever.clone() };
            let g = generate_song(&plan, None, song, index, &cfg)?;
            let sections: Vec<_> = song.measures.iter().map(|m| m.section_label).collect();
            let sigs = active_sigs(&g);
            runs.push(AblationRun {
                condition,
                song_id: song.id.clone(),
                style_space: style_space_metrics(&plan, &sections)?,
                diversity: pattern_diversity(&sigs)?,
                match_rate: g.log.iter().filter(|l| l.chosen_style == l.planned).count() as f64 / g.log.len().max(1) as f64,
                plan,
            });
        }
    }
    let of = |c: Condition| runs.iter().filter(move |r| r.condition == c);
    let mut conditions = Vec::new();
    for c in Condition::ALL {
        let rows: Vec<&AblationRun> = of(c).collect();
        let cols: Vec<(f64, f64)> = (0..7).map(|k| mean_std(&rows.iter().map(|r| r.style_space.values()[k]).collect::<Vec<_>>())).collect();
        let avg = |f: &dyn Fn(&AblationRun) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>()).0;
        conditions.push(ConditionSummary {
            condition: c,
            mean: std::array::from_fn(|k| cols[k].0),
            std: std::array::from_fn(|k| cols[k].1),
            unique_ratio: avg(&|r| r.diversity.unique_ratio),
            dominant_ratio: avg(&|r| r.diversity.dominant_ratio),
            repeat_ratio: avg(&|r| r.diversity.repeat_ratio),
            match_rate: avg(&|r| r.match_rate),
        });
    }
    let mut deltas = Vec::new();
    if songs.len() >= 2 {
        let a1: Vec<&AblationRun> = of(Condition::A1).collect();
        let a2: Vec<&AblationRun> = of(Condition::A2).collect();
        for (k, name) in StyleSpaceReport::FIELDS.iter().enumerate() {
            let d: Vec<f64> = a2.iter().zip(&a1).map(|(x, y)| x.style_space.values()[k] - y.style_space.values()[k]).collect();
            let ci = bootstrap_ci(&d, settings.resamples, settings.level, mix(settings.seed, 0xc1, k as u64))?;
            deltas.push(DeltaRow { metric: name.to_string(), mean: mean_std(&d).0, ci });
        }
    }
    Ok(AblationReport { runs, conditions, deltas })
}

/// Active signature hash of every generated measure.
pub fn active_sigs(g: &Generated) -> Vec<u64> {
    g.arrangement.measures.iter().map(|m| active_signature(&m.notes, m.length_beats).hash).collect()
}

pub fn pitch_sigs(g: &Generated) -> Vec<u64> {
    g.arrangement.measures.iter().map(|m| pitch_signature(&m.notes, m.length_beats).hash).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRun {
    pub keyword: String,
    pub plan: Vec<StyleVector>,
    pub realized: RealizedFeatures,
    pub match_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub song_id: String,
    pub measures: usize,
    pub runs: Vec<SuiteRun>,
    pub isolation: IsolationReport,
    /// Mean over keyword pairs of the share of measures with different plans.
    pub plan_difference: f64,
}

impl SuiteReport {
    pub fn run(&self, keyword: &str) -> Option<&SuiteRun> {
        self.runs.iter().find(|r| r.keyword == keyword)
    }
}

/// Generates one arrangement per keyword. Run `k` plans with seed
/// `mix(seed, k, 0)` and retrieves with seed `mix(seed, k, 1)`.
pub fn run_suite(
    model: &dyn SlotPredictor,
    song: &Song,
    index: &CorpusIndex,
    keywords: &[&str],
    plan: &PlanOptions,
    retriever: &RetrieverConfig,
    seed: u64,
) -> Result<(SuiteReport, Vec<Generated>), ExperimentError> {
    let mut runs = Vec::new();
    let mut outputs = Vec::new();
    for (k, kw) in keywords.iter().enumerate() {
        let opts = PlanOptions { keywords: vec![kw.to_string()], seed: mix(seed, k as u64, 0), ..plan.clone() };
        let planned = plan_song(model, song, index.inventory(), &opts)?;
        let cfg = RetrieverConfig { seed: mix(seed, k as u64, 1), ..retriever.clone() };
        let g = generate_song(&planned.styles, Some(&planned.distributions), song, index, &cfg)?;
        runs.push(SuiteRun {
            keyword: kw.to_string(),
            realized: realized_features(&g.arrangement)?,
            match_rate: g.log.iter().filter(|l| l.chosen_style == l.planned).count() as f64 / g.log.len().max(1) as f64,
            plan: planned.styles,
        });
        outputs.push(g);
    }
    let active: Vec<Vec<u64>> = outputs.iter().map(active_sigs).collect();
    let pitch: Vec<Vec<u64>> = outputs.iter().map(pitch_sigs).collect();
    let mut diffs = Vec::new();
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            let (x, y) = (&runs[a].plan, &runs[b].plan);
            diffs.push(x.iter().zip(y).filter(|(p, q)| p != q).count() as f64 / x.len().max(1) as f64);
        }
    }
    let report = SuiteReport {
        song_id: song.id.clone(),
        measures: song.measures.len(),
        isolation: isolation_metrics(&active, &pitch)?,
        plan_difference: mean_std(&diffs).0,
        runs,
    };
    Ok((report, outputs))
}
