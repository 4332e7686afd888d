use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accomp::experiments::{active_sigs, pitch_sigs, run_ablation, run_suite, AblationSettings, SUITE_KEYWORDS};
use accomp::harmony::normalize_key;
use accomp::index::{build_index, CorpusIndex};
use accomp::ingest::{ingest_dataset, read_song_bundle, write_midi, write_song_bundle};
use accomp::labeler::{label_corpus, LabelFile};
use accomp::metrics::{diversity_report, isolation_metrics, realized_features, style_space_metrics};
use accomp::planner::{load_checkpoint, plan_song, save_checkpoint, train, PlanOptions, PlannerConfig, TrainData};
use accomp::prompt::{parse_keyword_list, Registry};
use accomp::retriever::{generate_song, Generated, RetrieverConfig};
use accomp::rng::mix;
use accomp::song::{SectionLabel, Song, StyleVector};
use accomp::synth::{generate as synth_corpus, SynthConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "accomp", version, about = "Style-planned accompaniment retrieval")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset tree into song bundles.
    Ingest {
        #[arg(long)]
        dataset_root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label every measure of a bundle directory.
    Label {
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the measure index, or print statistics of an existing one.
    Index {
        #[arg(long, required_unless_present = "index")]
        bundles: Option<PathBuf>,
        #[arg(long, required_unless_present = "index")]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Existing index to read instead of building one.
        #[arg(long, conflicts_with_all = ["bundles", "labels"])]
        index: Option<PathBuf>,
        #[arg(long)]
        stats: bool,
    },
    /// Train the style planner.
    Train {
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        val_split: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Start from the small desk-scale model instead of the full one.
        #[arg(long)]
        tiny: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan a style vector per measure.
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        song: PathBuf,
        #[command(flatten)]
        prompt: PromptArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve and reharmonize an accompaniment for a plan.
    Generate {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        song: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Output directory for generated.json and arrangement.mid.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics over stored outputs.
    Eval {
        #[command(subcommand)]
        metric: EvalCommand,
    },
    /// Run the four planning conditions over a bundle directory.
    Ablate(AblateArgs),
    /// Generate one arrangement per suite keyword.
    Suite {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        song: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic corpus with ground-truth labels.
    Synth {
        #[arg(long)]
        songs: Option<usize>,
        /// Held-out songs written to test/.
        #[arg(long, default_value_t = 2)]
        test_songs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PromptArgs {
    /// Comma-separated keywords for the whole song.
    #[arg(long)]
    keywords: Option<String>,
    /// Per-section keywords, e.g. `chorus=busy,loud`. Repeatable.
    #[arg(long)]
    section_keywords: Vec<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    bundles: PathBuf,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Pattern diversity of generated outputs.
    Diversity {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Style-space metrics of plan files.
    StyleSpace {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Isolation across generated outputs of one song.
    Isolation {
        #[arg(long = "in", required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Realized continuous features of generated outputs.
    Realized {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Same as the top-level `ablate`.
    Ablate(AblateArgs),
}

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    seed: u64,
    val_split: Option<f64>,
    resamples: Option<usize>,
    planner: Option<PlannerConfig>,
    plan: PlanOptions,
    retriever: RetrieverConfig,
    synth: SynthConfig,
}

/// Input the user got wrong; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    song_id: String,
    sections: Vec<SectionLabel>,
    styles: Vec<StyleVector>,
    #[serde(default)]
    distributions: Option<Vec<accomp::planner::SlotDistributions>>,
    relaxed: Vec<Vec<accomp::song::Axis>>,
}

fn log(event: &str, fields: serde_json::Value) {
    let mut obj = serde_json::json!({ "event": event });
    if let (Some(o), serde_json::Value::Object(f)) = (obj.as_object_mut(), fields) {
        o.extend(f);
    }
    eprintln!("{obj}");
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes the resolved configuration next to a file output, or inside a directory output.
fn emit_config(out: &Path, cfg: &RunConfig, is_dir: bool) -> Result<()> {
    let path = if is_dir {
        out.join("run_config.json")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".config.json");
        out.with_file_name(name)
    };
    write_json(&path, cfg)
}

fn load_bundles(dir: &Path) -> Result<Vec<Song>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .filter(|p| !p.file_name().is_some_and(|n| n == "ingest_report.json" || n == "run_config.json" || n == "labels.json"))
        .collect();
    paths.sort();
    let songs = paths
        .iter()
        .map(|p| read_song_bundle(p).with_context(|| format!("bundle {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if songs.is_empty() {
        bail!("no song bundles in {}", dir.display());
    }
    Ok(songs)
}

fn train_data(songs: &[Song], labels: &LabelFile) -> Result<TrainData> {
    let styles = songs
        .iter()
        .map(|s| match labels.get(&s.id) {
            Some(l) if l.measures.len() == s.measures.len() => Ok(l.styles()),
            Some(_) => bail!("labels of {} do not match its measure count", s.id),
            None => bail!("no labels for song {}", s.id),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainData { songs: songs.iter().map(normalize_key).collect(), styles })
}

fn plan_options(cfg: &mut RunConfig, prompt: &PromptArgs) -> Result<()> {
    if let Some(k) = &prompt.keywords {
        cfg.plan.keywords = parse_keyword_list(k);
    }
    for spec in &prompt.section_keywords {
        let (label, kws) = spec.split_once('=').ok_or_else(|| Usage(format!("expected section=keywords, got {spec:?}")))?;
        let label: SectionLabel = label.trim().parse().map_err(Usage)?;
        cfg.plan.section_keywords.insert(label, parse_keyword_list(kws));
    }
    cfg.plan.seed = cfg.seed;
    let registry = Registry::builtin();
    let all = std::iter::once(&cfg.plan.keywords).chain(cfg.plan.section_keywords.values());
    for kws in all {
        registry.merge(kws).map_err(|e| Usage(e.to_string()))?;
    }
    Ok(())
}

fn ablate(cfg: &mut RunConfig, a: &AblateArgs) -> Result<()> {
    if a.resamples.is_some() {
        cfg.resamples = a.resamples;
    }
    let model = load_checkpoint(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let index = CorpusIndex::load(&a.index).with_context(|| format!("reading {}", a.index.display()))?;
    let songs = load_bundles(&a.bundles)?;
    let defaults = AblationSettings::default();
    let settings = AblationSettings {
        plan: PlanOptions { lambda_prior: defaults.plan.lambda_prior, ..cfg.plan.clone() },
        retriever: cfg.retriever.clone(),
        resamples: cfg.resamples.unwrap_or(defaults.resamples),
        seed: cfg.seed,
        ..defaults
    };
    let report = run_ablation(&model, &songs, &index, &settings)?;
    for c in &report.conditions {
        log("condition", serde_json::json!({ "condition": c.condition.name(), "mean": c.mean, "std": c.std }));
    }
    write_json(&a.out, &report)?;
    emit_config(&a.out, cfg, false)
}

fn generated(inputs: &[PathBuf]) -> Result<Vec<Generated>> {
    inputs.iter().map(|p| read_json(p)).collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg: RunConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.retriever.seed = cfg.seed;
    match cli.command {
        Command::Ingest { dataset_root, out } => {
            let (songs, report) = ingest_dataset(&dataset_root)?;
            std::fs::create_dir_all(&out)?;
            for s in &songs {
                std::fs::write(out.join(format!("{}.json", s.id)), write_song_bundle(s))?;
            }
            write_json(&out.join("ingest_report.json"), &report)?;
            log("ingest", serde_json::json!({ "songs": report.songs, "skipped": report.skipped.len(), "unrecognized_chords": report.unrecognized_chords }));
        }
        Command::Label { bundles, out } => {
            let songs = load_bundles(&bundles)?;
            let labels = label_corpus(&songs)?;
            write_json(&out, &labels)?;
            log("label", serde_json::json!({ "songs": songs.len(), "measures": songs.iter().map(|s| s.measures.len()).sum::<usize>() }));
        }
        Command::Index { bundles, labels, out, index, stats } => {
            let idx = match (index, bundles, labels) {
                (Some(p), _, _) => CorpusIndex::load(&p).with_context(|| format!("reading {}", p.display()))?,
                (None, Some(b), Some(l)) => {
                    let idx = build_index(&load_bundles(&b)?, &read_json(&l)?)?;
                    let out = out.ok_or_else(|| Usage("--out is required when building an index".into()))?;
                    idx.save(&out)?;
                    log("index", serde_json::json!({ "records": idx.stats().measures }));
                    idx
                }
                _ => unreachable!("clap requires bundles and labels without an index"),
            };
            if stats {
                print!("{}", idx.stats());
            }
        }
        Command::Train { bundles, labels, val_split, epochs, tiny, out } => {
            let songs = load_bundles(&bundles)?;
            let data = train_data(&songs, &read_json(&labels)?)?;
            let mut pc = cfg.planner.clone().unwrap_or_else(|| if tiny { PlannerConfig::tiny() } else { PlannerConfig::default() });
            if let Some(e) = epochs {
                pc.epochs = e;
            }
            pc.seed = cfg.seed;
            let split = val_split.or(cfg.val_split).unwrap_or(0.1);
            if !(0.0..1.0).contains(&split) {
                return Err(Usage(format!("--val-split must lie in [0, 1), got {split}")).into());
            }
            cfg.val_split = Some(split);
            cfg.planner = Some(pc.clone());
            let (train_ids, val_ids) = data.split(split, cfg.seed);
            let outcome = train(&data, &train_ids, &val_ids, &pc, |e| log("epoch", serde_json::to_value(e).unwrap_or_default()))?;
            save_checkpoint(&outcome.model, &out)?;
            write_json(&out.with_extension("history.json"), &outcome.epochs)?;
            log("train", serde_json::json!({ "best_epoch": outcome.best_epoch, "train_songs": train_ids.len(), "val_songs": val_ids.len() }));
            emit_config(&out, &cfg, false)?;
        }
        Command::Plan { model, index, song, prompt, out } => {
            plan_options(&mut cfg, &prompt)?;
            let model = load_checkpoint(&model).with_context(|| format!("reading {}", model.display()))?;
            let idx = CorpusIndex::load(&index).with_context(|| format!("reading {}", index.display()))?;
            let song = read_song_bundle(&song).with_context(|| format!("reading {}", song.display()))?;
            let planned = plan_song(&model, &song, idx.inventory(), &cfg.plan)?;
            let file = PlanFile {
                song_id: song.id.clone(),
                sections: song.measures.iter().map(|m| m.section_label).collect(),
                styles: planned.styles,
                distributions: Some(planned.distributions),
                relaxed: planned.relaxed,
            };
            write_json(&out, &file)?;
            emit_config(&out, &cfg, false)?;
        }
        Command::Generate { index, song, plan, out } => {
            let idx = CorpusIndex::load(&index).with_context(|| format!("reading {}", index.display()))?;
            let song = read_song_bundle(&song).with_context(|| format!("reading {}", song.display()))?;
            let plan: PlanFile = read_json(&plan)?;
            if plan.song_id != song.id {
                bail!("plan is for {} but the song is {}", plan.song_id, song.id);
            }
            let g = generate_song(&plan.styles, plan.distributions.as_deref(), &song, &idx, &cfg.retriever)?;
            std::fs::create_dir_all(&out)?;
            write_midi(&g.arrangement, &out.join("arrangement.mid"))?;
            write_json(&out.join("generated.json"), &g)?;
            log("generate", serde_json::json!({ "measures": g.log.len(), "strict_misses": g.strict_misses, "median_strict_pool": g.median_strict_pool }));
            emit_config(&out, &cfg, true)?;
        }
        Command::Eval { metric } => match metric {
            EvalCommand::Diversity { inputs, out } => {
                let mut reports = BTreeMap::new();
                for (p, g) in inputs.iter().zip(generated(&inputs)?) {
                    let sections: Vec<SectionLabel> = g.log.iter().map(|l| l.section).collect();
                    let pools: Vec<usize> = g.log.iter().map(|l| l.strict_pool()).collect();
                    reports.insert(p.display().to_string(), diversity_report(&active_sigs(&g), &sections, &pools)?);
                }
                write_json(&out, &reports)?;
            }
            EvalCommand::StyleSpace { inputs, out } => {
                let mut reports = BTreeMap::new();
                for p in &inputs {
                    let plan: PlanFile = read_json(p)?;
                    reports.insert(p.display().to_string(), style_space_metrics(&plan.styles, &plan.sections)?);
                }
                write_json(&out, &reports)?;
            }
            EvalCommand::Isolation { inputs, out } => {
                let gs = generated(&inputs)?;
                let active: Vec<Vec<u64>> = gs.iter().map(active_sigs).collect();
                let pitch: Vec<Vec<u64>> = gs.iter().map(pitch_sigs).collect();
                write_json(&out, &isolation_metrics(&active, &pitch)?)?;
            }
            EvalCommand::Realized { inputs, out } => {
                let mut reports = BTreeMap::new();
                for (p, g) in inputs.iter().zip(generated(&inputs)?) {
                    reports.insert(p.display().to_string(), realized_features(&g.arrangement)?);
                }
                write_json(&out, &reports)?;
            }
            EvalCommand::Ablate(a) => ablate(&mut cfg, &a)?,
        },
        Command::Ablate(a) => ablate(&mut cfg, &a)?,
        Command::Suite { model, index, song, out } => {
            let model = load_checkpoint(&model).with_context(|| format!("reading {}", model.display()))?;
            let idx = CorpusIndex::load(&index).with_context(|| format!("reading {}", index.display()))?;
            let song = read_song_bundle(&song).with_context(|| format!("reading {}", song.display()))?;
            let (report, outputs) = run_suite(&model, &song, &idx, &SUITE_KEYWORDS, &cfg.plan, &cfg.retriever, cfg.seed)?;
            std::fs::create_dir_all(&out)?;
            for (kw, g) in SUITE_KEYWORDS.iter().zip(&outputs) {
                write_midi(&g.arrangement, &out.join(format!("{kw}.mid")))?;
            }
            write_json(&out.join("suite_report.json"), &report)?;
            log("suite", serde_json::json!({ "all_match_active": report.isolation.active.all_match_ratio, "all_match_pitch": report.isolation.pitch.all_match_ratio }));
            emit_config(&out, &cfg, true)?;
        }
        Command::Synth { songs, test_songs, out } => {
            if let Some(n) = songs {
                cfg.synth.songs = n;
            }
            cfg.synth.seed = cfg.seed;
            let corpus = synth_corpus(&cfg.synth);
            let dir = out.join("bundles");
            std::fs::create_dir_all(&dir)?;
            for s in &corpus.songs {
                std::fs::write(dir.join(format!("{}.json", s.id)), write_song_bundle(s))?;
            }
            write_json(&out.join("labels.json"), &corpus.labels()?)?;
            if test_songs > 0 {
                let test = synth_corpus(&SynthConfig { songs: test_songs, seed: mix(cfg.seed, 1, 0), ..cfg.synth.clone() });
                let dir = out.join("test");
                std::fs::create_dir_all(&dir)?;
                for s in &test.songs {
                    std::fs::write(dir.join(format!("{}.json", s.id)), write_song_bundle(s))?;
                }
            }
            log("synth", serde_json::json!({ "songs": corpus.songs.len(), "test_songs": test_songs }));
            emit_config(&out, &cfg, true)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.downcast_ref::<Usage>().is_some();
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            log("error", serde_json::json!({ "kind": if usage { "usage" } else { "data" }, "message": chain.join(": ") }));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
