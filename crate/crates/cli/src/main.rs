mod config;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fbpr::artifacts::{write_atomic, Artifact};
use fbpr::counts::{
    known_corpus_meta, CacheStore, CachedBackend, CountBackend, LocalCorpus, OfflineBackend,
    RemoteBackend, RemoteConfig,
};
use fbpr::evaluation::{self, emit_report, AgreementReport, ScoreMetrics};
use fbpr::extraction::{ChatClient, HttpChatClient, RecordingChatClient, ReplayChatClient};
use fbpr::model::{CorpusMeta, KMode, NegationMode};
use fbpr::pipeline::{self, CompareRow, ConceptRecord, CountRecord, ExtractSettings, ScoreRow};
use fbpr::query_plan::PlanOptions;
use fbpr::scoring::ScoringConfig;

use config::EffectiveConfig;

#[derive(Parser)]
#[command(name = "fbpr", version, about = "Frequency-based diagnosis ranking pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config file (also FBPR_CONFIG).
    #[arg(long, global = true, env = "FBPR_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    backend_url: Option<String>,
    #[arg(long, global = true)]
    backend_index: Option<String>,
    #[arg(long, global = true)]
    max_inflight: Option<usize>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    chat_model: Option<String>,
    /// Any config key, e.g. `--set backend.requests_per_second=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Keep the diagnosis-query subset of a JSONL question file.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Input uses the original MedQA layout (answer_idx, meta_info).
        #[arg(long)]
        medqa: bool,
    },
    /// Extract and label concepts with a chat model (live or replayed).
    Extract {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = KArg::Five)]
        k: KArg,
        /// Replay responses from this fixture instead of calling the API.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Append every live exchange to this replay fixture.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Collect diagnosis and co-occurrence counts.
    Count {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        concepts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Count over a local corpus file (JSONL with "text", or one doc per line).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Never contact the backend; every count must come from the cache.
        #[arg(long)]
        offline: bool,
    },
    /// Rank options and write the run report.
    Score {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        concepts: PathBuf,
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "score")]
        name: String,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Softmax certainty threshold.
        #[arg(long, default_value_t = 0.99)]
        threshold: f64,
    },
    /// Agreement between two prediction sets.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "compare")]
        name: String,
    },
    /// Summarise an existing score or compare report and rewrite its plot data.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KArg {
    Five,
    Unrestricted,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ignore,
    Agnostic,
    Reward,
}

impl From<ModeArg> for NegationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ignore => NegationMode::IgnoreNegated,
            ModeArg::Agnostic => NegationMode::PolarityAgnostic,
            ModeArg::Reward => NegationMode::RewardAbsence,
        }
    }
}

impl Global {
    fn flags(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            out.push((k.trim().to_string(), v.to_string()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("backend.url", self.backend_url.clone());
        push("backend.index", self.backend_index.clone());
        push("backend.max_inflight", self.max_inflight.map(|n| n.to_string()));
        push("cache.dir", self.cache_dir.as_ref().map(|p| p.display().to_string()));
        push("chat.model", self.chat_model.clone());
        Ok(out)
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn resolve(global: &Global, extra: Vec<(String, String)>) -> Result<EffectiveConfig> {
    let mut flags = global.flags()?;
    flags.extend(extra);
    EffectiveConfig::resolve(global.config.as_deref(), |k| std::env::var(k).ok(), &flags)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Filter {
            input,
            output,
            medqa,
        } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let (jsonl, summary) = pipeline::run_filter(BufReader::new(file), medqa)
                .with_context(|| format!("reading {}", input.display()))?;
            write_atomic(&output, jsonl.as_bytes())?;
            println!(
                "kept={} dropped={} (which-of-the-following={}, what-is={})",
                summary.kept,
                summary.dropped_total(),
                summary.by_phrasing[0],
                summary.by_phrasing[1]
            );
        }
        Command::Extract {
            questions,
            out,
            k,
            replay,
            record,
        } => {
            let mut extra = Vec::new();
            if let Some(p) = &replay {
                extra.push(("chat.replay".to_string(), p.display().to_string()));
            }
            let cfg = resolve(&cli.global, extra)?;
            let qs = pipeline::load_questions(&questions)?;
            let client = chat_client(&cfg, record.as_deref())?;
            let k_mode = match k {
                KArg::Five => KMode::FixedFive,
                KArg::Unrestricted => KMode::Unrestricted,
            };
            let settings = ExtractSettings {
                k_mode,
                model: cfg.chat.model.clone(),
                max_inflight: cfg.backend.max_inflight,
            };
            let mut config = cfg.to_json();
            config["extract"] = serde_json::json!({ "k_mode": k_mode });
            let previous = out
                .exists()
                .then(|| Artifact::<ConceptRecord>::load(&out))
                .transpose()?;
            let art = pipeline::run_extract(
                &qs,
                &settings,
                client.as_ref(),
                config,
                previous,
                |partial| partial.save(&out),
            )?;
            art.save(&out)?;
            let failed = art.records.iter().filter(|r| r.concepts.is_none()).count();
            println!("extracted={} failed={}", art.records.len() - failed, failed);
        }
        Command::Count {
            questions,
            concepts,
            out,
            corpus,
            offline,
        } => {
            let mut extra = Vec::new();
            if let Some(p) = &corpus {
                extra.push(("backend.local_corpus".to_string(), p.display().to_string()));
            }
            let cfg = resolve(&cli.global, extra)?;
            let qs = pipeline::load_questions(&questions)?;
            let cs = Artifact::<ConceptRecord>::load(&concepts)?;
            let backend = count_backend(&cfg, offline)?;
            let plan = PlanOptions::for_corpus(backend.corpus_meta().corpus_id);
            let (art, stats) = pipeline::run_count(
                &qs,
                &cs,
                backend.as_ref(),
                &plan,
                cfg.backend.max_inflight,
                cfg.to_json(),
            );
            art.save(&out)?;
            println!(
                "questions={} failed={} counts={} approx={}",
                stats.questions, stats.failed, stats.counts, stats.approx
            );
            if stats.failed > 0 {
                bail!("{} questions could not be counted", stats.failed);
            }
        }
        Command::Score {
            questions,
            concepts,
            counts,
            out_dir,
            name,
            delta,
            mode,
            threshold,
        } => {
            let mut extra = Vec::new();
            if let Some(d) = delta {
                extra.push(("scoring.delta".to_string(), d.to_string()));
            }
            if let Some(m) = mode {
                extra.push(("scoring.mode".to_string(), NegationMode::from(m).to_string()));
            }
            let cfg = resolve(&cli.global, extra)?;
            let scoring = ScoringConfig::new(cfg.scoring.delta, cfg.scoring.mode)?;
            let qs = pipeline::load_questions(&questions)?;
            let cs = Artifact::<ConceptRecord>::load(&concepts)?;
            let bs = Artifact::<CountRecord>::load(&counts)?;
            let mut config = cfg.to_json();
            config["score"] = serde_json::json!({ "threshold": threshold });
            let (report, _) = pipeline::run_score(&qs, &cs, &bs, &scoring, threshold, config)?;
            emit_report(&out_dir, &name, &report)?;
            print!("{}", evaluation::describe_score_metrics(&report.metrics));
        }
        Command::Compare {
            a,
            b,
            questions,
            out_dir,
            name,
        } => {
            let cfg = resolve(&cli.global, Vec::new())?;
            let qs = pipeline::load_questions(&questions)?;
            let pa = pipeline::load_predictions(&a, &qs)?;
            let pb = pipeline::load_predictions(&b, &qs)?;
            let report = pipeline::run_compare(&pa, &pb, &qs, cfg.to_json())?;
            emit_report(&out_dir, &name, &report)?;
            print!("{}", evaluation::describe_agreement(&report.metrics));
        }
        Command::Report { input, out_dir } => report(&input, out_dir.as_deref())?,
    }
    std::io::stdout().flush()?;
    Ok(())
}

fn report(input: &Path, out_dir: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let name = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    if let Ok(r) = serde_json::from_str::<evaluation::Report<ScoreRow, ScoreMetrics>>(&text) {
        print!("{}", evaluation::describe_score_metrics(&r.metrics));
        if let Some(dir) = out_dir {
            emit_report(dir, &name, &r)?;
        }
        return Ok(());
    }
    let r: evaluation::Report<CompareRow, AgreementReport> = serde_json::from_str(&text)
        .with_context(|| format!("{} is neither a score nor a compare report", input.display()))?;
    print!("{}", evaluation::describe_agreement(&r.metrics));
    if let Some(dir) = out_dir {
        emit_report(dir, &name, &r)?;
    }
    Ok(())
}

fn chat_client(cfg: &EffectiveConfig, record: Option<&Path>) -> Result<Box<dyn ChatClient>> {
    if let Some(path) = &cfg.chat.replay {
        let client = ReplayChatClient::open(path)
            .with_context(|| format!("loading replay fixture {}", path.display()))?;
        return Ok(Box::new(client));
    }
    let live = HttpChatClient::from_env(cfg.chat.url.clone())?;
    Ok(match record {
        Some(path) => Box::new(RecordingChatClient::new(live, path)?),
        None => Box::new(live),
    })
}

fn count_backend(cfg: &EffectiveConfig, offline: bool) -> Result<Box<dyn CountBackend>> {
    let inner: Box<dyn CountBackend> = if offline {
        let meta = match &cfg.backend.local_corpus {
            Some(path) => local_corpus(path)?.corpus_meta(),
            None => known_corpus_meta(&cfg.backend.index).unwrap_or(CorpusMeta {
                corpus_id: cfg.backend.index.clone(),
                ..Default::default()
            }),
        };
        Box::new(OfflineBackend { meta })
    } else if let Some(path) = &cfg.backend.local_corpus {
        Box::new(local_corpus(path)?)
    } else {
        Box::new(RemoteBackend::new(RemoteConfig {
            url: cfg.backend.url.clone(),
            index: cfg.backend.index.clone(),
            max_inflight: cfg.backend.max_inflight,
            requests_per_second: cfg.backend.requests_per_second,
            ..Default::default()
        })?)
    };
    match &cfg.cache.dir {
        Some(dir) => {
            let store = CacheStore::open(dir)
                .with_context(|| format!("opening cache {}", dir.display()))?;
            if store.is_corrupt() {
                log::warn!("cache at {} is corrupt; running without it", dir.display());
            }
            Ok(Box::new(CachedBackend::new(inner, Arc::new(store))))
        }
        None => {
            if offline {
                bail!("--offline needs cache.dir");
            }
            Ok(inner)
        }
    }
}

fn local_corpus(path: &Path) -> Result<LocalCorpus> {
    let id = format!(
        "local:{}",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    );
    LocalCorpus::open(id, path).with_context(|| format!("loading corpus {}", path.display()))
}
