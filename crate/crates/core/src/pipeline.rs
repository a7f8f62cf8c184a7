//! Batch stages behind the command-line tool. Each stage reads the previous
//! stage's artifact and returns its own; callers decide where to write it.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::artifacts::Artifact;
use crate::counts::{collect_bundle, CountBackend};
use crate::dataset::{self, DatasetError, FilterSummary};
use crate::evaluation::{self, AgreementReport, EvalError, Prediction, Report, ScoreMetrics};
use crate::extraction::{
    extract_concepts, label_polarity, ChatClient, ExtractionRequest, LlmPrediction, Tier,
};
use crate::model::{
    letter_to_index, ConceptSet, CountBundle, KMode, Question, RankingResult, StepDomain,
    NUM_OPTIONS,
};
use crate::query_plan::PlanOptions;
use crate::scoring::{rank_question, ScoringConfig, ScoringError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("{0}")]
    Alignment(String),
    #[error("{path}: {msg}")]
    Input { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Runs `f` over `items` on up to `workers` threads; output keeps input order.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

// ---- filter ----------------------------------------------------------------

/// Reads raw records, keeps the diagnosis subset, and returns the output
/// JSONL (one annotated record per kept question) with the summary. With
/// `medqa`, input is in the original MedQA layout.
pub fn run_filter(input: impl BufRead, medqa: bool) -> Result<(String, FilterSummary), PipelineError> {
    let pairs = if medqa {
        dataset::read_medqa_questions(input)?
    } else {
        dataset::read_questions(input)?
    };
    let raw_by_id: HashMap<String, _> = pairs
        .iter()
        .map(|(raw, q)| (q.id.clone(), raw.clone()))
        .collect();
    let (kept, summary) =
        dataset::filter_diagnosis_subset(pairs.into_iter().map(|(_, q)| q).collect());
    let mut out = String::new();
    for q in &kept {
        let rec = dataset::subset_record(&raw_by_id[&q.id], q);
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    Ok((out, summary))
}

/// Loads validated questions from a JSONL file.
pub fn load_questions(path: &Path) -> Result<Vec<Question>, PipelineError> {
    let file = std::fs::File::open(path)?;
    let pairs = dataset::read_questions(std::io::BufReader::new(file))?;
    Ok(pairs.into_iter().map(|(_, q)| q).collect())
}

// ---- extract ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts: Option<ConceptSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExtractSettings {
    pub k_mode: KMode,
    pub model: String,
    pub max_inflight: usize,
}

fn extract_one<C: ChatClient + ?Sized>(
    q: &Question,
    settings: &ExtractSettings,
    client: &C,
) -> ConceptRecord {
    let result = ExtractionRequest::new(q.stem.clone(), settings.k_mode, settings.model.clone())
        .and_then(|req| extract_concepts(&req, client))
        .map_err(|e| e.to_string())
        .and_then(|cs| {
            label_polarity(&q.stem, &cs, client, &settings.model).map_err(|e| e.to_string())
        });
    match result {
        Ok(cs) => ConceptRecord {
            question_id: q.id.clone(),
            concepts: Some(cs),
            error: None,
        },
        Err(e) => {
            log::warn!("{}: {e}", q.id);
            ConceptRecord {
                question_id: q.id.clone(),
                concepts: None,
                error: Some(e),
            }
        }
    }
}

/// Extracts and labels concepts for every question.
///
/// Records already successful in `previous` are reused, so an interrupted run
/// resumes where it stopped; failed ones are retried. `checkpoint` is called
/// with the partial artifact after each batch. Output follows question order
/// with one record per id.
pub fn run_extract<C: ChatClient + ?Sized>(
    questions: &[Question],
    settings: &ExtractSettings,
    client: &C,
    config: Value,
    previous: Option<Artifact<ConceptRecord>>,
    mut checkpoint: impl FnMut(&Artifact<ConceptRecord>) -> std::io::Result<()>,
) -> Result<Artifact<ConceptRecord>, PipelineError> {
    let mut done: HashMap<String, ConceptRecord> = previous
        .map(|a| a.records)
        .unwrap_or_default()
        .into_iter()
        .filter(|r| r.concepts.is_some())
        .map(|r| (r.question_id.clone(), r))
        .collect();
    let todo: Vec<&Question> = questions.iter().filter(|q| !done.contains_key(&q.id)).collect();
    log::info!(
        "extract: {} questions, {} already done",
        questions.len(),
        questions.len() - todo.len()
    );
    let assemble = |done: &HashMap<String, ConceptRecord>| {
        Artifact::new(
            config.clone(),
            questions.iter().filter_map(|q| done.get(&q.id).cloned()).collect(),
        )
    };
    let batch = settings.max_inflight.max(1) * 8;
    for chunk in todo.chunks(batch) {
        let recs = parallel_map(chunk, settings.max_inflight, |q| extract_one(q, settings, client));
        for r in recs {
            done.insert(r.question_id.clone(), r);
        }
        checkpoint(&assemble(&done))?;
    }
    Ok(assemble(&done))
}

// ---- count -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<CountBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountStats {
    pub questions: usize,
    pub failed: usize,
    pub counts: usize,
    pub approx: usize,
}

/// Collects count bundles for every question that has concepts.
pub fn run_count<B: CountBackend + ?Sized>(
    questions: &[Question],
    concepts: &Artifact<ConceptRecord>,
    backend: &B,
    plan: &PlanOptions,
    max_inflight: usize,
    config: Value,
) -> (Artifact<CountRecord>, CountStats) {
    let by_id: HashMap<&str, &ConceptSet> = concepts
        .records
        .iter()
        .filter_map(|r| r.concepts.as_ref().map(|c| (r.question_id.as_str(), c)))
        .collect();
    let work: Vec<(&Question, &ConceptSet)> = questions
        .iter()
        .filter_map(|q| by_id.get(q.id.as_str()).map(|c| (q, *c)))
        .collect();
    if work.len() < questions.len() {
        log::warn!(
            "count: {} questions have no concepts and are skipped",
            questions.len() - work.len()
        );
    }
    let records = parallel_map(&work, max_inflight, |(q, cs)| {
        match collect_bundle(q, cs, backend, plan) {
            Ok(b) => CountRecord {
                question_id: q.id.clone(),
                bundle: Some(b),
                error: None,
            },
            Err(e) => {
                log::warn!("{}: {e}", q.id);
                CountRecord {
                    question_id: q.id.clone(),
                    bundle: None,
                    error: Some(e.to_string()),
                }
            }
        }
    });
    let mut stats = CountStats {
        questions: records.len(),
        ..Default::default()
    };
    for r in &records {
        match &r.bundle {
            Some(b) => {
                stats.counts += b.total_count();
                stats.approx += b.approx_count();
            }
            None => stats.failed += 1,
        }
    }
    log::info!(
        "count: {} questions, {} failed, {} counts ({} approximate)",
        stats.questions,
        stats.failed,
        stats.counts,
        stats.approx
    );
    (Artifact::new(config, records), stats)
}

// ---- score -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub question_id: String,
    pub step_domain: StepDomain,
    pub gold_index: usize,
    pub predicted_index: usize,
    pub correct: bool,
    pub gold_rank: u8,
    pub softmax_top1: f64,
    pub scores: [f64; NUM_OPTIONS],
    pub negated_concepts: usize,
    pub approx_counts: usize,
}

pub type ScoreReport = Report<ScoreRow, ScoreMetrics>;

/// Ranks every question and computes run metrics. Every question needs both
/// concepts and a count bundle.
pub fn run_score(
    questions: &[Question],
    concepts: &Artifact<ConceptRecord>,
    counts: &Artifact<CountRecord>,
    scoring: &ScoringConfig,
    threshold: f64,
    config: Value,
) -> Result<(ScoreReport, Vec<RankingResult>), PipelineError> {
    let cs: HashMap<&str, &ConceptSet> = concepts
        .records
        .iter()
        .filter_map(|r| r.concepts.as_ref().map(|c| (r.question_id.as_str(), c)))
        .collect();
    let bs: HashMap<&str, &CountBundle> = counts
        .records
        .iter()
        .filter_map(|r| r.bundle.as_ref().map(|b| (r.question_id.as_str(), b)))
        .collect();
    let mut results = Vec::with_capacity(questions.len());
    let mut rows = Vec::with_capacity(questions.len());
    for q in questions {
        let (Some(c), Some(b)) = (cs.get(q.id.as_str()), bs.get(q.id.as_str())) else {
            return Err(PipelineError::Alignment(format!(
                "question {} has no {}; rerun the earlier stage",
                q.id,
                if cs.contains_key(q.id.as_str()) { "count bundle" } else { "concepts" }
            )));
        };
        let r = rank_question(q, b, c, scoring)?;
        rows.push(ScoreRow {
            question_id: q.id.clone(),
            step_domain: q.step_domain,
            gold_index: q.gold_index,
            predicted_index: r.predicted_index,
            correct: r.predicted_index == q.gold_index,
            gold_rank: r.gold_rank,
            softmax_top1: r.softmax_top1,
            scores: r.scores,
            negated_concepts: c.negated_count(),
            approx_counts: b.approx_count(),
        });
        results.push(r);
    }
    let metrics = evaluation::score_metrics(&results, questions, threshold)?;
    Ok((
        Report {
            config,
            rows,
            metrics,
        },
        results,
    ))
}

// ---- compare ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub question_id: String,
    pub gold_index: usize,
    pub a: Option<usize>,
    pub b: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_tier: Option<Tier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_tier: Option<Tier>,
}

pub type CompareReport = Report<CompareRow, AgreementReport>;

/// Predictions from one method, with the extractor tier for free-text input.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPredictions {
    pub predictions: Vec<Prediction>,
    pub tiers: HashMap<String, Tier>,
}

fn parse_choice(v: &Value) -> Option<Option<usize>> {
    match v {
        Value::Null => Some(None),
        Value::Number(n) => n.as_u64().map(|i| Some(i as usize)),
        Value::String(s) => letter_to_index(s).map(Some),
        _ => None,
    }
}

/// Reads predictions from any of:
///
/// * a score report (`{"rows": [{"question_id", "predicted_index"}, ..]}`),
/// * JSONL of `{"question_id" | "id", "response"}` LLM outputs, which are run
///   through the answer extractor, or
/// * JSONL of `{"question_id" | "id", "choice"}` with an index, a letter, or
///   null.
pub fn load_predictions(path: &Path, questions: &[Question]) -> Result<LoadedPredictions, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let bad = |msg: String| PipelineError::Input {
        path: path.display().to_string(),
        msg,
    };
    let options: HashMap<&str, &[String; NUM_OPTIONS]> =
        questions.iter().map(|q| (q.id.as_str(), &q.options)).collect();

    if let Ok(Value::Object(doc)) = serde_json::from_str::<Value>(&text) {
        if let Some(Value::Array(rows)) = doc.get("rows") {
            let predictions = rows
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let id = row["question_id"].as_str();
                    let choice = row.get("predicted_index").and_then(parse_choice);
                    match (id, choice) {
                        (Some(id), Some(choice)) => Ok(Prediction {
                            question_id: id.to_string(),
                            choice,
                        }),
                        _ => Err(bad(format!("row {i} lacks question_id/predicted_index"))),
                    }
                })
                .collect::<Result<_, _>>()?;
            return Ok(LoadedPredictions {
                predictions,
                tiers: HashMap::new(),
            });
        }
    }

    let mut predictions = Vec::new();
    let mut tiers = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value =
            serde_json::from_str(line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
        let id = v
            .get("question_id")
            .or_else(|| v.get("id"))
            .and_then(Value::as_str)
            .ok_or_else(|| bad(format!("line {}: missing question_id", i + 1)))?;
        if let Some(resp) = v.get("response").and_then(Value::as_str) {
            let opts = options
                .get(id)
                .ok_or_else(|| bad(format!("line {}: unknown question {id}", i + 1)))?;
            let p = LlmPrediction::from_response(id, resp, opts);
            tiers.insert(id.to_string(), p.tier);
            predictions.push(Prediction::from(&p));
        } else if let Some(choice) = v.get("choice").and_then(parse_choice) {
            predictions.push(Prediction {
                question_id: id.to_string(),
                choice,
            });
        } else {
            return Err(bad(format!("line {}: need `response` or `choice`", i + 1)));
        }
    }
    Ok(LoadedPredictions { predictions, tiers })
}

pub fn run_compare(
    a: &LoadedPredictions,
    b: &LoadedPredictions,
    questions: &[Question],
    config: Value,
) -> Result<CompareReport, PipelineError> {
    let metrics = evaluation::compare_methods(&a.predictions, &b.predictions, questions)?;
    let pick = |set: &LoadedPredictions| -> HashMap<String, Option<usize>> {
        set.predictions
            .iter()
            .map(|p| (p.question_id.clone(), p.choice))
            .collect()
    };
    let (ma, mb) = (pick(a), pick(b));
    let rows = questions
        .iter()
        .map(|q| CompareRow {
            question_id: q.id.clone(),
            gold_index: q.gold_index,
            a: ma[&q.id],
            b: mb[&q.id],
            a_tier: a.tiers.get(&q.id).copied(),
            b_tier: b.tiers.get(&q.id).copied(),
        })
        .collect();
    Ok(Report {
        config,
        rows,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let xs: Vec<u32> = (0..100).collect();
        let ys = parallel_map(&xs, 7, |x| x * 2);
        assert_eq!(ys, xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(parallel_map(&Vec::<u32>::new(), 4, |x| *x).is_empty());
    }

    #[test]
    fn choices_parse() {
        assert_eq!(parse_choice(&Value::Null), Some(None));
        assert_eq!(parse_choice(&serde_json::json!(3)), Some(Some(3)));
        assert_eq!(parse_choice(&serde_json::json!("c")), Some(Some(2)));
        assert_eq!(parse_choice(&serde_json::json!(true)), None);
    }
}
