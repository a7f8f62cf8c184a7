#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use fbpr::extraction::{ChatClient, ChatError, ChatRequest};
use fbpr::model::Question;
use fbpr::pipeline;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// The diagnosis subset of `questions.jsonl`.
pub fn subset_questions() -> Vec<Question> {
    let file = std::fs::File::open(fixture("questions.jsonl")).unwrap();
    let (jsonl, _) = pipeline::run_filter(std::io::BufReader::new(file), false).unwrap();
    fbpr::dataset::read_questions(jsonl.as_bytes())
        .unwrap()
        .into_iter()
        .map(|(_, q)| q)
        .collect()
}

/// Concepts (and whether each is negated) the scripted model returns per
/// question id.
pub const SCRIPT: &[(&str, &[(&str, bool)])] = &[
    (
        "q1",
        &[
            ("blood in stool", false),
            ("intermittent constipation", false),
            ("positive occult blood", false),
            ("microcytic anemia", false),
            ("pale conjunctivae", false),
        ],
    ),
    (
        "q2",
        &[
            ("joint pain", false),
            ("facial rash", false),
            ("photosensitivity", false),
            ("oral ulcers", false),
            ("fever", true),
        ],
    ),
    (
        "q3",
        &[
            ("crushing chest pain", false),
            ("left arm pain", false),
            ("diaphoresis", false),
            ("st elevation", false),
            ("chest pain", false),
        ],
    ),
    (
        "q4",
        &[
            ("barking cough", false),
            ("inspiratory stridor", false),
            ("runny nose", false),
            ("fever", false),
            ("toddler", false),
        ],
    ),
    (
        "q5",
        &[
            ("heat intolerance", false),
            ("weight loss", false),
            ("palpitations", false),
            ("diffuse goiter", false),
            ("exophthalmos", false),
        ],
    ),
    (
        "q6",
        &[
            ("fatigue", false),
            ("polyuria", false),
            ("polydipsia", false),
            ("elevated fasting glucose", false),
            ("middle-aged man", false),
        ],
    ),
];

type Script = (&'static str, &'static [(&'static str, bool)]);

/// A deterministic stand-in for the chat model, keyed on the question stem
/// inside the prompt.
pub struct ScriptedChat {
    by_stem: HashMap<String, Script>,
    /// Question ids whose extraction answer drops the last concept.
    pub short: Vec<String>,
}

impl ScriptedChat {
    pub fn new(questions: &[Question]) -> Self {
        let by_stem = questions
            .iter()
            .filter_map(|q| {
                SCRIPT
                    .iter()
                    .find(|(id, _)| *id == q.id)
                    .map(|entry| (q.stem.clone(), *entry))
            })
            .collect();
        ScriptedChat {
            by_stem,
            short: Vec::new(),
        }
    }

    fn lookup(&self, stem: &str) -> Result<Script, ChatError> {
        self.by_stem
            .get(stem)
            .copied()
            .ok_or_else(|| ChatError::Malformed(format!("unscripted stem {stem:.40}")))
    }
}

impl ChatClient for ScriptedChat {
    fn complete(&self, req: &ChatRequest) -> Result<String, ChatError> {
        let user = &req.messages[1].content;
        if let Some((_, stem)) = user.split_once("Passage:\n") {
            let (id, items) = self.lookup(stem)?;
            let short = self.short.iter().any(|s| s == id);
            let n = if short { items.len() - 1 } else { items.len() };
            return Ok(items[..n].iter().map(|(c, _)| *c).collect::<Vec<_>>().join(", "));
        }
        let stem = user
            .strip_prefix("Question:\n")
            .and_then(|r| r.split_once("\n\nKeywords").map(|(s, _)| s))
            .ok_or_else(|| ChatError::Malformed("unrecognised prompt".into()))?;
        let (_, items) = self.lookup(stem)?;
        Ok(items
            .iter()
            .map(|(c, neg)| format!("{c}: {}", if *neg { "negative" } else { "positive" }))
            .collect::<Vec<_>>()
            .join(", "))
    }
}

pub struct E2eOutputs {
    pub concepts: fbpr::artifacts::Artifact<pipeline::ConceptRecord>,
    pub counts: fbpr::artifacts::Artifact<pipeline::CountRecord>,
    pub score: pipeline::ScoreReport,
    pub compare: pipeline::CompareReport,
}

/// Full replay-mode run over the fixtures: extract -> count -> score ->
/// compare against the fixture LLM responses. Reports are written to `out`.
pub fn run_e2e(out: &std::path::Path, scoring: &fbpr::scoring::ScoringConfig) -> E2eOutputs {
    use fbpr::counts::{CountBackend, LocalCorpus};
    use fbpr::evaluation::emit_report;

    let qs = subset_questions();
    let config = serde_json::json!({
        "chat": {"model": fbpr::extraction::DEFAULT_CHAT_MODEL, "replay": "chat_replay.jsonl"},
        "backend": {"local_corpus": "corpus.jsonl"},
        "scoring": {"delta": scoring.delta, "mode": scoring.mode},
    });
    let replay = fbpr::extraction::ReplayChatClient::open(&fixture("chat_replay.jsonl")).unwrap();
    let settings = pipeline::ExtractSettings {
        k_mode: fbpr::model::KMode::FixedFive,
        model: fbpr::extraction::DEFAULT_CHAT_MODEL.into(),
        max_inflight: 3,
    };
    let concepts =
        pipeline::run_extract(&qs, &settings, &replay, config.clone(), None, |_| Ok(())).unwrap();
    let corpus = LocalCorpus::open("fixture-corpus", &fixture("corpus.jsonl")).unwrap();
    let plan = fbpr::query_plan::PlanOptions::for_corpus(corpus.corpus_meta().corpus_id);
    let (counts, _) = pipeline::run_count(&qs, &concepts, &corpus, &plan, 3, config.clone());
    let (score, _) =
        pipeline::run_score(&qs, &concepts, &counts, scoring, 0.99, config.clone()).unwrap();
    let fbpr_preds = pipeline::LoadedPredictions {
        predictions: score
            .rows
            .iter()
            .map(|r| fbpr::evaluation::Prediction {
                question_id: r.question_id.clone(),
                choice: Some(r.predicted_index),
            })
            .collect(),
        tiers: Default::default(),
    };
    let llm = pipeline::load_predictions(&fixture("llm_responses.jsonl"), &qs).unwrap();
    let compare = pipeline::run_compare(&fbpr_preds, &llm, &qs, config).unwrap();
    concepts.save(&out.join("concepts.json")).unwrap();
    counts.save(&out.join("counts.json")).unwrap();
    emit_report(out, "score", &score).unwrap();
    emit_report(out, "compare", &compare).unwrap();
    E2eOutputs {
        concepts,
        counts,
        score,
        compare,
    }
}

/// Every file in `dir`, sorted by name, with contents.
pub fn dir_contents(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}
