//! Concept extraction and polarity labeling through a chat model, and answer
//! extraction from LLM free text.

mod answer;
mod chat;
pub mod prompts;

use thiserror::Error;

use crate::model::{Concept, ConceptSet, KMode, Polarity, ValidationError};

pub use answer::{extract_answer, normalize_phrase, standalone_letters, LlmPrediction, Tier};
pub use chat::{
    ChatClient, ChatError, ChatMessage, ChatRequest, HttpChatClient, RecordingChatClient,
    ReplayChatClient, ReplayRecord, API_KEY_ENV, DEFAULT_CHAT_MODEL, DEFAULT_CHAT_URL,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionRequest {
    stem: String,
    k_mode: KMode,
    model_id: String,
}

impl ExtractionRequest {
    /// Sampling temperature; always greedy.
    pub const TEMPERATURE: f64 = 0.0;

    pub fn new(
        stem: impl Into<String>,
        k_mode: KMode,
        model_id: impl Into<String>,
    ) -> Result<Self, ExtractionError> {
        let stem = stem.into();
        if stem.trim().is_empty() {
            return Err(ExtractionError::EmptyStem);
        }
        Ok(ExtractionRequest {
            stem,
            k_mode,
            model_id: model_id.into(),
        })
    }

    pub fn stem(&self) -> &str {
        &self.stem
    }

    pub fn k_mode(&self) -> KMode {
        self.k_mode
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// The exact chat request sent for this extraction.
    pub fn chat_request(&self) -> ChatRequest {
        ChatRequest::new(
            self.model_id.clone(),
            vec![
                ChatMessage::system(prompts::extraction_system(self.k_mode)),
                ChatMessage::user(prompts::extraction_user(self.k_mode, &self.stem)),
            ],
        )
    }
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("extraction stem is empty")]
    EmptyStem,
    #[error(transparent)]
    Client(#[from] ChatError),
    #[error("response is not a comma-separated list: {0:?}")]
    MalformedResponse(String),
    #[error("expected {expected} concepts, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("concept rule violated: {0}")]
    RuleViolation(ValidationError),
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error(transparent)]
    Client(#[from] ChatError),
    #[error("item {position}: expected keyword `{expected}`, got `{got}`")]
    OrderMismatch {
        position: usize,
        expected: String,
        got: String,
    },
    #[error("unknown polarity label `{0}`")]
    UnknownLabel(String),
    #[error("labeling response is not a single `kw: label, ...` line: {0:?}")]
    LineFormatViolation(String),
}

/// Parses a lowercase comma-separated concept list.
///
/// Items are trimmed and lowercased; a single trailing period is dropped.
pub fn parse_concepts(response: &str, k_mode: KMode) -> Result<ConceptSet, ExtractionError> {
    let body = response.trim();
    let body = body.strip_suffix('.').unwrap_or(body).trim_end();
    if body.is_empty() || body.contains('\n') {
        return Err(ExtractionError::MalformedResponse(response.to_string()));
    }
    let items: Vec<String> = body.split(',').map(|s| s.trim().to_lowercase()).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(ExtractionError::MalformedResponse(response.to_string()));
    }
    if k_mode == KMode::FixedFive && items.len() != prompts::FIXED_K {
        return Err(ExtractionError::CountMismatch {
            expected: prompts::FIXED_K,
            got: items.len(),
        });
    }
    let concepts = items
        .into_iter()
        .map(Concept::affirmed)
        .collect::<Result<Vec<_>, _>>()
        .map_err(ExtractionError::RuleViolation)?;
    ConceptSet::new(concepts, k_mode).map_err(ExtractionError::RuleViolation)
}

/// Asks the chat model for concepts; all come back `Affirmed` until labeled.
pub fn extract_concepts<C: ChatClient + ?Sized>(
    req: &ExtractionRequest,
    client: &C,
) -> Result<ConceptSet, ExtractionError> {
    let response = client.complete(&req.chat_request())?;
    parse_concepts(&response, req.k_mode)
}

/// The labeling request for a stem and its ordered concepts.
pub fn labeling_request(stem: &str, concepts: &ConceptSet, model_id: &str) -> ChatRequest {
    ChatRequest::new(
        model_id,
        vec![
            ChatMessage::system(prompts::LABEL_SYSTEM),
            ChatMessage::user(prompts::labeling_user(stem, concepts.texts())),
        ],
    )
}

/// Applies a `kw: positive, kw: negative` line to `concepts`.
pub fn parse_polarity(response: &str, concepts: &ConceptSet) -> Result<ConceptSet, LabelError> {
    let line = response.trim();
    if line.is_empty() || line.contains('\n') {
        return Err(LabelError::LineFormatViolation(response.to_string()));
    }
    let items: Vec<&str> = line.split(',').map(str::trim).collect();
    let expected = concepts.concepts();
    let mut labeled = Vec::with_capacity(expected.len());
    for (position, item) in items.iter().enumerate() {
        let (kw, label) = item
            .rsplit_once(':')
            .ok_or_else(|| LabelError::LineFormatViolation(response.to_string()))?;
        let kw = kw.trim();
        let Some(concept) = expected.get(position) else {
            return Err(LabelError::OrderMismatch {
                position,
                expected: String::new(),
                got: kw.to_string(),
            });
        };
        if kw != concept.text() {
            return Err(LabelError::OrderMismatch {
                position,
                expected: concept.text().to_string(),
                got: kw.to_string(),
            });
        }
        let polarity = match label.trim() {
            "positive" => Polarity::Affirmed,
            "negative" => Polarity::Negated,
            other => return Err(LabelError::UnknownLabel(other.to_string())),
        };
        labeled.push(concept.with_polarity(polarity));
    }
    if labeled.len() < expected.len() {
        return Err(LabelError::OrderMismatch {
            position: labeled.len(),
            expected: expected[labeled.len()].text().to_string(),
            got: String::new(),
        });
    }
    Ok(ConceptSet::new(labeled, concepts.k_mode()).expect("same shape as input"))
}

/// Asks the chat model to label each concept as affirmed or negated.
pub fn label_polarity<C: ChatClient + ?Sized>(
    stem: &str,
    concepts: &ConceptSet,
    client: &C,
    model_id: &str,
) -> Result<ConceptSet, LabelError> {
    let response = client.complete(&labeling_request(stem, concepts, model_id))?;
    parse_polarity(&response, concepts)
}
