//! Shared domain types: questions, concepts, count bundles and ranking results.
//!
//! Everything here is immutable once constructed and validated, so values can
//! be shared freely across worker threads.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::split_or_whole;

/// Number of answer options per question.
pub const NUM_OPTIONS: usize = 5;

/// Option letters in answer-key order.
pub const OPTION_LETTERS: [char; NUM_OPTIONS] = ['A', 'B', 'C', 'D', 'E'];

/// Longest concept phrase accepted, in whitespace-separated words.
pub const MAX_CONCEPT_WORDS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidationError {
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("expected 5 options, found {0}")]
    OptionCountNotFive(usize),
    #[error("gold answer `{0}` is not one of A-E")]
    GoldIndexOutOfRange(String),
    #[error("options {0} and {1} are identical after lowercasing")]
    DuplicateOptions(char, char),
    #[error("option {0} is empty")]
    EmptyOption(char),
    #[error("concept `{0}` is empty")]
    EmptyConcept(String),
    #[error("concept `{0}` is not lowercase")]
    ConceptNotLowercase(String),
    #[error("concept `{0}` contains a comma")]
    ConceptHasComma(String),
    #[error("concept `{text}` has {words} words (max 4)")]
    ConceptTooLong { text: String, words: usize },
    #[error("concept set is empty")]
    EmptyConceptSet,
    #[error("fixed-five concept set has {0} concepts")]
    NotFiveConcepts(usize),
}

/// Licensing-exam domain of a question, read from input metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StepDomain {
    Step1,
    Step23,
    Unknown,
}

impl StepDomain {
    /// Parses the `meta.step` field. Anything other than `"1"` or `"2/3"` is unknown.
    pub fn from_meta(raw: Option<&str>) -> Self {
        match raw.map(str::trim) {
            Some("1") => StepDomain::Step1,
            Some("2/3") => StepDomain::Step23,
            _ => StepDomain::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StepDomain::Step1 => "step1",
            StepDomain::Step23 => "step2/3",
            StepDomain::Unknown => "unknown",
        }
    }
}

/// One line of a dataset file, before validation.
///
/// Field names are part of the on-disk schema. Extra fields (such as the
/// `stem_stripped` / `query_sentence` columns written by the subset filter)
/// are preserved in `extra` so records round-trip through the filter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<RecordMeta>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// A validated five-option multiple-choice item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    /// Clinical vignette with the trailing query sentence removed.
    pub stem: String,
    pub query_sentence: String,
    pub options: [String; NUM_OPTIONS],
    pub gold_index: usize,
    pub step_domain: StepDomain,
}

impl Question {
    pub fn gold_letter(&self) -> char {
        OPTION_LETTERS[self.gold_index]
    }
}

/// Maps `A`..`E` (case-insensitive) to `0..5`.
pub fn letter_to_index(letter: &str) -> Option<usize> {
    let mut chars = letter.trim().chars();
    let c = chars.next()?.to_ascii_uppercase();
    if chars.next().is_some() {
        return None;
    }
    OPTION_LETTERS.iter().position(|&l| l == c)
}

/// Validates a raw dataset record into a [`Question`].
///
/// The full question text is split at its last sentence boundary: the final
/// sentence becomes `query_sentence` and the remainder becomes `stem`.
pub fn validate_question(raw: &RawRecord) -> Result<Question, ValidationError> {
    let id = raw
        .id
        .as_deref()
        .ok_or(ValidationError::MissingField("id"))?;
    let text = raw
        .question
        .as_deref()
        .filter(|q| !q.trim().is_empty())
        .ok_or(ValidationError::MissingField("question"))?;
    let options = raw
        .options
        .as_ref()
        .ok_or(ValidationError::MissingField("options"))?;
    let answer = raw
        .answer
        .as_deref()
        .ok_or(ValidationError::MissingField("answer"))?;

    if options.len() != NUM_OPTIONS {
        return Err(ValidationError::OptionCountNotFive(options.len()));
    }
    let mut texts: [String; NUM_OPTIONS] = Default::default();
    for (i, letter) in OPTION_LETTERS.iter().enumerate() {
        let key = letter.to_string();
        // Five keys that are not exactly A-E still count as a bad option set.
        let text = options
            .get(&key)
            .ok_or(ValidationError::OptionCountNotFive(options.len()))?;
        let text = text.trim();
        if text.is_empty() {
            return Err(ValidationError::EmptyOption(*letter));
        }
        texts[i] = text.to_string();
    }
    for i in 0..NUM_OPTIONS {
        for j in (i + 1)..NUM_OPTIONS {
            if texts[i].to_lowercase() == texts[j].to_lowercase() {
                return Err(ValidationError::DuplicateOptions(
                    OPTION_LETTERS[i],
                    OPTION_LETTERS[j],
                ));
            }
        }
    }
    let gold_index = letter_to_index(answer)
        .ok_or_else(|| ValidationError::GoldIndexOutOfRange(answer.to_string()))?;

    let (stem, query_sentence) = split_or_whole(text);
    Ok(Question {
        id: id.to_string(),
        stem,
        query_sentence,
        options: texts,
        gold_index,
        step_domain: StepDomain::from_meta(raw.meta.as_ref().and_then(|m| m.step.as_deref())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Affirmed,
    Negated,
}

/// A short clinical phrase extracted from a vignette.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ConceptRepr", into = "ConceptRepr")]
pub struct Concept {
    text: String,
    polarity: Polarity,
}

#[derive(Serialize, Deserialize)]
struct ConceptRepr {
    text: String,
    polarity: Polarity,
}

impl TryFrom<ConceptRepr> for Concept {
    type Error = ValidationError;
    fn try_from(r: ConceptRepr) -> Result<Self, Self::Error> {
        Concept::new(r.text, r.polarity)
    }
}

impl From<Concept> for ConceptRepr {
    fn from(c: Concept) -> Self {
        ConceptRepr {
            text: c.text,
            polarity: c.polarity,
        }
    }
}

impl Concept {
    pub fn new(text: impl Into<String>, polarity: Polarity) -> Result<Self, ValidationError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ValidationError::EmptyConcept(text));
        }
        if text.contains(',') {
            return Err(ValidationError::ConceptHasComma(text));
        }
        if text.to_lowercase() != text {
            return Err(ValidationError::ConceptNotLowercase(text));
        }
        let words = text.split_whitespace().count();
        if words > MAX_CONCEPT_WORDS {
            return Err(ValidationError::ConceptTooLong { text, words });
        }
        Ok(Concept { text, polarity })
    }

    pub fn affirmed(text: impl Into<String>) -> Result<Self, ValidationError> {
        Concept::new(text, Polarity::Affirmed)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn with_polarity(&self, polarity: Polarity) -> Self {
        Concept {
            text: self.text.clone(),
            polarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KMode {
    FixedFive,
    Unrestricted,
}

/// Ordered concepts extracted for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ConceptSetRepr", into = "ConceptSetRepr")]
pub struct ConceptSet {
    concepts: Vec<Concept>,
    k_mode: KMode,
}

#[derive(Serialize, Deserialize)]
struct ConceptSetRepr {
    concepts: Vec<Concept>,
    k_mode: KMode,
}

impl TryFrom<ConceptSetRepr> for ConceptSet {
    type Error = ValidationError;
    fn try_from(r: ConceptSetRepr) -> Result<Self, Self::Error> {
        ConceptSet::new(r.concepts, r.k_mode)
    }
}

impl From<ConceptSet> for ConceptSetRepr {
    fn from(c: ConceptSet) -> Self {
        ConceptSetRepr {
            concepts: c.concepts,
            k_mode: c.k_mode,
        }
    }
}

impl ConceptSet {
    pub fn new(concepts: Vec<Concept>, k_mode: KMode) -> Result<Self, ValidationError> {
        if concepts.is_empty() {
            return Err(ValidationError::EmptyConceptSet);
        }
        if k_mode == KMode::FixedFive && concepts.len() != 5 {
            return Err(ValidationError::NotFiveConcepts(concepts.len()));
        }
        Ok(ConceptSet { concepts, k_mode })
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn k(&self) -> usize {
        self.concepts.len()
    }

    pub fn k_mode(&self) -> KMode {
        self.k_mode
    }

    pub fn negated_count(&self) -> usize {
        self.concepts
            .iter()
            .filter(|c| c.polarity == Polarity::Negated)
            .count()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.concepts.iter().map(|c| c.text.as_str())
    }
}

/// A corpus count together with how trustworthy it is.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub value: u64,
    /// The backend reported (or we inferred) an estimate rather than an exact count.
    pub approx: bool,
    /// A signed inclusion-exclusion sum went negative and was clamped to zero.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
}

impl Count {
    pub fn exact(value: u64) -> Self {
        Count {
            value,
            approx: false,
            clamped: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub corpus_id: String,
    pub total_tokens: u64,
    pub total_docs: u64,
}

/// Counts for one answer option: `C(d)` and one `C(d, x_i)` per concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionCounts {
    pub diagnosis: String,
    pub diagnosis_count: Count,
    pub pair_counts: Vec<Count>,
}

/// All counts needed to score one question.
///
/// `C(d, x) <= C(d)` is deliberately not enforced: unary counts are
/// occurrence-level while remote pair counts are window-limited estimates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountBundle {
    pub question_id: String,
    /// Concept texts the pair counts are aligned with.
    pub concepts: Vec<String>,
    pub options: Vec<OptionCounts>,
    pub corpus: CorpusMeta,
}

impl CountBundle {
    pub fn approx_count(&self) -> usize {
        self.options
            .iter()
            .flat_map(|o| std::iter::once(&o.diagnosis_count).chain(&o.pair_counts))
            .filter(|c| c.approx)
            .count()
    }

    pub fn total_count(&self) -> usize {
        self.options.iter().map(|o| 1 + o.pair_counts.len()).sum()
    }
}

/// How negated concepts enter the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NegationMode {
    /// Negated concepts are left out entirely.
    IgnoreNegated,
    /// Polarity labels are disregarded.
    PolarityAgnostic,
    /// Negated concepts contribute `C(d) - C(d, x)`.
    RewardAbsence,
}

impl NegationMode {
    pub const ALL: [NegationMode; 3] = [
        NegationMode::IgnoreNegated,
        NegationMode::PolarityAgnostic,
        NegationMode::RewardAbsence,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            NegationMode::IgnoreNegated => "ignore",
            NegationMode::PolarityAgnostic => "agnostic",
            NegationMode::RewardAbsence => "reward",
        }
    }
}

impl fmt::Display for NegationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for NegationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ignore" => Ok(NegationMode::IgnoreNegated),
            "agnostic" => Ok(NegationMode::PolarityAgnostic),
            "reward" => Ok(NegationMode::RewardAbsence),
            other => Err(format!(
                "unknown negation mode `{other}` (expected ignore, agnostic or reward)"
            )),
        }
    }
}

/// Scores and ranks for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub question_id: String,
    pub scores: [f64; NUM_OPTIONS],
    pub predicted_index: usize,
    /// `ranks[i]` is the 1-based rank of option `i`.
    pub ranks: [u8; NUM_OPTIONS],
    /// Rank of the gold option, or 0 when the gold answer is not known.
    pub gold_rank: u8,
    pub softmax_top1: f64,
    pub scoring_mode: NegationMode,
    pub delta: f64,
}

impl RankingResult {
    /// Returns a copy with `gold_rank` filled in from the gold option index.
    pub fn with_gold(mut self, gold_index: usize) -> Self {
        self.gold_rank = self.ranks.get(gold_index).copied().unwrap_or(0);
        self
    }
}
