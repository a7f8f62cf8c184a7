//! Dataset ingestion and the diagnosis-question subset filter.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_question, Question, RawRecord, ValidationError};

/// The two query phrasings that define the diagnosis subset, lowercased.
pub const DIAGNOSIS_PHRASINGS: [&str; 2] = [
    "which of the following is the most likely diagnosis?",
    "what is the most likely diagnosis?",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no sentence boundary before the final sentence")]
    NoSentenceBoundary,
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: ValidationError,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '?' | '!' | '\n')
}

/// Splits `stem` into `(body, final_sentence)`.
///
/// The final sentence starts after the last terminator (`.`, `?`, `!` or a
/// line break) that precedes it; terminators at the very end belong to the
/// final sentence itself. Both parts are trimmed.
pub fn sentence_split_last(stem: &str) -> Result<(String, String), DatasetError> {
    let s = stem.trim();
    let core = s.trim_end_matches(is_terminator);
    match core.rfind(is_terminator) {
        Some(idx) => {
            let body = s[..=idx].trim().to_string();
            let last = s[idx + 1..].trim().to_string();
            Ok((body, last))
        }
        None => Err(DatasetError::NoSentenceBoundary),
    }
}

/// Like [`sentence_split_last`], but treats a stem without a boundary as a
/// single final sentence with an empty body.
pub fn split_or_whole(stem: &str) -> (String, String) {
    sentence_split_last(stem).unwrap_or_else(|_| (String::new(), stem.trim().to_string()))
}

/// Lowercases and collapses whitespace runs so phrasings compare robustly.
pub fn normalize_query(sentence: &str) -> String {
    sentence
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Index into [`DIAGNOSIS_PHRASINGS`] of the phrasing `sentence` matches.
pub fn diagnosis_phrasing(sentence: &str) -> Option<usize> {
    let norm = normalize_query(sentence);
    DIAGNOSIS_PHRASINGS.iter().position(|p| *p == norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NotDiagnosisQuery,
}

/// Tally produced by [`filter_diagnosis_subset`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub input: usize,
    pub kept: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    /// Kept questions per phrasing, in [`DIAGNOSIS_PHRASINGS`] order.
    pub by_phrasing: [usize; 2],
}

impl FilterSummary {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

/// Keeps questions whose final sentence is one of the two diagnosis
/// phrasings. Order is preserved; kept questions already have the query
/// sentence stripped from their stem.
pub fn filter_diagnosis_subset(questions: Vec<Question>) -> (Vec<Question>, FilterSummary) {
    let mut summary = FilterSummary {
        input: questions.len(),
        ..Default::default()
    };
    let kept: Vec<Question> = questions
        .into_iter()
        .filter(|q| match diagnosis_phrasing(&q.query_sentence) {
            Some(p) => {
                summary.by_phrasing[p] += 1;
                true
            }
            None => {
                *summary.dropped.entry(DropReason::NotDiagnosisQuery).or_default() += 1;
                false
            }
        })
        .collect();
    summary.kept = kept.len();
    (kept, summary)
}

/// Reads line-delimited records; blank lines are skipped. Errors name the
/// 1-based line number.
pub fn read_records(reader: impl BufRead) -> Result<Vec<RawRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads and validates records into questions.
pub fn read_questions(reader: impl BufRead) -> Result<Vec<(RawRecord, Question)>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
            line: i + 1,
            source,
        })?;
        let q = validate_question(&rec).map_err(|source| DatasetError::Invalid {
            line: i + 1,
            source,
        })?;
        out.push((rec, q));
    }
    Ok(out)
}

/// Converts one line of the original MedQA release (`question`, `options`,
/// `answer_idx`, `meta_info` of `step1` / `step2&3`, no id) into the
/// documented record schema. `line` (1-based) becomes the id.
pub fn medqa_to_record(line: usize, value: serde_json::Value) -> Result<RawRecord, DatasetError> {
    let mut rec: RawRecord =
        serde_json::from_value(value).map_err(|source| DatasetError::Parse { line, source })?;
    if rec.id.is_none() {
        rec.id = Some(format!("medqa-{line}"));
    }
    if let Some(serde_json::Value::String(idx)) = rec.extra.remove("answer_idx") {
        if let Some(text) = rec.answer.replace(idx) {
            rec.extra
                .insert("answer_text".into(), serde_json::Value::String(text));
        }
    }
    if let Some(serde_json::Value::String(info)) = rec.extra.get("meta_info") {
        let step = match info.as_str() {
            "step1" => Some("1"),
            "step2&3" => Some("2/3"),
            _ => None,
        };
        if let Some(step) = step {
            rec.meta.get_or_insert_with(Default::default).step = Some(step.into());
        }
    }
    Ok(rec)
}

/// [`read_questions`] for files in the original MedQA layout.
pub fn read_medqa_questions(
    reader: impl BufRead,
) -> Result<Vec<(RawRecord, Question)>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
            line: i + 1,
            source,
        })?;
        let rec = medqa_to_record(i + 1, value)?;
        let q = validate_question(&rec).map_err(|source| DatasetError::Invalid {
            line: i + 1,
            source,
        })?;
        out.push((rec, q));
    }
    Ok(out)
}

/// The subset output record: the input record plus `stem_stripped` and
/// `query_sentence`.
pub fn subset_record(raw: &RawRecord, q: &Question) -> RawRecord {
    let mut rec = raw.clone();
    rec.extra
        .insert("stem_stripped".into(), serde_json::Value::String(q.stem.clone()));
    rec.extra.insert(
        "query_sentence".into(),
        serde_json::Value::String(q.query_sentence.clone()),
    );
    rec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medqa_layout() {
        let line = r#"{"question": "A man has pain. What is the most likely diagnosis?", "answer": "Gout", "options": {"A": "Gout", "B": "Lupus", "C": "Sepsis", "D": "Cellulitis", "E": "Trauma"}, "meta_info": "step2&3", "answer_idx": "A"}"#;
        let qs = read_medqa_questions(format!("\n{line}\n").as_bytes()).unwrap();
        let (rec, q) = &qs[0];
        assert_eq!(q.id, "medqa-2");
        assert_eq!(q.gold_index, 0);
        assert_eq!(q.step_domain, StepDomain::Step23);
        assert_eq!(rec.extra["answer_text"], "Gout");
    }
    use crate::model::StepDomain;

    fn q(id: &str, text: &str) -> Question {
        let (stem, query_sentence) = split_or_whole(text);
        Question {
            id: id.into(),
            stem,
            query_sentence,
            options: ["a", "b", "c", "d", "e"].map(String::from),
            gold_index: 0,
            step_domain: StepDomain::Unknown,
        }
    }

    #[test]
    fn split_at_last_period() {
        let (body, last) = sentence_split_last(
            "A 70-year-old man has bloody stool. Occult blood is positive. Which of the following is the most likely diagnosis?",
        )
        .unwrap();
        assert_eq!(body, "A 70-year-old man has bloody stool. Occult blood is positive.");
        assert_eq!(last, "Which of the following is the most likely diagnosis?");
    }

    #[test]
    fn lone_question_has_empty_body() {
        assert!(matches!(
            sentence_split_last("What is the most likely diagnosis?"),
            Err(DatasetError::NoSentenceBoundary)
        ));
        let (body, last) = split_or_whole("What is the most likely diagnosis?");
        assert_eq!(body, "");
        assert_eq!(last, "What is the most likely diagnosis?");
    }

    #[test]
    fn abbreviation_before_final_question() {
        let (body, last) = sentence_split_last(
            "She was referred by Dr. Smith for fatigue. What is the most likely diagnosis?",
        )
        .unwrap();
        assert_eq!(body, "She was referred by Dr. Smith for fatigue.");
        assert_eq!(last, "What is the most likely diagnosis?");
    }

    #[test]
    fn line_break_is_a_boundary() {
        let (_, last) =
            sentence_split_last("Laboratory studies show:\nHemoglobin 11 g/dL\nWhich of the following is the most likely diagnosis?")
                .unwrap();
        assert_eq!(last, "Which of the following is the most likely diagnosis?");
    }

    #[test]
    fn filter_keeps_both_phrasings() {
        let qs = vec![
            q("1", "Fever and rash. Which of the following is the most likely diagnosis?"),
            q("2", "Chest pain. What is the next best step in management?"),
            q("3", "Cough.   What  is the most likely   DIAGNOSIS?  "),
        ];
        let (kept, summary) = filter_diagnosis_subset(qs);
        assert_eq!(kept.iter().map(|q| q.id.as_str()).collect::<Vec<_>>(), ["1", "3"]);
        assert_eq!(kept[0].stem, "Fever and rash.");
        assert_eq!(summary.kept, 2);
        assert_eq!(summary.dropped_total(), 1);
        assert_eq!(summary.by_phrasing, [1, 1]);
    }

    #[test]
    fn filter_is_idempotent() {
        let qs = vec![
            q("1", "Fever. Which of the following is the most likely diagnosis?"),
            q("2", "Chest pain. What is the next best step in management?"),
        ];
        let (once, _) = filter_diagnosis_subset(qs);
        let (twice, s2) = filter_diagnosis_subset(once.clone());
        assert_eq!(once, twice);
        assert_eq!(s2.dropped_total(), 0);
    }

    #[test]
    fn read_records_reports_line() {
        let input = "{\"id\":\"1\"}\n\nnot json\n";
        match read_records(input.as_bytes()) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
