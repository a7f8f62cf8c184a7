//! Three-tier answer extraction from free-text LLM responses.

use serde::{Deserialize, Serialize};

use crate::model::{NUM_OPTIONS, OPTION_LETTERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tier {
    StrictLetter,
    PhraseFallback,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmPrediction {
    pub question_id: String,
    pub raw_response: String,
    pub extracted_index: Option<usize>,
    pub tier: Tier,
}

impl LlmPrediction {
    pub fn from_response(
        question_id: impl Into<String>,
        raw_response: impl Into<String>,
        options: &[String; NUM_OPTIONS],
    ) -> Self {
        let raw_response = raw_response.into();
        let (extracted_index, tier) = extract_answer(&raw_response, options);
        LlmPrediction {
            question_id: question_id.into(),
            raw_response,
            extracted_index,
            tier,
        }
    }
}

/// Distinct stand-alone option letters, in order of first appearance.
///
/// A letter counts when it is a capital A–E with no alphanumeric neighbour on
/// either side, so `B:`, `(C)`, `D)` and a bare `A` match but `BMI` or `Ab`
/// do not.
pub fn standalone_letters(text: &str) -> Vec<usize> {
    let chars: Vec<char> = text.chars().collect();
    let mut found = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        let Some(idx) = OPTION_LETTERS.iter().position(|&l| l == c) else {
            continue;
        };
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1).copied();
        let alone = |n: Option<char>| n.is_none_or(|n| !n.is_alphanumeric());
        if alone(before) && alone(after) && !found.contains(&idx) {
            found.push(idx);
        }
    }
    found
}

/// Lowercase; every run of non-alphanumerics becomes one space; trimmed.
pub fn normalize_phrase(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Maps a response to an option index.
///
/// Tier 1 takes the letter when exactly one distinct stand-alone letter
/// occurs. With several distinct letters, tier 2 accepts an option only if
/// its normalized phrase occurs and no other option's does. Anything else is
/// `Failed` (including responses with no letter at all).
pub fn extract_answer(raw_response: &str, options: &[String; NUM_OPTIONS]) -> (Option<usize>, Tier) {
    let letters = standalone_letters(raw_response);
    match letters.len() {
        1 => return (Some(letters[0]), Tier::StrictLetter),
        0 => return (None, Tier::Failed),
        _ => {}
    }
    let text = format!(" {} ", normalize_phrase(raw_response));
    let mut hits = options.iter().enumerate().filter(|(_, opt)| {
        let phrase = normalize_phrase(opt);
        !phrase.is_empty() && text.contains(&format!(" {phrase} "))
    });
    match (hits.next(), hits.next()) {
        (Some((i, _)), None) => (Some(i), Tier::PhraseFallback),
        _ => (None, Tier::Failed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> [String; 5] {
        [
            "Colorectal carcinoma",
            "Diverticulosis",
            "Ischemic colitis",
            "Hemorrhoids",
            "Pseudomembranous colitis",
        ]
        .map(String::from)
    }

    #[test]
    fn tiers() {
        let o = opts();
        assert_eq!(
            extract_answer("B: Diverticulosis\n\nExplanation: ...", &o),
            (Some(1), Tier::StrictLetter)
        );
        assert_eq!(extract_answer("A", &o), (Some(0), Tier::StrictLetter));
        assert_eq!(extract_answer("C) ... so C.", &o), (Some(2), Tier::StrictLetter));
        assert_eq!(
            extract_answer(
                "Both A and C seem plausible, but the presentation is classic diverticulosis.",
                &o
            ),
            (Some(1), Tier::PhraseFallback)
        );
        assert_eq!(extract_answer("A or B, colitis either way", &o), (None, Tier::Failed));
        assert_eq!(extract_answer("I don't know", &o), (None, Tier::Failed));
        assert_eq!(extract_answer("BMI is high", &o), (None, Tier::Failed));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_phrase("  Ischemic-colitis!!  X "), "ischemic colitis x");
        assert_eq!(normalize_phrase("..."), "");
    }

    #[test]
    fn prediction_invariant() {
        let p = LlmPrediction::from_response("q", "nothing", &opts());
        assert_eq!(p.tier == Tier::Failed, p.extracted_index.is_none());
    }
}
