//! Versioned prompt templates and a single-pass placeholder renderer.

use crate::model::KMode;

pub const PROMPT_VERSION: &str = "v1";

pub const EXTRACT_SYSTEM_K5: &str = include_str!("../../prompts/v1/extract_system_k5.txt");
pub const EXTRACT_SYSTEM_UNRESTRICTED: &str =
    include_str!("../../prompts/v1/extract_system_unrestricted.txt");
pub const EXTRACT_USER_K5: &str = include_str!("../../prompts/v1/extract_user_k5.txt");
pub const EXTRACT_USER_UNRESTRICTED: &str =
    include_str!("../../prompts/v1/extract_user_unrestricted.txt");
pub const LABEL_SYSTEM: &str = include_str!("../../prompts/v1/label_system.txt");
pub const LABEL_USER: &str = include_str!("../../prompts/v1/label_user.txt");

/// Number of concepts requested in fixed-k mode.
pub const FIXED_K: usize = 5;

/// Replaces `{name}` placeholders in one left-to-right pass.
///
/// Substituted values are never rescanned, so a stem that happens to contain
/// `{n}` is passed through verbatim. Unknown placeholders are left as-is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn extraction_system(k_mode: KMode) -> &'static str {
    match k_mode {
        KMode::FixedFive => EXTRACT_SYSTEM_K5,
        KMode::Unrestricted => EXTRACT_SYSTEM_UNRESTRICTED,
    }
}

pub fn extraction_user(k_mode: KMode, cleaned_question: &str) -> String {
    match k_mode {
        KMode::FixedFive => render(
            EXTRACT_USER_K5,
            &[
                ("n", &FIXED_K.to_string()),
                ("cleaned_question", cleaned_question),
            ],
        ),
        KMode::Unrestricted => render(
            EXTRACT_USER_UNRESTRICTED,
            &[("cleaned_question", cleaned_question)],
        ),
    }
}

pub fn labeling_user<'a>(question_text: &str, keywords: impl IntoIterator<Item = &'a str>) -> String {
    let keywords = keywords.into_iter().collect::<Vec<_>>().join(", ");
    render(
        LABEL_USER,
        &[("question_text", question_text), ("keywords", &keywords)],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_single_pass() {
        assert_eq!(render("a {x} b", &[("x", "{x}")]), "a {x} b");
        assert_eq!(render("{y}{x}", &[("x", "1")]), "{y}1");
        assert_eq!(render("{", &[]), "{");
        assert_eq!(render("}{n}", &[("n", "5")]), "}5");
    }

    #[test]
    fn unrestricted_omits_count() {
        let k5 = extraction_user(KMode::FixedFive, "P");
        let free = extraction_user(KMode::Unrestricted, "P");
        assert!(k5.starts_with("Given the passage below, list exactly 5 canonical"));
        assert!(k5.contains("list of exactly 5 concepts"));
        assert!(!free.contains("exactly"));
        assert!(!EXTRACT_SYSTEM_UNRESTRICTED.contains("five"));
        assert!(k5.ends_with("Passage:\nP"));
        assert!(free.ends_with("Passage:\nP"));
    }

    #[test]
    fn label_templates() {
        let u = labeling_user("Q?", ["fever", "rash"]);
        assert!(u.contains("KEEP ORDER):\nfever, rash\n\n"));
        // Trailing spaces in the strict-format block are part of the template.
        assert!(LABEL_SYSTEM.contains("comma+space, \n"));
        assert!(LABEL_SYSTEM.contains(": negative\". \n"));
    }
}
