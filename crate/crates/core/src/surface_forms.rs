//! Case and leading-space variants of a phrase.
//!
//! Token-based count services see `"Fever"`, `"fever"` and `" fever"` as
//! different token sequences, so every diagnosis and concept is expanded into
//! its surface forms before it is counted and the forms are OR-ed together.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SurfaceFormError {
    #[error("cannot expand an empty string")]
    EmptyInput,
    #[error("`{0}` has leading or trailing whitespace")]
    UntrimmedInput(String),
}

/// Distinct surface forms of one source phrase, in emission order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantSet {
    source: String,
    variants: Vec<String>,
}

impl VariantSet {
    /// Builds a set from explicit literals, dropping exact duplicates while
    /// keeping first-occurrence order. Used for query planning over
    /// arbitrary literal groups.
    pub fn from_literals(
        source: impl Into<String>,
        literals: impl IntoIterator<Item = String>,
    ) -> Result<Self, SurfaceFormError> {
        let mut variants: Vec<String> = Vec::new();
        for lit in literals {
            if lit.is_empty() {
                return Err(SurfaceFormError::EmptyInput);
            }
            if !variants.contains(&lit) {
                variants.push(lit);
            }
        }
        if variants.is_empty() {
            return Err(SurfaceFormError::EmptyInput);
        }
        Ok(VariantSet {
            source: source.into(),
            variants,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn variants(&self) -> &[String] {
        &self.variants
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }
}

/// Uppercases the first character and leaves the rest untouched. Non-letters
/// pass through unchanged.
pub fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Expands `source` into original, lowercase and first-letter-capitalized
/// forms, each with and without a leading space, deduplicated in that order.
pub fn expand_variants(source: &str) -> Result<VariantSet, SurfaceFormError> {
    if source.is_empty() {
        return Err(SurfaceFormError::EmptyInput);
    }
    if source.trim() != source {
        return Err(SurfaceFormError::UntrimmedInput(source.to_string()));
    }
    let lower = source.to_lowercase();
    let capitalized = capitalize_first(&lower);
    let mut forms = Vec::with_capacity(6);
    for form in [source.to_string(), lower, capitalized] {
        let spaced = format!(" {form}");
        forms.push(form);
        forms.push(spaced);
    }
    VariantSet::from_literals(source, forms)
}
