//! Zero-shot multiple-choice diagnosis ranking from corpus co-occurrence counts.

pub mod counts;
pub mod dataset;
pub mod model;
pub mod oracle;
pub mod query_plan;
pub mod scoring;
pub mod surface_forms;
pub mod extraction;
pub mod artifacts;
pub mod evaluation;
pub mod pipeline;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/surface-forms.md")]
    mod surface_forms {}
    #[doc = include_str!("../../../book/src/counting.md")]
    mod counting {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/extraction.md")]
    mod extraction {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
