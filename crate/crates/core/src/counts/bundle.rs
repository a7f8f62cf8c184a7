use thiserror::Error;

use crate::model::{ConceptSet, CountBundle, OptionCounts, Question};
use crate::query_plan::{evaluate_plan, plan_pair_count, plan_unary_count, PlanError, PlanOptions};
use crate::surface_forms::{expand_variants, SurfaceFormError, VariantSet};

use super::CountBackend;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("cannot expand `{text}`: {source}")]
    SurfaceForm {
        text: String,
        #[source]
        source: SurfaceFormError,
    },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

fn variants(text: &str) -> Result<VariantSet, BundleError> {
    expand_variants(text.trim()).map_err(|source| BundleError::SurfaceForm {
        text: text.to_string(),
        source,
    })
}

/// Gathers `C(d)` and every `C(d, x_i)` for one question.
///
/// Pair counts are collected for all concepts regardless of polarity so any
/// negation mode can be applied later. The corpus id in `opts` is replaced by
/// the backend's.
pub fn collect_bundle<B: CountBackend + ?Sized>(
    question: &Question,
    concepts: &ConceptSet,
    backend: &B,
    opts: &PlanOptions,
) -> Result<CountBundle, BundleError> {
    let meta = backend.corpus_meta();
    let opts = PlanOptions {
        corpus_id: meta.corpus_id.clone(),
        ..opts.clone()
    };
    let concept_variants = concepts
        .texts()
        .map(variants)
        .collect::<Result<Vec<_>, _>>()?;

    let mut options = Vec::with_capacity(question.options.len());
    for option in &question.options {
        let diag = variants(option)?;
        let diagnosis_count = evaluate_plan(&plan_unary_count(&diag, &opts)?, backend)?.into();
        let pair_counts = concept_variants
            .iter()
            .map(|cv| Ok(evaluate_plan(&plan_pair_count(&diag, cv, &opts)?, backend)?.into()))
            .collect::<Result<Vec<_>, PlanError>>()?;
        options.push(OptionCounts {
            diagnosis: option.clone(),
            diagnosis_count,
            pair_counts,
        });
    }
    Ok(CountBundle {
        question_id: question.id.clone(),
        concepts: concepts.texts().map(String::from).collect(),
        options,
        corpus: meta,
    })
}
