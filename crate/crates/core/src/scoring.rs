//! Naive-Bayes scoring of the answer options.
//!
//! For option `d` with corpus count `C(d)` and adjusted pair counts
//! `C'(d, x_i)` over the `k'` concepts that take part in scoring,
//!
//! ```text
//! S_d = Σ_i log(C'(d, x_i) + δ) - (k' - 1) · log(C(d) + δ)
//! ```
//!
//! which is the log of `Π_i P(x_i | d) · P(d)` with Laplace-smoothed
//! frequency estimates, up to terms that are the same for every option. The
//! prediction is the option with the highest score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ConceptSet, CountBundle, NegationMode, Polarity, Question, RankingResult, NUM_OPTIONS,
};

/// Scores closer than this are treated as tied, so exact ties survive
/// floating-point rounding in the log sums.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("smoothing constant must be positive and finite, got {0}")]
    InvalidDelta(f64),
    #[error("count bundle does not match question: {0}")]
    BundleMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub delta: f64,
    pub mode: NegationMode,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            delta: 1.0,
            mode: NegationMode::IgnoreNegated,
        }
    }
}

impl ScoringConfig {
    pub fn new(delta: f64, mode: NegationMode) -> Result<Self, ScoringError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(ScoringError::InvalidDelta(delta));
        }
        Ok(ScoringConfig { delta, mode })
    }
}

/// `C'(d, x)` for one concept, or `None` when the concept is left out.
pub fn adjusted_pair_count(
    mode: NegationMode,
    polarity: Polarity,
    c_d: u64,
    c_dx: u64,
) -> Option<u64> {
    match (mode, polarity) {
        (_, Polarity::Affirmed) | (NegationMode::PolarityAgnostic, _) => Some(c_dx),
        (NegationMode::IgnoreNegated, Polarity::Negated) => None,
        (NegationMode::RewardAbsence, Polarity::Negated) => Some(c_d.saturating_sub(c_dx)),
    }
}

/// `S_d` for one option. With no included concepts this is `log(C(d) + δ)`.
///
/// The pair terms are summed in ascending count order so that options whose
/// counts are permutations of each other get bitwise-equal scores.
pub fn score_option(c_d: u64, included: &[u64], delta: f64) -> f64 {
    let mut sorted = included.to_vec();
    sorted.sort_unstable();
    let pair_sum: f64 = sorted.iter().map(|&c| (c as f64 + delta).ln()).sum();
    let k = included.len() as f64;
    pair_sum - (k - 1.0) * (c_d as f64 + delta).ln()
}

/// Softmax of the scores, computed after subtracting the maximum.
pub fn softmax(scores: &[f64; NUM_OPTIONS]) -> [f64; NUM_OPTIONS] {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = scores.map(|s| (s - max).exp());
    let total: f64 = exps.iter().sum();
    exps.map(|e| e / total)
}

/// Option indices from best to worst.
///
/// Scores are sorted descending; runs within [`TIE_TOLERANCE`] of the run's
/// top score are then reordered by option index.
pub fn rank_order(scores: &[f64; NUM_OPTIONS]) -> [usize; NUM_OPTIONS] {
    let mut order: [usize; NUM_OPTIONS] = std::array::from_fn(|i| i);
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut start = 0;
    while start < NUM_OPTIONS {
        let lead = scores[order[start]];
        let mut end = start + 1;
        while end < NUM_OPTIONS && lead - scores[order[end]] <= TIE_TOLERANCE {
            end += 1;
        }
        order[start..end].sort_unstable();
        start = end;
    }
    order
}

/// Builds a ranking from five precomputed scores.
pub fn rank_scores(
    question_id: &str,
    scores: [f64; NUM_OPTIONS],
    config: &ScoringConfig,
) -> RankingResult {
    let order = rank_order(&scores);
    let mut ranks = [0u8; NUM_OPTIONS];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r as u8 + 1;
    }
    let softmax_top1 = softmax(&scores).into_iter().fold(0.0, f64::max);
    RankingResult {
        question_id: question_id.to_string(),
        scores,
        predicted_index: order[0],
        ranks,
        gold_rank: 0,
        softmax_top1,
        scoring_mode: config.mode,
        delta: config.delta,
    }
}

/// Scores all five options of a bundle under `config`.
pub fn rank_options(
    bundle: &CountBundle,
    concepts: &ConceptSet,
    config: &ScoringConfig,
) -> Result<RankingResult, ScoringError> {
    if bundle.options.len() != NUM_OPTIONS {
        return Err(ScoringError::BundleMismatch(format!(
            "{} options in bundle",
            bundle.options.len()
        )));
    }
    if !bundle.concepts.iter().map(String::as_str).eq(concepts.texts()) {
        return Err(ScoringError::BundleMismatch(format!(
            "bundle concepts {:?} differ from extracted concepts",
            bundle.concepts
        )));
    }
    let mut scores = [0.0; NUM_OPTIONS];
    for (score, opt) in scores.iter_mut().zip(&bundle.options) {
        if opt.pair_counts.len() != concepts.k() {
            return Err(ScoringError::BundleMismatch(format!(
                "option {:?} has {} pair counts for {} concepts",
                opt.diagnosis,
                opt.pair_counts.len(),
                concepts.k()
            )));
        }
        let c_d = opt.diagnosis_count.value;
        let included: Vec<u64> = concepts
            .concepts()
            .iter()
            .zip(&opt.pair_counts)
            .filter_map(|(c, pc)| adjusted_pair_count(config.mode, c.polarity(), c_d, pc.value))
            .collect();
        *score = score_option(c_d, &included, config.delta);
    }
    Ok(rank_scores(&bundle.question_id, scores, config))
}

/// [`rank_options`] plus id and option checks against the question, with
/// the gold rank filled in.
pub fn rank_question(
    question: &Question,
    bundle: &CountBundle,
    concepts: &ConceptSet,
    config: &ScoringConfig,
) -> Result<RankingResult, ScoringError> {
    if bundle.question_id != question.id {
        return Err(ScoringError::BundleMismatch(format!(
            "bundle for {} used with question {}",
            bundle.question_id, question.id
        )));
    }
    if !bundle
        .options
        .iter()
        .map(|o| o.diagnosis.as_str())
        .eq(question.options.iter().map(String::as_str))
    {
        return Err(ScoringError::BundleMismatch(format!(
            "option texts differ for {}",
            question.id
        )));
    }
    Ok(rank_options(bundle, concepts, config)?.with_gold(question.gold_index))
}
