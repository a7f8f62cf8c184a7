//! Brute-force posterior argmax, used to check the planned and indexed
//! scoring path end to end.
//!
//! Counts come from a direct scan of the corpus text (no query planning, no
//! chunking, no postings index) and the smoothed posterior
//!
//! ```text
//! P(d | x) ∝ Π_i (C'(d, x_i) + δ) / (C(d) + δ) · (C(d) + δ) / N
//! ```
//!
//! is compared in exact rational arithmetic, so ties are exact ties.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::counts::{naive_literal_positions, LocalCorpus};
use crate::model::{ConceptSet, NegationMode, NUM_OPTIONS};
use crate::scoring::adjusted_pair_count;
use crate::surface_forms::expand_variants;

/// Raw counts by direct scan: `(C(d), [C(d, x_i)])` for one option.
///
/// `C(d)` sums occurrences of every surface form; `C(d, x_i)` counts
/// documents holding some form of `d` and some form of `x_i`.
pub fn direct_counts(corpus: &LocalCorpus, option: &str, concepts: &[&str]) -> (u64, Vec<u64>) {
    let diag = expand_variants(option.trim()).expect("non-empty option");
    let concept_forms: Vec<_> = concepts
        .iter()
        .map(|c| expand_variants(c).expect("non-empty concept"))
        .collect();
    let docs = corpus.documents().len();
    let present = |doc: usize, forms: &[String]| {
        forms
            .iter()
            .any(|f| !naive_literal_positions(corpus, doc, f).is_empty())
    };

    let mut c_d = 0u64;
    let mut pairs = vec![0u64; concepts.len()];
    for doc in 0..docs {
        let hits: u64 = diag
            .variants()
            .iter()
            .map(|f| naive_literal_positions(corpus, doc, f).len() as u64)
            .sum();
        c_d += hits;
        if hits == 0 {
            continue;
        }
        for (i, cf) in concept_forms.iter().enumerate() {
            if present(doc, cf.variants()) {
                pairs[i] += 1;
            }
        }
    }
    (c_d, pairs)
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite delta")
}

/// Smoothed posterior numerator for one option, exactly.
pub fn smoothed_posterior(
    c_d: u64,
    pairs: &[u64],
    concepts: &ConceptSet,
    mode: NegationMode,
    delta: f64,
    total_tokens: u64,
) -> BigRational {
    let delta = rational(delta);
    let smooth = |c: u64| BigRational::from_integer(BigInt::from(c)) + &delta;
    let prior_den = smooth(c_d);
    let mut p = prior_den.clone() / BigRational::from_integer(BigInt::from(total_tokens.max(1)));
    for (concept, &c_dx) in concepts.concepts().iter().zip(pairs) {
        if let Some(c) = adjusted_pair_count(mode, concept.polarity(), c_d, c_dx) {
            p *= smooth(c) / &prior_den;
        }
    }
    p
}

/// Direct-scan counts for all five options.
pub fn option_counts(
    corpus: &LocalCorpus,
    options: &[String; NUM_OPTIONS],
    concepts: &ConceptSet,
) -> Vec<(u64, Vec<u64>)> {
    let texts: Vec<&str> = concepts.texts().collect();
    options
        .iter()
        .map(|o| direct_counts(corpus, o, &texts))
        .collect()
}

/// Index of the largest exact posterior over precomputed option counts;
/// lowest index on exact ties.
pub fn posterior_argmax(
    counts: &[(u64, Vec<u64>)],
    concepts: &ConceptSet,
    delta: f64,
    mode: NegationMode,
    total_tokens: u64,
) -> usize {
    let mut best = 0;
    let mut best_p = BigRational::zero() - BigRational::one();
    for (i, (c_d, pairs)) in counts.iter().enumerate() {
        let p = smoothed_posterior(*c_d, pairs, concepts, mode, delta, total_tokens);
        if p > best_p {
            best = i;
            best_p = p;
        }
    }
    best
}

/// Index of the option with the largest smoothed posterior; lowest index on
/// exact ties.
pub fn posterior_oracle(
    corpus: &LocalCorpus,
    options: &[String; NUM_OPTIONS],
    concepts: &ConceptSet,
    delta: f64,
    mode: NegationMode,
) -> usize {
    let counts = option_counts(corpus, options, concepts);
    posterior_argmax(&counts, concepts, delta, mode, corpus.total_tokens())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Concept, KMode};

    #[test]
    fn all_zero_counts_tie_to_first() {
        let corpus = LocalCorpus::new("t", vec!["nothing relevant here".into()]);
        let concepts =
            ConceptSet::new(vec![Concept::affirmed("fever").unwrap()], KMode::Unrestricted)
                .unwrap();
        let options = ["a1", "b1", "c1", "d1", "e1"].map(String::from);
        for mode in NegationMode::ALL {
            assert_eq!(posterior_oracle(&corpus, &options, &concepts, 1.0, mode), 0);
        }
    }

    #[test]
    fn direct_counts_by_hand() {
        let corpus = LocalCorpus::new(
            "t",
            vec![
                "Lupus with fever and lupus".into(),
                "fever only".into(),
                "lupus rash".into(),
            ],
        );
        let (c_d, pairs) = direct_counts(&corpus, "Lupus", &["fever", "rash"]);
        // doc 0: "Lupus", "lupus", " lupus"; doc 2: "lupus" only (no leading space).
        assert_eq!(c_d, 4);
        assert_eq!(pairs, [1, 1]);
    }
}
