//! Compiling variant sets into backend-legal count queries.
//!
//! Count services accept positive CNF queries whose OR-clauses hold at most
//! four literals. Longer variant lists are split into chunks and the overall
//! count is reassembled: unary counts by plain summation, pair counts by
//! inclusion-exclusion over the chunk clauses.
//!
//! For chunks `G_1..G_m` of the diagnosis and `H_1..H_n` of the concept,
//!
//! ```text
//! |(G_1 ∨ .. ∨ G_m) ∧ (H_1 ∨ .. ∨ H_n)|
//!     = Σ_{∅≠R⊆[m]} Σ_{∅≠C⊆[n]} (-1)^(|R|+|C|) |∧_{i∈R} G_i ∧ ∧_{j∈C} H_j|
//! ```
//!
//! which is the expansion over the pair events `G_i ∧ H_j` with identical
//! intersections merged. The identity is exact for document-level counting.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counts::{CountBackend, CountError};
use crate::model::Count;
use crate::surface_forms::VariantSet;

pub const MAX_OR_COMPONENTS: usize = 4;
pub const MAX_WINDOW_TOKENS: u32 = 1000;
pub const DEFAULT_TERM_BUDGET: usize = 256;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("query has no clauses")]
    EmptyQuery,
    #[error("clause {0} has {1} literals (allowed 1-{max})", max = MAX_OR_COMPONENTS)]
    ClauseSize(usize, usize),
    #[error("empty literal in clause {0}")]
    EmptyLiteral(usize),
    #[error("window of {0} tokens is outside 1..={max}", max = MAX_WINDOW_TOKENS)]
    Window(u32),
    #[error("plan needs {needed} terms, budget is {budget}")]
    PlanTooLarge { needed: u128, budget: usize },
    #[error("term `{term}` exceeds backend limit of {max} literals per clause")]
    IllegalTerm { term: String, max: usize },
    #[error("backend failed on term `{term}`: {source}")]
    Backend {
        term: String,
        #[source]
        source: CountError,
    },
}

/// A positive CNF count request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CountQuery {
    cnf: Vec<Vec<String>>,
    window_tokens: u32,
    corpus_id: String,
}

impl CountQuery {
    pub fn new(
        cnf: Vec<Vec<String>>,
        window_tokens: u32,
        corpus_id: impl Into<String>,
    ) -> Result<Self, PlanError> {
        if cnf.is_empty() {
            return Err(PlanError::EmptyQuery);
        }
        for (i, clause) in cnf.iter().enumerate() {
            if clause.is_empty() || clause.len() > MAX_OR_COMPONENTS {
                return Err(PlanError::ClauseSize(i, clause.len()));
            }
            if clause.iter().any(String::is_empty) {
                return Err(PlanError::EmptyLiteral(i));
            }
        }
        if window_tokens == 0 || window_tokens > MAX_WINDOW_TOKENS {
            return Err(PlanError::Window(window_tokens));
        }
        Ok(CountQuery {
            cnf,
            window_tokens,
            corpus_id: corpus_id.into(),
        })
    }

    /// Single-clause query with the default window.
    pub fn unary(clause: Vec<String>, corpus_id: impl Into<String>) -> Result<Self, PlanError> {
        Self::new(vec![clause], MAX_WINDOW_TOKENS, corpus_id)
    }

    pub fn cnf(&self) -> &[Vec<String>] {
        &self.cnf
    }

    pub fn window_tokens(&self) -> u32 {
        self.window_tokens
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    pub fn is_unary(&self) -> bool {
        self.cnf.len() == 1
    }

    /// Canonical `{lit|lit;lit}` form. `\`, `|`, `;`, `{` and `}` inside
    /// literals are backslash-escaped.
    pub fn canonical(&self) -> String {
        let clauses: Vec<String> = self
            .cnf
            .iter()
            .map(|c| c.iter().map(|l| escape(l)).collect::<Vec<_>>().join("|"))
            .collect();
        format!("{{{}}}", clauses.join(";"))
    }
}

fn escape(lit: &str) -> String {
    let mut out = String::with_capacity(lit.len());
    for ch in lit.chars() {
        if matches!(ch, '\\' | '|' | ';' | '{' | '}') {
            out.push('\\');
        }
        out.push(ch);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn from_parity(odd: bool) -> Self {
        if odd {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    pub fn as_i128(self) -> i128 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub sign: Sign,
    pub query: CountQuery,
}

impl Term {
    /// `+ {a|b;c}` form used in logs and cache keys.
    pub fn canonical(&self) -> String {
        format!("{} {}", self.sign, self.query.canonical())
    }
}

/// A signed sum of count queries whose value is the requested count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub terms: Vec<Term>,
    pub description: String,
}

impl QueryPlan {
    /// One canonical term per line.
    pub fn canonical(&self) -> String {
        self.terms
            .iter()
            .map(Term::canonical)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanOptions {
    pub corpus_id: String,
    pub window_tokens: u32,
    pub max_or_components: usize,
    pub term_budget: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            corpus_id: String::new(),
            window_tokens: MAX_WINDOW_TOKENS,
            max_or_components: MAX_OR_COMPONENTS,
            term_budget: DEFAULT_TERM_BUDGET,
        }
    }
}

impl PlanOptions {
    pub fn for_corpus(corpus_id: impl Into<String>) -> Self {
        PlanOptions {
            corpus_id: corpus_id.into(),
            ..Default::default()
        }
    }
}

fn chunks(v: &VariantSet, size: usize) -> Vec<Vec<String>> {
    v.variants().chunks(size.max(1)).map(<[String]>::to_vec).collect()
}

/// Sum of one single-clause query per chunk of at most four variants.
pub fn plan_unary_count(variants: &VariantSet, opts: &PlanOptions) -> Result<QueryPlan, PlanError> {
    if variants.is_empty() {
        return Err(PlanError::EmptyQuery);
    }
    let groups = chunks(variants, opts.max_or_components);
    let n = groups.len();
    let terms = groups
        .into_iter()
        .map(|clause| {
            Ok(Term {
                sign: Sign::Plus,
                query: CountQuery::new(vec![clause], opts.window_tokens, opts.corpus_id.clone())?,
            })
        })
        .collect::<Result<Vec<_>, PlanError>>()?;
    Ok(QueryPlan {
        terms,
        description: format!(
            "count({:?}): {} literals in {n} clause(s), summed",
            variants.source(),
            variants.len()
        ),
    })
}

/// Document-level co-occurrence of any diagnosis variant with any concept
/// variant, expanded by inclusion-exclusion when either side needs more than
/// one clause.
pub fn plan_pair_count(
    diag: &VariantSet,
    concept: &VariantSet,
    opts: &PlanOptions,
) -> Result<QueryPlan, PlanError> {
    if diag.is_empty() || concept.is_empty() {
        return Err(PlanError::EmptyQuery);
    }
    let g = chunks(diag, opts.max_or_components);
    let h = chunks(concept, opts.max_or_components);
    let (m, n) = (g.len(), h.len());
    let needed = subset_count(m).saturating_mul(subset_count(n));
    if needed > opts.term_budget as u128 {
        return Err(PlanError::PlanTooLarge {
            needed,
            budget: opts.term_budget,
        });
    }

    let mut terms = Vec::with_capacity(needed as usize);
    // Terms ordered by total clause count, then subset masks, so the
    // first-order terms come first.
    let mut masks: Vec<(u32, u32)> = (1..(1u32 << m))
        .flat_map(|r| (1..(1u32 << n)).map(move |c| (r, c)))
        .collect();
    masks.sort_by_key(|&(r, c)| (r.count_ones() + c.count_ones(), r, c));
    for (r, c) in masks {
        let mut cnf: Vec<Vec<String>> = Vec::new();
        cnf.extend((0..m).filter(|i| r >> i & 1 == 1).map(|i| g[i].clone()));
        cnf.extend((0..n).filter(|j| c >> j & 1 == 1).map(|j| h[j].clone()));
        let sign = Sign::from_parity((r.count_ones() + c.count_ones()) % 2 == 1);
        terms.push(Term {
            sign,
            query: CountQuery::new(cnf, opts.window_tokens, opts.corpus_id.clone())?,
        });
    }
    Ok(QueryPlan {
        terms,
        description: format!(
            "count({:?} AND {:?}): {m}x{n} clause chunks, {needed} inclusion-exclusion term(s)",
            diag.source(),
            concept.source()
        ),
    })
}

fn subset_count(k: usize) -> u128 {
    if k >= 127 {
        u128::MAX
    } else {
        (1u128 << k) - 1
    }
}

/// Result of evaluating a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanCount {
    pub count: u64,
    pub approx: bool,
    /// The signed sum was negative and has been clamped to zero.
    pub clamped: bool,
}

impl From<PlanCount> for Count {
    fn from(p: PlanCount) -> Self {
        Count {
            value: p.count,
            approx: p.approx,
            clamped: p.clamped,
        }
    }
}

/// Evaluates every term against `backend` and combines the signed counts.
pub fn evaluate_plan<B: CountBackend + ?Sized>(
    plan: &QueryPlan,
    backend: &B,
) -> Result<PlanCount, PlanError> {
    let max = backend.capabilities().max_or_components;
    let mut total: i128 = 0;
    let mut approx = false;
    for term in &plan.terms {
        if term.query.cnf().iter().any(|c| c.len() > max) {
            return Err(PlanError::IllegalTerm {
                term: term.canonical(),
                max,
            });
        }
        let res = backend.count(&term.query).map_err(|source| PlanError::Backend {
            term: term.canonical(),
            source,
        })?;
        total += term.sign.as_i128() * res.count as i128;
        approx |= res.approx;
    }
    let clamped = total < 0;
    if clamped {
        log::warn!(
            "negative inclusion-exclusion sum {total} clamped to 0 ({})",
            plan.description
        );
    }
    Ok(PlanCount {
        count: total.clamp(0, u64::MAX as i128) as u64,
        approx,
        clamped,
    })
}
