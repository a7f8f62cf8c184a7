use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use crate::model::CorpusMeta;
use crate::query_plan::CountQuery;

use super::{CountBackend, CountError, CountResult};

/// Byte span of one token in its source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub start: usize,
    pub end: usize,
}

/// Splits text into tokens.
///
/// Literal matching assumes tokenization is local: a span that starts and
/// ends on token boundaries tokenizes the same way on its own.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<Token>;
}

impl<F> Tokenizer for F
where
    F: Fn(&str) -> Vec<Token> + Send + Sync,
{
    fn tokenize(&self, text: &str) -> Vec<Token> {
        self(text)
    }
}

/// Default tokenizer: runs of alphanumerics form one token, every other
/// non-whitespace character is a token of its own.
pub fn tokenize_words(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            run_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = run_start.take() {
            out.push(Token { start: s, end: i });
        }
        if !ch.is_whitespace() {
            out.push(Token {
                start: i,
                end: i + ch.len_utf8(),
            });
        }
    }
    if let Some(s) = run_start {
        out.push(Token {
            start: s,
            end: text.len(),
        });
    }
    out
}

/// One literal occurrence: document and token position of its first token.
type Hit = (u32, u32);

/// In-memory positional index over a small corpus.
///
/// Literals match as exact, case-sensitive substrings whose non-space core
/// starts and ends on token boundaries. A leading space in the literal must
/// be present in the text; a literal without one matches with or without a
/// preceding space, so `"x"` and `" x"` overlap mid-sentence. Unary queries count occurrences (summed over
/// literals); multi-clause queries count documents that contain a match for
/// every clause, optionally requiring all matches within the query window.
#[derive(Clone)]
pub struct LocalCorpus {
    id: String,
    docs: Vec<String>,
    tokens: Vec<Vec<Token>>,
    postings: HashMap<String, Vec<Hit>>,
    tokenizer: Arc<dyn Tokenizer>,
    enforce_window: bool,
}

impl fmt::Debug for LocalCorpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalCorpus")
            .field("id", &self.id)
            .field("docs", &self.docs.len())
            .field("enforce_window", &self.enforce_window)
            .finish()
    }
}

impl LocalCorpus {
    pub fn new(id: impl Into<String>, docs: Vec<String>) -> Self {
        Self::with_tokenizer(id, docs, Arc::new(tokenize_words))
    }

    pub fn with_tokenizer(
        id: impl Into<String>,
        docs: Vec<String>,
        tokenizer: Arc<dyn Tokenizer>,
    ) -> Self {
        let tokens: Vec<Vec<Token>> = docs.iter().map(|d| tokenizer.tokenize(d)).collect();
        let mut postings: HashMap<String, Vec<Hit>> = HashMap::new();
        for (d, (doc, toks)) in docs.iter().zip(&tokens).enumerate() {
            for (p, t) in toks.iter().enumerate() {
                postings
                    .entry(doc[t.start..t.end].to_string())
                    .or_default()
                    .push((d as u32, p as u32));
            }
        }
        LocalCorpus {
            id: id.into(),
            docs,
            tokens,
            postings,
            tokenizer,
            enforce_window: false,
        }
    }

    /// Reads one document per line, or line-delimited JSON records with a
    /// `text` field when the first non-blank line is a JSON object.
    pub fn from_reader(id: impl Into<String>, reader: impl BufRead) -> std::io::Result<Self> {
        let mut docs = Vec::new();
        let mut json_mode: Option<bool> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let is_json = *json_mode.get_or_insert_with(|| line.trim_start().starts_with('{'));
            if is_json {
                let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("corpus line {}: {e}", i + 1),
                    )
                })?;
                let text = v.get("text").and_then(|t| t.as_str()).ok_or_else(|| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("corpus line {}: missing `text` field", i + 1),
                    )
                })?;
                docs.push(text.to_string());
            } else {
                docs.push(line);
            }
        }
        Ok(Self::new(id, docs))
    }

    pub fn open(id: impl Into<String>, path: &Path) -> std::io::Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(id, std::io::BufReader::new(f))
    }

    /// Require all matches of a multi-clause query to fall within the
    /// query's token window.
    pub fn with_window_enforcement(mut self, on: bool) -> Self {
        self.enforce_window = on;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn documents(&self) -> &[String] {
        &self.docs
    }

    pub fn doc_tokens(&self, doc: usize) -> &[Token] {
        &self.tokens[doc]
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    pub fn window_enforced(&self) -> bool {
        self.enforce_window
    }

    pub fn total_tokens(&self) -> u64 {
        self.tokens.iter().map(|t| t.len() as u64).sum()
    }

    /// All occurrences of `literal`, in document then position order.
    pub fn literal_hits(&self, literal: &str) -> Vec<Hit> {
        let core = literal.trim();
        if core.is_empty() {
            return Vec::new();
        }
        let prefix = literal.len() - literal.trim_start().len();
        let suffix = literal.len() - literal.trim_end().len();
        let Some(first) = self.tokenizer.tokenize(core).first().copied() else {
            return Vec::new();
        };
        if first.start != 0 {
            return Vec::new();
        }
        let Some(list) = self.postings.get(&core[first.start..first.end]) else {
            return Vec::new();
        };
        list.iter()
            .copied()
            .filter(|&(d, p)| {
                let doc = &self.docs[d as usize];
                let toks = &self.tokens[d as usize];
                let core_start = toks[p as usize].start;
                let core_end = core_start + core.len();
                let Some(start) = core_start.checked_sub(prefix) else {
                    return false;
                };
                if doc.get(start..core_end + suffix) != Some(literal) {
                    return false;
                }
                toks[p as usize..]
                    .binary_search_by_key(&core_end, |t| t.end)
                    .is_ok()
            })
            .collect()
    }

    fn count_query(&self, query: &CountQuery) -> u64 {
        if query.is_unary() {
            return query.cnf()[0]
                .iter()
                .map(|l| self.literal_hits(l).len() as u64)
                .sum();
        }
        // doc -> per-clause match positions
        let clauses = query.cnf().len();
        let mut per_doc: BTreeMap<u32, Vec<Vec<u32>>> = BTreeMap::new();
        for (ci, clause) in query.cnf().iter().enumerate() {
            for lit in clause {
                for (d, p) in self.literal_hits(lit) {
                    per_doc.entry(d).or_insert_with(|| vec![Vec::new(); clauses])[ci].push(p);
                }
            }
        }
        per_doc
            .values()
            .filter(|groups| groups.iter().all(|g| !g.is_empty()))
            .filter(|groups| {
                !self.enforce_window || covers_within(groups, query.window_tokens())
            })
            .count() as u64
    }
}

/// True when one position can be picked from every group such that
/// `max - min <= window`.
fn covers_within(groups: &[Vec<u32>], window: u32) -> bool {
    let mut tagged: Vec<(u32, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, ps)| ps.iter().map(move |&p| (p, g)))
        .collect();
    tagged.sort_unstable();
    let mut seen = vec![0usize; groups.len()];
    let mut covered = 0;
    let mut lo = 0;
    for hi in 0..tagged.len() {
        let (p_hi, g_hi) = tagged[hi];
        if seen[g_hi] == 0 {
            covered += 1;
        }
        seen[g_hi] += 1;
        while tagged[lo].0 + window < p_hi {
            let g = tagged[lo].1;
            seen[g] -= 1;
            if seen[g] == 0 {
                covered -= 1;
            }
            lo += 1;
        }
        if covered == groups.len() {
            return true;
        }
    }
    false
}

impl CountBackend for LocalCorpus {
    fn corpus_meta(&self) -> CorpusMeta {
        CorpusMeta {
            corpus_id: self.id.clone(),
            total_tokens: self.total_tokens(),
            total_docs: self.docs.len() as u64,
        }
    }

    fn count(&self, query: &CountQuery) -> Result<CountResult, CountError> {
        Ok(CountResult {
            count: self.count_query(query),
            approx: false,
        })
    }
}

/// Token positions of every occurrence of `literal` in document `doc`,
/// found by substring search without the postings index.
pub fn naive_literal_positions(corpus: &LocalCorpus, doc: usize, literal: &str) -> Vec<u32> {
    let text = &corpus.documents()[doc];
    let toks = corpus.doc_tokens(doc);
    let prefix = literal.len() - literal.trim_start().len();
    let core_len = literal.trim().len();
    if core_len == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (at, _) in text.char_indices() {
        if !text[at..].starts_with(literal) {
            continue;
        }
        let core_start = at + prefix;
        let core_end = core_start + core_len;
        let start_tok = toks.iter().position(|t| t.start == core_start);
        let ends_on_token = toks.iter().any(|t| t.end == core_end);
        if let (Some(pos), true) = (start_tok, ends_on_token) {
            out.push(pos as u32);
        }
    }
    out
}

/// Reference count by full scan, without the postings index.
///
/// Finds every substring occurrence of every literal, keeps those whose core
/// aligns with token boundaries, then applies the same unary/document
/// semantics as [`LocalCorpus`]. Windowed checks try every match as the
/// window start.
pub fn naive_count(corpus: &LocalCorpus, query: &CountQuery) -> u64 {
    let scan = |doc: usize, lit: &str| naive_literal_positions(corpus, doc, lit);

    let docs = corpus.documents().len();
    if query.is_unary() {
        return (0..docs)
            .map(|d| {
                query.cnf()[0]
                    .iter()
                    .map(|l| scan(d, l).len() as u64)
                    .sum::<u64>()
            })
            .sum();
    }
    let window = query.window_tokens();
    (0..docs)
        .filter(|&d| {
            let groups: Vec<Vec<u32>> = query
                .cnf()
                .iter()
                .map(|clause| clause.iter().flat_map(|l| scan(d, l)).collect())
                .collect();
            if groups.iter().any(Vec::is_empty) {
                return false;
            }
            if !corpus.window_enforced() {
                return true;
            }
            groups.iter().flatten().any(|&s| {
                groups
                    .iter()
                    .all(|g| g.iter().any(|&p| p >= s && p - s <= window))
            })
        })
        .count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(docs: &[&str]) -> LocalCorpus {
        LocalCorpus::new("t", docs.iter().map(|s| s.to_string()).collect())
    }

    fn q(cnf: &[&[&str]]) -> CountQuery {
        CountQuery::new(
            cnf.iter()
                .map(|c| c.iter().map(|s| s.to_string()).collect())
                .collect(),
            1000,
            "t",
        )
        .unwrap()
    }

    fn count(c: &LocalCorpus, query: &CountQuery) -> u64 {
        c.count(query).unwrap().count
    }

    #[test]
    fn tokenizer_splits_words_and_punctuation() {
        let text = "Fever, 38.5C rash";
        let toks: Vec<&str> = tokenize_words(text)
            .iter()
            .map(|t| &text[t.start..t.end])
            .collect();
        assert_eq!(toks, ["Fever", ",", "38", ".", "5C", "rash"]);
    }

    #[test]
    fn unary_counts_occurrences() {
        let c = corpus(&["a b", "a", "b"]);
        assert_eq!(count(&c, &q(&[&["a"]])), 2);
    }

    #[test]
    fn cnf_counts_documents() {
        let c = corpus(&["a b", "a", "b"]);
        assert_eq!(count(&c, &q(&[&["a"], &["b"]])), 1);
    }

    #[test]
    fn token_boundaries_respected() {
        let c = corpus(&["anemia and microcytic anemia", "leukemia"]);
        assert_eq!(count(&c, &q(&[&["anemia"]])), 2);
        assert_eq!(count(&c, &q(&[&["emia"]])), 0);
        assert_eq!(count(&c, &q(&[&["microcytic anemia"]])), 1);
    }

    #[test]
    fn leading_space_needs_a_space() {
        let c = corpus(&["fever and fever", "(fever)"]);
        assert_eq!(count(&c, &q(&[&["fever"]])), 3);
        assert_eq!(count(&c, &q(&[&[" fever"]])), 1);
        // OR components are summed, overlapping forms included.
        assert_eq!(count(&c, &q(&[&["fever", " fever"]])), 4);
    }

    #[test]
    fn case_sensitive() {
        let c = corpus(&["Fever fever FEVER"]);
        assert_eq!(count(&c, &q(&[&["fever"]])), 1);
        assert_eq!(count(&c, &q(&[&["Fever", "fever"]])), 2);
    }

    #[test]
    fn window_enforcement() {
        let filler = vec!["x"; 20].join(" ");
        let doc = format!("a {filler} b");
        let c = LocalCorpus::new("t", vec![doc.clone(), "a b".into()]);
        let near = CountQuery::new(vec![vec!["a".into()], vec!["b".into()]], 5, "t").unwrap();
        assert_eq!(count(&c, &near), 2);
        let c = c.with_window_enforcement(true);
        assert_eq!(count(&c, &near), 1);
        assert_eq!(naive_count(&c, &near), 1);
        let wide = CountQuery::new(vec![vec!["a".into()], vec!["b".into()]], 21, "t").unwrap();
        assert_eq!(count(&c, &wide), 2);
    }

    #[test]
    fn covers_within_cases() {
        assert!(covers_within(&[vec![0, 50], vec![48]], 2));
        assert!(!covers_within(&[vec![0, 50], vec![47]], 2));
        assert!(covers_within(&[vec![5], vec![5], vec![6]], 1));
    }

    #[test]
    fn jsonl_ingestion() {
        let input = "{\"text\": \"a b\"}\n\n{\"text\": \"c\"}\n";
        let c = LocalCorpus::from_reader("t", input.as_bytes()).unwrap();
        assert_eq!(c.documents(), ["a b", "c"]);
        let plain = LocalCorpus::from_reader("t", "a b\nc\n".as_bytes()).unwrap();
        assert_eq!(plain.documents(), ["a b", "c"]);
        assert!(LocalCorpus::from_reader("t", "{\"body\": 1}\n".as_bytes()).is_err());
    }

    #[test]
    fn meta() {
        let c = corpus(&["a b", "c"]);
        let m = c.corpus_meta();
        assert_eq!((m.total_docs, m.total_tokens), (2, 3));
    }

    #[test]
    fn custom_tokenizer() {
        // Character-level tokens: substrings match anywhere.
        let chars = |t: &str| -> Vec<Token> {
            t.char_indices()
                .filter(|(_, c)| !c.is_whitespace())
                .map(|(i, c)| Token {
                    start: i,
                    end: i + c.len_utf8(),
                })
                .collect()
        };
        let c = LocalCorpus::with_tokenizer("t", vec!["leukemia".into()], Arc::new(chars));
        assert_eq!(count(&c, &q(&[&["emia"]])), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const WORDS: &[&str] = &["a", "b", "ab", "Ab", "c", "a-b", ",", "."];

        fn doc() -> impl Strategy<Value = String> {
            proptest::collection::vec(
                (proptest::sample::select(WORDS), proptest::sample::select(&[" ", "  ", ""][..])),
                0..12,
            )
            .prop_map(|parts| parts.into_iter().map(|(w, s)| format!("{w}{s}")).collect())
        }

        fn literal() -> impl Strategy<Value = String> {
            (
                proptest::sample::select(&["", " "][..]),
                proptest::collection::vec(proptest::sample::select(WORDS), 1..3),
            )
                .prop_map(|(lead, ws)| format!("{lead}{}", ws.join(" ")))
        }

        proptest! {
            #[test]
            fn index_agrees_with_naive_scan(
                docs in proptest::collection::vec(doc(), 0..15),
                cnf in proptest::collection::vec(proptest::collection::vec(literal(), 1..4), 1..4),
                window in 1u32..6,
                enforce in any::<bool>(),
            ) {
                let c = LocalCorpus::new("t", docs).with_window_enforcement(enforce);
                let query = CountQuery::new(cnf, window, "t").unwrap();
                prop_assert_eq!(c.count(&query).unwrap().count, naive_count(&c, &query));
            }

            #[test]
            fn insertion_order_irrelevant(docs in proptest::collection::vec(doc(), 0..10), lit in literal()) {
                let fwd = LocalCorpus::new("t", docs.clone());
                let mut rev_docs = docs;
                rev_docs.reverse();
                let rev = LocalCorpus::new("t", rev_docs);
                for query in [
                    CountQuery::unary(vec![lit.clone()], "t").unwrap(),
                    CountQuery::new(vec![vec![lit.clone()], vec!["b".into()]], 1000, "t").unwrap(),
                ] {
                    prop_assert_eq!(fwd.count(&query).unwrap(), rev.count(&query).unwrap());
                }
            }
        }
    }
}
