//! Accuracy, rank distribution, stratification, certainty and agreement
//! metrics, plus deterministic report files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::write_atomic;
use crate::extraction::LlmPrediction;
use crate::model::{Question, RankingResult, StepDomain, NUM_OPTIONS, OPTION_LETTERS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("question id mismatch: {0}")]
    IdMismatch(String),
}

/// Pairs each result with its question by id.
///
/// Every question must have exactly one result and vice versa.
fn align<'a, T>(
    items: &'a [T],
    id: impl Fn(&T) -> &str,
    questions: &'a [Question],
) -> Result<Vec<(&'a T, &'a Question)>, EvalError> {
    if items.len() != questions.len() {
        return Err(EvalError::IdMismatch(format!(
            "{} results for {} questions",
            items.len(),
            questions.len()
        )));
    }
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut seen = HashSet::new();
    items
        .iter()
        .map(|it| {
            let key = id(it);
            if !seen.insert(key) {
                return Err(EvalError::IdMismatch(format!("duplicate result for {key}")));
            }
            by_id
                .get(key)
                .map(|q| (it, *q))
                .ok_or_else(|| EvalError::IdMismatch(format!("no question with id {key}")))
        })
        .collect()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Fraction of results whose predicted option is the gold one (0 when empty).
pub fn accuracy(results: &[RankingResult], questions: &[Question]) -> Result<f64, EvalError> {
    let pairs = align(results, |r| &r.question_id, questions)?;
    let correct = pairs
        .iter()
        .filter(|(r, q)| r.predicted_index == q.gold_index)
        .count();
    Ok(ratio(correct, pairs.len()))
}

/// Counts of the gold option's rank, `hist[r - 1]` for rank `r`.
pub fn rank_histogram(
    results: &[RankingResult],
    questions: &[Question],
) -> Result<[usize; NUM_OPTIONS], EvalError> {
    let mut hist = [0; NUM_OPTIONS];
    for (r, q) in align(results, |r| &r.question_id, questions)? {
        let rank = r.ranks[q.gold_index] as usize;
        hist[rank.clamp(1, NUM_OPTIONS) - 1] += 1;
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Accuracy per exam domain; only domains that occur are present.
pub fn stratify(
    results: &[RankingResult],
    questions: &[Question],
) -> Result<BTreeMap<StepDomain, Stratum>, EvalError> {
    let mut tally: BTreeMap<StepDomain, (usize, usize)> = BTreeMap::new();
    for (r, q) in align(results, |r| &r.question_id, questions)? {
        let e = tally.entry(q.step_domain).or_default();
        e.0 += 1;
        e.1 += usize::from(r.predicted_index == q.gold_index);
    }
    Ok(tally
        .into_iter()
        .map(|(k, (n, correct))| {
            (
                k,
                Stratum {
                    n,
                    correct,
                    accuracy: ratio(correct, n),
                },
            )
        })
        .collect())
}

/// Median with the midpoint convention for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertaintyReport {
    pub threshold: f64,
    pub median_correct: Option<f64>,
    pub median_incorrect: Option<f64>,
    pub n_above: usize,
    pub frac_above: f64,
    /// Accuracy among questions above the threshold; absent when none are.
    pub acc_above: Option<f64>,
}

/// Softmax top-1 certainty split by correctness, and accuracy above a
/// threshold (strictly greater).
pub fn certainty_analysis(
    results: &[RankingResult],
    questions: &[Question],
    threshold: f64,
) -> Result<CertaintyReport, EvalError> {
    let pairs = align(results, |r| &r.question_id, questions)?;
    let (mut correct, mut incorrect) = (Vec::new(), Vec::new());
    let (mut n_above, mut correct_above) = (0, 0);
    for (r, q) in &pairs {
        let ok = r.predicted_index == q.gold_index;
        if ok {
            correct.push(r.softmax_top1);
        } else {
            incorrect.push(r.softmax_top1);
        }
        if r.softmax_top1 > threshold {
            n_above += 1;
            correct_above += usize::from(ok);
        }
    }
    Ok(CertaintyReport {
        threshold,
        median_correct: median(&correct),
        median_incorrect: median(&incorrect),
        n_above,
        frac_above: ratio(n_above, pairs.len()),
        acc_above: (n_above > 0).then(|| ratio(correct_above, n_above)),
    })
}

/// A method's chosen option for one question; `None` is a failed answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub choice: Option<usize>,
}

impl From<&RankingResult> for Prediction {
    fn from(r: &RankingResult) -> Self {
        Prediction {
            question_id: r.question_id.clone(),
            choice: Some(r.predicted_index),
        }
    }
}

impl From<&LlmPrediction> for Prediction {
    fn from(p: &LlmPrediction) -> Self {
        Prediction {
            question_id: p.question_id.clone(),
            choice: p.extracted_index,
        }
    }
}

/// Index of the "no answer" slot in [`AgreementReport::choice_matrix`].
pub const NONE_SLOT: usize = NUM_OPTIONS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub joint_accuracy: f64,
    pub only_a: f64,
    pub only_b: f64,
    pub neither: f64,
    pub n_agree: usize,
    pub n_agree_correct: usize,
    pub agreement_rate: f64,
    /// Accuracy among questions where both chose the same option.
    pub agreement_accuracy: Option<f64>,
    pub expected_joint: f64,
    /// `[a_correct][b_correct]` counts, index 1 = correct.
    pub correctness_matrix: [[usize; 2]; 2],
    /// `[a_choice][b_choice]` counts; index 5 is "no answer".
    pub choice_matrix: [[usize; NUM_OPTIONS + 1]; NUM_OPTIONS + 1],
}

/// Joint correctness and answer agreement of two methods.
///
/// A missing choice is incorrect and never agrees with anything, including
/// another missing choice.
pub fn compare_methods(
    a: &[Prediction],
    b: &[Prediction],
    questions: &[Question],
) -> Result<AgreementReport, EvalError> {
    let pa = align(a, |p| &p.question_id, questions)?;
    let b_by_id: HashMap<&str, &Prediction> =
        b.iter().map(|p| (p.question_id.as_str(), p)).collect();
    if b_by_id.len() != b.len() || b.len() != a.len() {
        return Err(EvalError::IdMismatch(
            "prediction sets cover different ids".into(),
        ));
    }
    let mut cm = [[0usize; 2]; 2];
    let mut choices = [[0usize; NUM_OPTIONS + 1]; NUM_OPTIONS + 1];
    let (mut agree, mut agree_correct) = (0, 0);
    for (pa, q) in &pa {
        let pb = b_by_id
            .get(q.id.as_str())
            .ok_or_else(|| EvalError::IdMismatch(format!("{} missing from second set", q.id)))?;
        let ca = pa.choice == Some(q.gold_index);
        let cb = pb.choice == Some(q.gold_index);
        cm[usize::from(ca)][usize::from(cb)] += 1;
        let slot = |c: Option<usize>| c.filter(|&i| i < NUM_OPTIONS).unwrap_or(NONE_SLOT);
        choices[slot(pa.choice)][slot(pb.choice)] += 1;
        if pa.choice.is_some() && pa.choice == pb.choice {
            agree += 1;
            agree_correct += usize::from(ca);
        }
    }
    let n = pa.len();
    let acc_a = ratio(cm[1][0] + cm[1][1], n);
    let acc_b = ratio(cm[0][1] + cm[1][1], n);
    Ok(AgreementReport {
        n,
        accuracy_a: acc_a,
        accuracy_b: acc_b,
        joint_accuracy: ratio(cm[1][1], n),
        only_a: ratio(cm[1][0], n),
        only_b: ratio(cm[0][1], n),
        neither: ratio(cm[0][0], n),
        n_agree: agree,
        n_agree_correct: agree_correct,
        agreement_rate: ratio(agree, n),
        agreement_accuracy: (agree > 0).then(|| ratio(agree_correct, agree)),
        expected_joint: acc_a * acc_b,
        correctness_matrix: cm,
        choice_matrix: choices,
    })
}

/// Aggregate metrics for one scored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub rank_histogram: [usize; NUM_OPTIONS],
    pub strata: BTreeMap<StepDomain, Stratum>,
    pub certainty: CertaintyReport,
}

pub fn score_metrics(
    results: &[RankingResult],
    questions: &[Question],
    threshold: f64,
) -> Result<ScoreMetrics, EvalError> {
    Ok(ScoreMetrics {
        n: results.len(),
        accuracy: accuracy(results, questions)?,
        rank_histogram: rank_histogram(results, questions)?,
        strata: stratify(results, questions)?,
        certainty: certainty_analysis(results, questions, threshold)?,
    })
}

/// One delimited table for external plotting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PlotTable {
    pub fn to_tsv(&self) -> String {
        let mut out = self.header.join("\t");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// Reports that carry plot data alongside their JSON form.
pub trait PlotData {
    fn plot_tables(&self) -> Vec<PlotTable>;
}

fn strings<const N: usize>(cols: [&str; N]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

impl PlotData for ScoreMetrics {
    fn plot_tables(&self) -> Vec<PlotTable> {
        let ranks = PlotTable {
            name: "rank_histogram".into(),
            header: strings(["rank", "count"]),
            rows: self
                .rank_histogram
                .iter()
                .enumerate()
                .map(|(i, c)| vec![(i + 1).to_string(), c.to_string()])
                .collect(),
        };
        let strata = PlotTable {
            name: "strata".into(),
            header: strings(["step", "n", "correct", "accuracy"]),
            rows: self
                .strata
                .iter()
                .map(|(k, s)| {
                    vec![
                        k.as_str().to_string(),
                        s.n.to_string(),
                        s.correct.to_string(),
                        s.accuracy.to_string(),
                    ]
                })
                .collect(),
        };
        vec![ranks, strata]
    }
}

fn choice_label(i: usize) -> String {
    OPTION_LETTERS
        .get(i)
        .map(|c| c.to_string())
        .unwrap_or_else(|| "none".into())
}

impl PlotData for AgreementReport {
    fn plot_tables(&self) -> Vec<PlotTable> {
        let mut header = vec!["a\\b".to_string()];
        header.extend((0..=NUM_OPTIONS).map(choice_label));
        let choices = PlotTable {
            name: "choice_confusion".into(),
            header,
            rows: self
                .choice_matrix
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let mut r = vec![choice_label(i)];
                    r.extend(row.iter().map(|c| c.to_string()));
                    r
                })
                .collect(),
        };
        let m = &self.correctness_matrix;
        let correctness = PlotTable {
            name: "correctness_confusion".into(),
            header: strings(["a\\b", "incorrect", "correct"]),
            rows: vec![
                vec!["incorrect".into(), m[0][0].to_string(), m[0][1].to_string()],
                vec!["correct".into(), m[1][0].to_string(), m[1][1].to_string()],
            ],
        };
        vec![choices, correctness]
    }
}

/// The full report document for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<R, M> {
    pub config: serde_json::Value,
    pub rows: Vec<R>,
    pub metrics: M,
}

/// Writes `<name>.json` and one `<name>.<table>.tsv` per plot table into
/// `dir`. Output depends only on the inputs: no timestamps, stable key order.
pub fn emit_report<R: Serialize, M: Serialize + PlotData>(
    dir: &Path,
    name: &str,
    report: &Report<R, M>,
) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let json = dir.join(format!("{name}.json"));
    let mut body = serde_json::to_string_pretty(report).map_err(io::Error::other)?;
    body.push('\n');
    write_atomic(&json, body.as_bytes())?;
    written.push(json);
    for table in report.metrics.plot_tables() {
        let path = dir.join(format!("{name}.{}.tsv", table.name));
        write_atomic(&path, table.to_tsv().as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Short human-readable summary of score metrics.
pub fn describe_score_metrics(m: &ScoreMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "n={} accuracy={:.4}", m.n, m.accuracy);
    let _ = writeln!(s, "gold rank histogram: {:?}", m.rank_histogram);
    for (k, st) in &m.strata {
        let _ = writeln!(s, "step {}: {}/{} = {:.4}", k.as_str(), st.correct, st.n, st.accuracy);
    }
    let c = &m.certainty;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let _ = writeln!(
        s,
        "softmax top-1 median correct={} incorrect={}; above {}: {:.4} (accuracy {})",
        fmt(c.median_correct),
        fmt(c.median_incorrect),
        c.threshold,
        c.frac_above,
        fmt(c.acc_above)
    );
    s
}

pub fn describe_agreement(r: &AgreementReport) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    format!(
        "n={} acc_a={:.4} acc_b={:.4} joint={:.4} only_a={:.4} only_b={:.4} neither={:.4} \
         expected_joint={:.4} agreement={:.4} agreement_accuracy={}\n",
        r.n,
        r.accuracy_a,
        r.accuracy_b,
        r.joint_accuracy,
        r.only_a,
        r.only_b,
        r.neither,
        r.expected_joint,
        r.agreement_rate,
        fmt(r.agreement_accuracy)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NegationMode;
    use crate::scoring::{rank_scores, ScoringConfig};

    fn question(id: &str, gold: usize, step: StepDomain) -> Question {
        Question {
            id: id.into(),
            stem: "s".into(),
            query_sentence: "q".into(),
            options: ["a", "b", "c", "d", "e"].map(String::from),
            gold_index: gold,
            step_domain: step,
        }
    }

    /// A result whose options rank in `order` (first = predicted).
    fn result(id: &str, order: [usize; 5], top: f64) -> RankingResult {
        let mut scores = [0.0; 5];
        for (r, &i) in order.iter().enumerate() {
            scores[i] = -(r as f64) * 3.0;
        }
        let mut out = rank_scores(id, scores, &ScoringConfig::default());
        out.softmax_top1 = top;
        out
    }

    fn pred(id: &str, choice: Option<usize>) -> Prediction {
        Prediction {
            question_id: id.into(),
            choice,
        }
    }

    #[test]
    fn accuracy_and_histogram() {
        let qs: Vec<_> = (0..4).map(|i| question(&i.to_string(), 0, StepDomain::Unknown)).collect();
        // Gold ranks 1, 1, 2, 3.
        let rs = vec![
            result("0", [0, 1, 2, 3, 4], 0.9),
            result("1", [0, 2, 1, 3, 4], 0.8),
            result("2", [1, 0, 2, 3, 4], 0.7),
            result("3", [1, 2, 0, 3, 4], 0.6),
        ];
        assert_eq!(accuracy(&rs, &qs).unwrap(), 0.5);
        assert_eq!(rank_histogram(&rs, &qs).unwrap(), [2, 1, 1, 0, 0]);
        let strata = stratify(&rs, &qs).unwrap();
        assert_eq!(strata.len(), 1);
        assert_eq!(strata[&StepDomain::Unknown].accuracy, 0.5);
    }

    #[test]
    fn ten_with_four_correct() {
        let qs: Vec<_> = (0..10).map(|i| question(&format!("q{i}"), 0, StepDomain::Step1)).collect();
        let rs: Vec<_> = (0..10)
            .map(|i| {
                let order = if i < 4 { [0, 1, 2, 3, 4] } else { [1, 0, 2, 3, 4] };
                result(&format!("q{i}"), order, 0.5)
            })
            .collect();
        assert_eq!(accuracy(&rs, &qs).unwrap(), 0.4);
    }

    #[test]
    fn two_strata_by_hand() {
        let qs = vec![
            question("a", 0, StepDomain::Step1),
            question("b", 0, StepDomain::Step1),
            question("c", 0, StepDomain::Step23),
            question("d", 1, StepDomain::Step23),
            question("e", 1, StepDomain::Step23),
        ];
        let o = [0, 1, 2, 3, 4];
        let rs: Vec<_> = ["a", "b", "c", "d", "e"].iter().map(|id| result(id, o, 0.5)).collect();
        let s = stratify(&rs, &qs).unwrap();
        assert_eq!(s[&StepDomain::Step1].accuracy, 1.0);
        assert_eq!(s[&StepDomain::Step23].accuracy, 1.0 / 3.0);
    }

    #[test]
    fn misaligned_ids() {
        let qs = vec![question("a", 0, StepDomain::Unknown)];
        let rs = vec![result("b", [0, 1, 2, 3, 4], 0.5)];
        assert!(matches!(accuracy(&rs, &qs), Err(EvalError::IdMismatch(_))));
        assert!(accuracy(&[], &qs).is_err());
    }

    #[test]
    fn certainty() {
        let qs = vec![question("a", 0, StepDomain::Unknown)];
        let rs = vec![result("a", [0, 1, 2, 3, 4], 0.9)];
        let c = certainty_analysis(&rs, &qs, 0.99).unwrap();
        assert_eq!(c.median_correct, Some(0.9));
        assert_eq!(c.median_incorrect, None);
        assert_eq!(c.acc_above, None);

        let qs: Vec<_> = (0..4).map(|i| question(&i.to_string(), 0, StepDomain::Unknown)).collect();
        let right = [0, 1, 2, 3, 4];
        let wrong = [1, 0, 2, 3, 4];
        let rs = vec![
            result("0", right, 0.9),
            result("1", right, 0.4),
            result("2", wrong, 0.7),
            result("3", wrong, 0.3),
        ];
        let c = certainty_analysis(&rs, &qs, 0.5).unwrap();
        assert_eq!(c.median_correct, Some(0.65));
        assert_eq!(c.median_incorrect, Some(0.5));
        assert_eq!(c.frac_above, 0.5);
        assert_eq!(c.acc_above, Some(0.5));
    }

    #[test]
    fn agreement_hand_fixture() {
        let qs: Vec<_> = (1..=4).map(|i| question(&i.to_string(), 0, StepDomain::Unknown)).collect();
        let a = vec![pred("1", Some(0)), pred("2", Some(0)), pred("3", Some(1)), pred("4", Some(2))];
        let b = vec![pred("1", Some(3)), pred("2", Some(0)), pred("3", Some(0)), pred("4", None)];
        let r = compare_methods(&a, &b, &qs).unwrap();
        assert_eq!(r.joint_accuracy, 0.25);
        assert_eq!(r.only_a, 0.25);
        assert_eq!(r.only_b, 0.25);
        assert_eq!(r.neither, 0.25);
        assert_eq!(r.agreement_rate, 0.25);
        assert_eq!(r.agreement_accuracy, Some(1.0));
        assert_eq!(r.expected_joint, 0.25);
        assert_eq!(r.choice_matrix[2][NONE_SLOT], 1);
    }

    #[test]
    fn identical_sets_agree() {
        let qs: Vec<_> = (0..3).map(|i| question(&i.to_string(), 0, StepDomain::Unknown)).collect();
        let a = vec![pred("0", Some(0)), pred("1", Some(2)), pred("2", Some(0))];
        let r = compare_methods(&a, &a, &qs).unwrap();
        assert_eq!(r.agreement_rate, 1.0);
        assert_eq!(r.joint_accuracy, r.accuracy_a);
    }

    #[test]
    fn failures_never_agree() {
        let qs = vec![question("0", 0, StepDomain::Unknown)];
        let a = vec![pred("0", None)];
        let r = compare_methods(&a, &a, &qs).unwrap();
        assert_eq!(r.n_agree, 0);
        assert_eq!(r.agreement_accuracy, None);
        assert_eq!(r.neither, 1.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn empty_report_is_valid_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let m = score_metrics(&[], &[], 0.99).unwrap();
        assert_eq!(m.rank_histogram, [0; 5]);
        let rep = Report {
            config: serde_json::json!({"mode": NegationMode::IgnoreNegated}),
            rows: Vec::<RankingResult>::new(),
            metrics: m,
        };
        let files = emit_report(dir.path(), "r", &rep).unwrap();
        assert_eq!(files.len(), 3);
        let first: Vec<_> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        emit_report(dir.path(), "r", &rep).unwrap();
        let second: Vec<_> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        assert_eq!(first, second);
        let back: serde_json::Value = serde_json::from_slice(&first[0]).unwrap();
        assert_eq!(back["metrics"]["n"], 0);
    }
}
