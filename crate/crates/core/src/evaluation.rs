//! Agreement metrics between search systems.
//!
//! The core metric is top-k overlap (`sim_k`): the fraction of one system's
//! top-k result ids that another system also returns. A distributed setup
//! is scored by how closely it reproduces the centralized ranking it
//! replaces; relevance-judgment comparison scores both systems against a
//! labeled ground truth instead, with Pearson correlation tying the two
//! score series together. Id sets, not ranks, are compared throughout.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::{ResultRecord, SearchResult};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("expected an id set of {expected}, got {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("query `{query_id}` present only on the {side} side")]
    QuerySetMismatch { query_id: String, side: &'static str },
    #[error("series have {0} and {1} points; need equal lengths of at least 2")]
    SeriesLength(usize, usize),
    #[error("series `{0}` has zero variance; correlation is undefined")]
    DegenerateSeries(&'static str),
    #[error("no queries to aggregate")]
    NoQueries,
    #[error("subject `{0}` lacks a result set on one side")]
    MissingSubject(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// First k distinct item ids of a ranked result, best rank kept.
pub fn top_ids(result: &SearchResult, k: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut ids = Vec::with_capacity(k);
    for item in result.items() {
        if seen.insert(item.doc_id.clone()) {
            ids.push(item.doc_id.clone());
            if ids.len() == k {
                break;
            }
        }
    }
    ids
}

/// The same ids as an order-free set, ready for `sim_k`.
pub fn id_set(ids: &[String]) -> BTreeSet<String> {
    ids.iter().cloned().collect()
}

/// Groups flat result records back into per-query top-k id sets.
///
/// Records are taken in rank order within each query; duplicate doc ids
/// collapse, and collection stops once k distinct ids are in the set.
pub fn record_id_sets(
    records: &[ResultRecord],
    k: usize,
) -> BTreeMap<String, BTreeSet<String>> {
    let mut by_query: BTreeMap<String, Vec<&ResultRecord>> = BTreeMap::new();
    for record in records {
        by_query.entry(record.query_id.clone()).or_default().push(record);
    }
    let mut sets = BTreeMap::new();
    for (query_id, mut rows) in by_query {
        rows.sort_by_key(|r| r.rank);
        let mut ids = BTreeSet::new();
        for row in rows {
            ids.insert(row.doc_id.clone());
            if ids.len() == k {
                break;
            }
        }
        sets.insert(query_id, ids);
    }
    sets
}

/// Overlap fraction |reference ∩ candidate| / k between two id sets.
///
/// Both sets must hold exactly k ids; the metric is symmetric in its
/// arguments.
pub fn sim_k(
    reference: &BTreeSet<String>,
    candidate: &BTreeSet<String>,
    k: usize,
) -> Result<f64, EvaluationError> {
    if k == 0 {
        return Err(EvaluationError::SizeMismatch {
            expected: 1,
            found: 0,
        });
    }
    for set in [reference, candidate] {
        if set.len() != k {
            return Err(EvaluationError::SizeMismatch {
                expected: k,
                found: set.len(),
            });
        }
    }
    let hits = reference.intersection(candidate).count();
    Ok(hits as f64 / k as f64)
}

/// Per-query agreement between two systems: how many of the k ids they
/// share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOverlap {
    pub query_id: String,
    pub overlap_count: usize,
}

/// Aggregate agreement over a query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub k: usize,
    pub per_query: Vec<QueryOverlap>,
    pub mean_sim_k: f64,
    /// histogram[c] counts queries whose overlap was exactly c ids; k+1
    /// buckets, summing to the query count.
    pub histogram: Vec<usize>,
    /// Correlation against a second comparison's per-query sims, when one
    /// was computed; `mean_sim_k` alone never sets this.
    pub pearson: Option<f64>,
}

/// Scores one system's top-k id sets against a baseline's, query by query.
///
/// Both maps must cover exactly the same query ids.
pub fn mean_sim_k(
    baseline: &BTreeMap<String, BTreeSet<String>>,
    candidate: &BTreeMap<String, BTreeSet<String>>,
    k: usize,
) -> Result<OverlapReport, EvaluationError> {
    for query_id in baseline.keys() {
        if !candidate.contains_key(query_id) {
            return Err(EvaluationError::QuerySetMismatch {
                query_id: query_id.clone(),
                side: "baseline",
            });
        }
    }
    for query_id in candidate.keys() {
        if !baseline.contains_key(query_id) {
            return Err(EvaluationError::QuerySetMismatch {
                query_id: query_id.clone(),
                side: "candidate",
            });
        }
    }
    if baseline.is_empty() {
        return Err(EvaluationError::NoQueries);
    }
    let mut per_query = Vec::with_capacity(baseline.len());
    let mut histogram = vec![0usize; k + 1];
    let mut total = 0usize;
    for (query_id, reference) in baseline {
        let sim = sim_k(reference, &candidate[query_id], k)?;
        let overlap_count = reference.intersection(&candidate[query_id]).count();
        debug_assert_eq!(sim, overlap_count as f64 / k as f64);
        total += overlap_count;
        histogram[overlap_count] += 1;
        per_query.push(QueryOverlap {
            query_id: query_id.clone(),
            overlap_count,
        });
    }
    Ok(OverlapReport {
        k,
        mean_sim_k: total as f64 / (k * baseline.len()) as f64,
        per_query,
        histogram,
        pearson: None,
    })
}

impl OverlapReport {
    pub fn per_query_sims(&self) -> Vec<f64> {
        self.per_query
            .iter()
            .map(|row| row.overlap_count as f64 / self.k as f64)
            .collect()
    }
}

/// Pearson correlation coefficient between two equal-length series.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvaluationError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvaluationError::SeriesLength(xs.len(), ys.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(EvaluationError::DegenerateSeries("x"));
    }
    if syy == 0.0 {
        return Err(EvaluationError::DegenerateSeries("y"));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

pub fn write_overlap_csv(report: &OverlapReport, path: &Path) -> Result<(), EvaluationError> {
    let io_err = |e: std::io::Error| EvaluationError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut out = std::fs::File::create(path).map_err(io_err)?;
    writeln!(out, "query_id,overlap_count,sim_k").map_err(io_err)?;
    for row in &report.per_query {
        let sim = row.overlap_count as f64 / report.k as f64;
        writeln!(out, "{},{},{}", row.query_id, row.overlap_count, sim).map_err(io_err)?;
    }
    writeln!(out, "mean,,{}", report.mean_sim_k).map_err(io_err)?;
    Ok(())
}

pub fn write_overlap_json(report: &OverlapReport, path: &Path) -> Result<(), EvaluationError> {
    let io_err = |e: std::io::Error| EvaluationError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let text = serde_json::to_string_pretty(report).expect("report serialization cannot fail");
    std::fs::write(path, text + "\n").map_err(io_err)
}

/// Relevance labels: for each subject (query), the set of expected ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub expected: BTreeMap<String, BTreeSet<String>>,
}

/// One subject scored under two systems against the same ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectComparison {
    pub subject_id: String,
    pub baseline_sim: f64,
    pub candidate_sim: f64,
}

/// Paired per-subject agreement, plus how strongly the two series co-vary.
/// `pearson_r` is None when either series is constant (correlation
/// undefined) or there is a single subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyComparison {
    pub k: usize,
    pub per_subject: Vec<SubjectComparison>,
    pub pearson_r: Option<f64>,
}

/// Scores two systems' top-k sets against labeled expectations.
///
/// Every labeled subject must have a result set on both sides; label and
/// result sets must all hold exactly k ids.
pub fn survey_compare(
    truth: &GroundTruth,
    baseline: &BTreeMap<String, BTreeSet<String>>,
    candidate: &BTreeMap<String, BTreeSet<String>>,
    k: usize,
) -> Result<SurveyComparison, EvaluationError> {
    if truth.expected.is_empty() {
        return Err(EvaluationError::NoQueries);
    }
    let mut per_subject = Vec::with_capacity(truth.expected.len());
    for (subject_id, expected) in &truth.expected {
        let (Some(base), Some(cand)) = (baseline.get(subject_id), candidate.get(subject_id))
        else {
            return Err(EvaluationError::MissingSubject(subject_id.clone()));
        };
        per_subject.push(SubjectComparison {
            subject_id: subject_id.clone(),
            baseline_sim: sim_k(expected, base, k)?,
            candidate_sim: sim_k(expected, cand, k)?,
        });
    }
    let xs: Vec<f64> = per_subject.iter().map(|r| r.baseline_sim).collect();
    let ys: Vec<f64> = per_subject.iter().map(|r| r.candidate_sim).collect();
    let pearson_r = match pearson(&xs, &ys) {
        Ok(r) => Some(r),
        Err(EvaluationError::DegenerateSeries(_)) | Err(EvaluationError::SeriesLength(..)) => None,
        Err(other) => return Err(other),
    };
    Ok(SurveyComparison {
        k,
        per_subject,
        pearson_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn result_map(rows: &[(&str, &[&str])]) -> BTreeMap<String, BTreeSet<String>> {
        rows.iter().map(|(q, ids)| (q.to_string(), set(ids))).collect()
    }

    #[test]
    fn sim_k_counts_shared_ids() {
        let a = set(&["a", "b", "c", "d"]);
        let b = set(&["d", "c", "x", "y"]);
        assert_eq!(sim_k(&a, &b, 4).unwrap(), 0.5);
        assert_eq!(sim_k(&b, &a, 4).unwrap(), 0.5); // symmetric
        assert_eq!(sim_k(&a, &a, 4).unwrap(), 1.0);
        assert_eq!(sim_k(&a, &set(&["p", "q", "r", "s"]), 4).unwrap(), 0.0);
        // 6 shared of k=10, the modal overlap in desk runs.
        let r: BTreeSet<String> = (0..10).map(|i| format!("r{i}")).collect();
        let mut c: BTreeSet<String> = (0..6).map(|i| format!("r{i}")).collect();
        c.extend((0..4).map(|i| format!("c{i}")));
        assert_eq!(sim_k(&r, &c, 10).unwrap(), 0.6);
    }

    #[test]
    fn record_id_sets_regroups_by_rank_and_dedups() {
        let row = |q: &str, rank: usize, doc: &str| ResultRecord {
            query_id: q.to_string(),
            rank,
            site: "s".to_string(),
            doc_id: doc.to_string(),
            score: 1.0 / rank as f64,
        };
        // Out-of-order ranks, a duplicate id at q1 rank 2, and a third query
        // with fewer rows than k.
        let records = vec![
            row("q1", 3, "c"),
            row("q1", 1, "a"),
            row("q1", 2, "a"),
            row("q1", 4, "b"),
            row("q1", 5, "z"),
            row("q2", 2, "y"),
            row("q2", 1, "x"),
            row("q3", 1, "only"),
        ];
        let sets = record_id_sets(&records, 3);
        assert_eq!(sets["q1"], set(&["a", "c", "b"]));
        assert_eq!(sets["q2"], set(&["x", "y"]));
        assert_eq!(sets["q3"], set(&["only"]));
        assert_eq!(sets.len(), 3);
    }

    #[test]
    fn sim_k_rejects_wrong_sizes() {
        let a = set(&["a", "b"]);
        assert!(matches!(
            sim_k(&a, &set(&["a", "b", "c"]), 2),
            Err(EvaluationError::SizeMismatch { expected: 2, found: 3 })
        ));
        assert!(matches!(
            sim_k(&a, &a, 3),
            Err(EvaluationError::SizeMismatch { .. })
        ));
        assert!(sim_k(&BTreeSet::new(), &BTreeSet::new(), 0).is_err());
    }

    #[test]
    fn pearson_matches_hand_computation() {
        // xs=(1,2,3), ys=(1,2,4): sxy=3, sxx=2, syy=14/3.
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.981_980_506_061_965_7).abs() < 1e-9, "r={r}");

        let exact = pearson(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap();
        assert!((exact - 1.0).abs() < 1e-12);
        let anti = pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((anti + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_is_invariant_under_positive_affine_transforms() {
        let xs = [0.3, 0.9, 0.1, 0.7, 0.4];
        let ys = [1.0, 0.2, 0.5, 0.8, 0.3];
        let r = pearson(&xs, &ys).unwrap();
        let xs2: Vec<f64> = xs.iter().map(|x| 3.5 * x + 2.0).collect();
        let ys2: Vec<f64> = ys.iter().map(|y| 0.25 * y - 7.0).collect();
        let r2 = pearson(&xs2, &ys2).unwrap();
        assert!((r - r2).abs() < 1e-12);
    }

    #[test]
    fn pearson_rejects_degenerate_input() {
        assert!(matches!(
            pearson(&[1.0], &[1.0]),
            Err(EvaluationError::SeriesLength(1, 1))
        ));
        assert!(matches!(
            pearson(&[2.0, 2.0], &[1.0, 3.0]),
            Err(EvaluationError::DegenerateSeries("x"))
        ));
        assert!(matches!(
            pearson(&[1.0, 3.0], &[5.0, 5.0]),
            Err(EvaluationError::DegenerateSeries("y"))
        ));
    }

    #[test]
    fn mean_sim_k_aggregates_counts_and_histogram() {
        let baseline = result_map(&[
            ("q0", &["a", "b"]),
            ("q1", &["a", "b"]),
            ("q2", &["a", "b"]),
        ]);
        let candidate = result_map(&[
            ("q0", &["a", "b"]),
            ("q1", &["a", "x"]),
            ("q2", &["x", "y"]),
        ]);
        let report = mean_sim_k(&baseline, &candidate, 2).unwrap();
        assert_eq!(report.per_query.len(), 3);
        // Overlaps 2, 1, 0 of k=2 → mean (2+1+0)/(2·3) = 0.5.
        assert!((report.mean_sim_k - 0.5).abs() < 1e-12);
        assert_eq!(report.histogram, vec![1, 1, 1]);
        assert_eq!(report.per_query_sims(), vec![1.0, 0.5, 0.0]);
        assert_eq!(report.pearson, None);

        let identical = mean_sim_k(&baseline, &baseline, 2).unwrap();
        assert_eq!(identical.mean_sim_k, 1.0);
        assert_eq!(identical.histogram, vec![0, 0, 3]);
    }

    #[test]
    fn mean_sim_k_requires_matching_query_sets() {
        let baseline = result_map(&[("q0", &["a", "b"]), ("q1", &["a", "b"])]);
        let candidate = result_map(&[("q0", &["a", "b"])]);
        assert!(matches!(
            mean_sim_k(&baseline, &candidate, 2),
            Err(EvaluationError::QuerySetMismatch { .. })
        ));
        assert!(matches!(
            mean_sim_k(&BTreeMap::new(), &BTreeMap::new(), 2),
            Err(EvaluationError::NoQueries)
        ));
    }

    #[test]
    fn random_disjoint_universes_overlap_near_zero() {
        // Monte-Carlo-style oracle without randomness: candidates drawn
        // from an id universe disjoint from the baseline's always score 0.
        let mut rows_base = Vec::new();
        let mut rows_cand = Vec::new();
        for q in 0..50 {
            let base: Vec<String> = (0..10).map(|i| format!("b{q}-{i}")).collect();
            let cand: Vec<String> = (0..10).map(|i| format!("c{q}-{i}")).collect();
            rows_base.push((format!("q{q}"), id_set(&base)));
            rows_cand.push((format!("q{q}"), id_set(&cand)));
        }
        let baseline: BTreeMap<_, _> = rows_base.into_iter().collect();
        let candidate: BTreeMap<_, _> = rows_cand.into_iter().collect();
        let report = mean_sim_k(&baseline, &candidate, 10).unwrap();
        assert_eq!(report.mean_sim_k, 0.0);
        assert_eq!(report.histogram[0], 50);
    }

    #[test]
    fn report_files_round_trip() {
        let baseline = result_map(&[("q0", &["a", "b"]), ("q1", &["a", "b"])]);
        let candidate = result_map(&[("q0", &["a", "b"]), ("q1", &["a", "x"])]);
        let report = mean_sim_k(&baseline, &candidate, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let csv_path = dir.path().join("report.csv");
        write_overlap_csv(&report, &csv_path).unwrap();
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        assert!(csv.starts_with("query_id,overlap_count,sim_k\n"));
        assert!(csv.contains("q0,2,1\n"));
        assert!(csv.contains("q1,1,0.5\n"));
        assert!(csv.ends_with("mean,,0.75\n"));

        let json_path = dir.path().join("report.json");
        write_overlap_json(&report, &json_path).unwrap();
        let text = std::fs::read_to_string(&json_path).unwrap();
        let back: OverlapReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn survey_compare_scores_both_systems_against_labels() {
        let mut truth = GroundTruth::default();
        truth.expected.insert("s0".into(), set(&["a", "b", "c"]));
        truth.expected.insert("s1".into(), set(&["d", "e", "f"]));
        truth.expected.insert("s2".into(), set(&["g", "h", "i"]));

        // Baseline matches 3/3, 2/3, 1/3; candidate matches 2/3, 1/3, 0/3:
        // proportional variation, so the series correlate exactly.
        let baseline = result_map(&[
            ("s0", &["a", "b", "c"]),
            ("s1", &["d", "e", "x"]),
            ("s2", &["g", "x", "y"]),
        ]);
        let candidate = result_map(&[
            ("s0", &["a", "b", "x"]),
            ("s1", &["d", "x", "y"]),
            ("s2", &["x", "y", "z"]),
        ]);
        let cmp = survey_compare(&truth, &baseline, &candidate, 3).unwrap();
        assert_eq!(cmp.per_subject.len(), 3);
        let sims: Vec<(f64, f64)> = cmp
            .per_subject
            .iter()
            .map(|r| (r.baseline_sim, r.candidate_sim))
            .collect();
        let third = 1.0 / 3.0;
        assert!((sims[0].0 - 1.0).abs() < 1e-12 && (sims[0].1 - 2.0 * third).abs() < 1e-12);
        assert!((sims[1].0 - 2.0 * third).abs() < 1e-12 && (sims[1].1 - third).abs() < 1e-12);
        assert!((sims[2].0 - third).abs() < 1e-12 && sims[2].1 == 0.0);
        let r = cmp.pearson_r.unwrap();
        assert!((r - 1.0).abs() < 1e-9, "r={r}");
    }

    #[test]
    fn survey_compare_surfaces_missing_subjects_and_constant_series() {
        let mut truth = GroundTruth::default();
        truth.expected.insert("s0".into(), set(&["a"]));
        truth.expected.insert("s1".into(), set(&["b"]));

        let full = result_map(&[("s0", &["a"]), ("s1", &["b"])]);
        let partial = result_map(&[("s0", &["a"])]);
        assert!(matches!(
            survey_compare(&truth, &full, &partial, 1),
            Err(EvaluationError::MissingSubject(s)) if s == "s1"
        ));

        // Identical (hence constant) series: the pairs are reported, the
        // correlation is undefined.
        let cmp = survey_compare(&truth, &full, &full, 1).unwrap();
        assert_eq!(cmp.per_subject.len(), 2);
        assert_eq!(cmp.pearson_r, None);
    }
}
