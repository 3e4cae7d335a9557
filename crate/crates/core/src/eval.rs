//! Retrieval and classification metrics over hash codes.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dataset::LabelVector;
use crate::error::{Error, Result};
use crate::hashing::{HashCode, HashCodeSet};

pub const DEFAULT_RADIUS: usize = 2;

pub fn hamming_distance(a: &HashCode, b: &HashCode) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("code lengths {} and {} differ", a.len(), b.len())));
    }
    Ok(hamming_unchecked(a, b))
}

#[inline]
fn hamming_unchecked(a: &HashCode, b: &HashCode) -> usize {
    a.words()
        .iter()
        .zip(b.words())
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum()
}

/// Indices of database codes within `radius` of `query`, ascending.
pub fn radius_lookup(query: &HashCode, database: &HashCodeSet, radius: usize) -> Result<Vec<usize>> {
    if query.len() != database.code_length() {
        return Err(Error::shape(format!(
            "query has {} bits, database has {}",
            query.len(),
            database.code_length()
        )));
    }
    Ok(database
        .codes()
        .iter()
        .enumerate()
        .filter(|(_, c)| hamming_unchecked(query, c) <= radius)
        .map(|(i, _)| i)
        .collect())
}

/// How queries that retrieve nothing enter averaged precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyRetrieval {
    /// Counted with precision 0.
    #[default]
    Zero,
    /// Left out of the precision average.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `NaN` until filled by [`mean_average_precision`].
    pub map: f64,
    pub radius: usize,
    pub n_queries: usize,
    /// Queries whose class has no database member; excluded from recall.
    pub recall_skipped: usize,
    pub empty_retrievals: usize,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn check_labels(codes: &HashCodeSet, labels: &LabelVector, what: &str) -> Result<()> {
    if codes.len() != labels.len() {
        return Err(Error::shape(format!("{} {what} codes but {} labels", codes.len(), labels.len())));
    }
    Ok(())
}

/// Hamming-radius lookup precision, recall and F1, macro-averaged over
/// queries. Empty retrievals count as precision 0.
pub fn lookup_metrics(
    queries: &HashCodeSet,
    query_labels: &LabelVector,
    database: &HashCodeSet,
    db_labels: &LabelVector,
    radius: usize,
) -> Result<RetrievalMetrics> {
    lookup_metrics_with(queries, query_labels, database, db_labels, radius, EmptyRetrieval::Zero)
}

pub fn lookup_metrics_with(
    queries: &HashCodeSet,
    query_labels: &LabelVector,
    database: &HashCodeSet,
    db_labels: &LabelVector,
    radius: usize,
    empty: EmptyRetrieval,
) -> Result<RetrievalMetrics> {
    check_labels(queries, query_labels, "query")?;
    check_labels(database, db_labels, "database")?;
    if queries.code_length() != database.code_length() {
        return Err(Error::shape("query and database code lengths differ"));
    }
    let n_classes = query_labels.n_classes().max(db_labels.n_classes());
    let mut class_count = vec![0usize; n_classes];
    for &l in db_labels.as_slice() {
        class_count[l] += 1;
    }
    // (precision or None when skipped, recall or None when undefined, empty?)
    let per_query: Vec<(Option<f64>, Option<f64>, bool)> = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.get(qi);
            let label = query_labels.get(qi);
            let mut retrieved = 0usize;
            let mut relevant = 0usize;
            for (i, c) in database.codes().iter().enumerate() {
                if hamming_unchecked(q, c) <= radius {
                    retrieved += 1;
                    if db_labels.get(i) == label {
                        relevant += 1;
                    }
                }
            }
            let precision = if retrieved > 0 {
                Some(relevant as f64 / retrieved as f64)
            } else {
                match empty {
                    EmptyRetrieval::Zero => Some(0.0),
                    EmptyRetrieval::Skip => None,
                }
            };
            let recall = (class_count[label] > 0).then(|| relevant as f64 / class_count[label] as f64);
            (precision, recall, retrieved == 0)
        })
        .collect();

    let mut p_sum = 0.0;
    let mut p_n = 0usize;
    let mut r_sum = 0.0;
    let mut r_n = 0usize;
    let mut empty_count = 0;
    for (p, r, e) in &per_query {
        if let Some(p) = p {
            p_sum += p;
            p_n += 1;
        }
        if let Some(r) = r {
            r_sum += r;
            r_n += 1;
        }
        if *e {
            empty_count += 1;
        }
    }
    let precision = if p_n > 0 { p_sum / p_n as f64 } else { 0.0 };
    let recall = if r_n > 0 { r_sum / r_n as f64 } else { 0.0 };
    let skipped = queries.len() - r_n;
    if skipped > 0 {
        log::warn!("{skipped} queries have no same-class database items; excluded from recall");
    }
    Ok(RetrievalMetrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
        map: f64::NAN,
        radius,
        n_queries: queries.len(),
        recall_skipped: skipped,
        empty_retrievals: empty_count,
    })
}

/// Average precision of one query over the full database ranked by
/// ascending Hamming distance, ties by ascending index. `None` when the
/// query has no positive.
pub fn average_precision(query: &HashCode, label: usize, database: &HashCodeSet, db_labels: &LabelVector) -> Option<f64> {
    let b = database.code_length();
    // counting sort by distance keeps index order inside each bucket
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); b + 1];
    for (i, c) in database.codes().iter().enumerate() {
        buckets[hamming_unchecked(query, c)].push(i);
    }
    let mut hits = 0usize;
    let mut rank = 0usize;
    let mut sum = 0.0;
    for bucket in &buckets {
        for &i in bucket {
            rank += 1;
            if db_labels.get(i) == label {
                hits += 1;
                sum += hits as f64 / rank as f64;
            }
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Mean of [`average_precision`] over queries with at least one positive.
pub fn mean_average_precision(
    queries: &HashCodeSet,
    query_labels: &LabelVector,
    database: &HashCodeSet,
    db_labels: &LabelVector,
) -> Result<f64> {
    check_labels(queries, query_labels, "query")?;
    check_labels(database, db_labels, "database")?;
    if database.is_empty() {
        return Err(Error::invalid("empty database"));
    }
    if queries.code_length() != database.code_length() {
        return Err(Error::shape("query and database code lengths differ"));
    }
    let aps: Vec<Option<f64>> = (0..queries.len())
        .into_par_iter()
        .map(|qi| average_precision(queries.get(qi), query_labels.get(qi), database, db_labels))
        .collect();
    let (sum, n) = aps.iter().flatten().fold((0.0, 0usize), |(s, n), ap| (s + ap, n + 1));
    Ok(if n > 0 { sum / n as f64 } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub n_instances: usize,
    /// Row = true class, column = class of the nearest anchor.
    pub confusion: DMatrix<usize>,
}

/// Assigns every code to its Hamming-nearest anchor (ties to the lowest
/// anchor index) and scores the anchor's class against the label.
pub fn anchor_assignment_accuracy(
    codes: &HashCodeSet,
    labels: &LabelVector,
    anchor_codes: &HashCodeSet,
    class_of_anchor: &[usize],
) -> Result<AccuracyReport> {
    check_labels(codes, labels, "instance")?;
    if anchor_codes.len() != class_of_anchor.len() {
        return Err(Error::shape(format!(
            "{} anchor codes but {} anchor classes",
            anchor_codes.len(),
            class_of_anchor.len()
        )));
    }
    if anchor_codes.is_empty() {
        return Err(Error::invalid("no anchors"));
    }
    if codes.code_length() != anchor_codes.code_length() {
        return Err(Error::shape("instance and anchor code lengths differ"));
    }
    let n_classes = labels
        .n_classes()
        .max(class_of_anchor.iter().copied().max().map_or(0, |m| m + 1));
    let assigned: Vec<usize> = codes
        .codes()
        .par_iter()
        .map(|c| {
            let mut best = 0;
            let mut best_d = usize::MAX;
            for (a, ac) in anchor_codes.codes().iter().enumerate() {
                let d = hamming_unchecked(c, ac);
                if d < best_d {
                    best_d = d;
                    best = a;
                }
            }
            class_of_anchor[best]
        })
        .collect();
    let mut confusion = DMatrix::<usize>::zeros(n_classes, n_classes);
    let mut correct = 0;
    for (i, &pred) in assigned.iter().enumerate() {
        let truth = labels.get(i);
        confusion[(truth, pred)] += 1;
        if truth == pred {
            correct += 1;
        }
    }
    let n = codes.len();
    Ok(AccuracyReport {
        accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
        n_instances: n,
        confusion,
    })
}

/// One experiment result in the sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub code_length: usize,
    pub s: usize,
    pub radius: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map: f64,
    pub accuracy_train: f64,
    pub accuracy_test: f64,
    /// Trial index, or `"mean"` for the aggregate row.
    pub trial: String,
    /// `classes` when the seen/unseen split is redrawn per trial, `queries`
    /// when only the query/database split is.
    pub resplit: String,
}

impl MetricsRow {
    pub const HEADER: &'static str =
        "method,code_length,s,radius,precision,recall,f1,map,accuracy_train,accuracy_test,trial,resplit";

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        write!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.method,
            self.code_length,
            self.s,
            self.radius,
            self.precision,
            self.recall,
            self.f1,
            self.map,
            self.accuracy_train,
            self.accuracy_test,
            self.trial,
            self.resplit
        )
        .unwrap();
        out
    }

    /// Field-wise mean of metric columns, labelled `"mean"`.
    pub fn mean(rows: &[MetricsRow]) -> Option<MetricsRow> {
        let first = rows.first()?;
        let n = rows.len() as f64;
        let avg = |f: fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let precision = avg(|r| r.precision);
        let recall = avg(|r| r.recall);
        Some(MetricsRow {
            precision,
            recall,
            f1: f1_score(precision, recall),
            map: avg(|r| r.map),
            accuracy_train: avg(|r| r.accuracy_train),
            accuracy_test: avg(|r| r.accuracy_test),
            trial: "mean".into(),
            ..first.clone()
        })
    }
}
