use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::storage::{Qrels, Run};

fn no_relevant() -> Error {
    Error::NoRelevantDocs {
        query: String::new(),
    }
}

fn relevant_count(judgments: &BTreeMap<u64, u32>) -> usize {
    judgments.values().filter(|&&r| r > 0).count()
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("metric cutoff k must be positive".into()));
    }
    Ok(())
}

/// DCG with gain = relevance and discount `1 / log2(rank + 1)`, normalized
/// by the ideal DCG over the judgments.
pub fn ndcg_at_k(ranking: &[u64], judgments: &BTreeMap<u64, u32>, k: usize) -> Result<f64> {
    check_k(k)?;
    if relevant_count(judgments) == 0 {
        return Err(no_relevant());
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| judgments.get(d).copied().unwrap_or(0) as f64 * discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = judgments.values().copied().filter(|&r| r > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| r as f64 * discount(i + 1))
        .sum();
    Ok(dcg / idcg)
}

/// Fraction of relevant documents found in the first `k` positions.
pub fn recall_at_k(ranking: &[u64], judgments: &BTreeMap<u64, u32>, k: usize) -> Result<f64> {
    check_k(k)?;
    let total = relevant_count(judgments);
    if total == 0 {
        return Err(no_relevant());
    }
    let hits = ranking
        .iter()
        .take(k)
        .filter(|d| judgments.get(d).is_some_and(|&r| r > 0))
        .count();
    Ok(hits as f64 / total as f64)
}

/// Mean of precision at the rank of each relevant document; relevant
/// documents missing from the ranking contribute zero.
pub fn average_precision(ranking: &[u64], judgments: &BTreeMap<u64, u32>) -> Result<f64> {
    let total = relevant_count(judgments);
    if total == 0 {
        return Err(no_relevant());
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if judgments.get(d).is_some_and(|&r| r > 0) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

/// MAP over every judged query that has a relevant document. Queries
/// missing from the run score zero.
pub fn mean_average_precision(run: &Run, qrels: &Qrels) -> Result<f64> {
    let empty = Vec::new();
    let aps: Vec<f64> = qrels
        .iter()
        .filter_map(|(q, j)| average_precision(run.get(q).unwrap_or(&empty), j).ok())
        .collect();
    if aps.is_empty() {
        return Err(no_relevant());
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub query: String,
    pub ndcg: f64,
    pub recall: f64,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub k: usize,
    pub evaluated: usize,
    /// Queries without any relevant judgment; left out of the means.
    pub excluded: Vec<String>,
    pub mean_ndcg: f64,
    pub mean_recall: f64,
    pub map: f64,
    pub per_query: Vec<QueryMetrics>,
}

/// Scores a run against qrels. Both must cover the same query ids.
pub fn evaluate(run: &Run, qrels: &Qrels, k: usize) -> Result<QualityReport> {
    check_k(k)?;
    let missing_in_run: Vec<String> = qrels.keys().filter(|q| !run.contains_key(*q)).cloned().collect();
    let missing_in_qrels: Vec<String> = run.keys().filter(|q| !qrels.contains_key(*q)).cloned().collect();
    if !missing_in_run.is_empty() || !missing_in_qrels.is_empty() {
        return Err(Error::MismatchedQueries {
            missing_in_run,
            missing_in_qrels,
        });
    }
    let mut per_query = Vec::new();
    let mut excluded = Vec::new();
    for (q, judgments) in qrels {
        let ranking = &run[q];
        if relevant_count(judgments) == 0 {
            excluded.push(q.clone());
            continue;
        }
        per_query.push(QueryMetrics {
            query: q.clone(),
            ndcg: ndcg_at_k(ranking, judgments, k)?,
            recall: recall_at_k(ranking, judgments, k)?,
            average_precision: average_precision(ranking, judgments)?,
        });
    }
    if per_query.is_empty() {
        return Err(Error::NoRelevantDocs {
            query: "every query".into(),
        });
    }
    let n = per_query.len() as f64;
    let mean = |f: fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    Ok(QualityReport {
        k,
        evaluated: per_query.len(),
        excluded,
        mean_ndcg: mean(|m| m.ndcg),
        mean_recall: mean(|m| m.recall),
        map: mean(|m| m.average_precision),
        per_query,
    })
}
