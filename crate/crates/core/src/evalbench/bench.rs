use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use super::dense::FloatIndex;
use super::metrics::{evaluate, QualityReport};
use crate::engine::{query_batch, QueryOptions, QueryStats};
use crate::error::Result;
use crate::model::{PatchMatrix, RankedResult, RetrievalIndex};
use crate::storage::{storage_stats, Qrels, Run, StorageStats};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Queries run once and discarded before timing.
    pub warmup: usize,
    pub options: QueryOptions,
    /// Cutoff for nDCG and recall.
    pub eval_k: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 10,
            options: QueryOptions::default(),
            eval_k: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles.
    pub fn from_durations(d: &[Duration]) -> Self {
        let mut ms: Vec<f64> = d.iter().map(|x| x.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let pct = |p: f64| {
            if ms.is_empty() {
                return 0.0;
            }
            let rank = ((p / 100.0) * ms.len() as f64).ceil() as usize;
            ms[rank.clamp(1, ms.len()) - 1]
        };
        Self {
            mean_ms: if ms.is_empty() { 0.0 } else { ms.iter().sum::<f64>() / ms.len() as f64 },
            p50_ms: pct(50.0),
            p95_ms: pct(95.0),
            p99_ms: pct(99.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageMeans {
    pub prune_ms: f64,
    pub encode_ms: f64,
    pub candidates_ms: f64,
    pub rerank_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub label: String,
    pub queries: usize,
    pub wall_s: f64,
    /// Completed queries per wall-clock second at the recorded thread count.
    pub qps: f64,
    pub latency: LatencySummary,
    pub stages: Option<StageMeans>,
    pub similarity_evaluations: u64,
    pub mean_candidates: f64,
    pub quality: Option<QualityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub threads: usize,
    pub warmup: usize,
    pub pipeline: PipelineReport,
    /// Exhaustive float MaxSim over the uncompressed corpus, when supplied.
    pub baseline: Option<PipelineReport>,
    pub storage: StorageStats,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn quality(
    queries: &[PatchMatrix],
    results: &[RankedResult],
    qrels: Option<&Qrels>,
    k: usize,
) -> Result<Option<QualityReport>> {
    let Some(qrels) = qrels else { return Ok(None) };
    let run: Run = queries
        .iter()
        .zip(results)
        .map(|(q, r)| (q.doc_id().to_string(), r.doc_ids()))
        .collect();
    evaluate(&run, qrels, k).map(Some)
}

fn pipeline_report(
    stats: &[QueryStats],
    wall: Duration,
    quality: Option<QualityReport>,
) -> PipelineReport {
    let n = stats.len().max(1) as f64;
    let mean = |f: fn(&QueryStats) -> Duration| stats.iter().map(|s| ms(f(s))).sum::<f64>() / n;
    let lat: Vec<Duration> = stats.iter().map(|s| s.timings.total).collect();
    PipelineReport {
        label: "compressed".into(),
        queries: stats.len(),
        wall_s: wall.as_secs_f64(),
        qps: stats.len() as f64 / wall.as_secs_f64(),
        latency: LatencySummary::from_durations(&lat),
        stages: Some(StageMeans {
            prune_ms: mean(|s| s.timings.prune),
            encode_ms: mean(|s| s.timings.encode),
            candidates_ms: mean(|s| s.timings.candidates),
            rerank_ms: mean(|s| s.timings.rerank),
        }),
        similarity_evaluations: stats.iter().map(|s| s.similarity_evaluations).sum(),
        mean_candidates: stats.iter().map(|s| s.candidates as f64).sum::<f64>() / n,
        quality,
    }
}

/// Times the compressed pipeline (and optionally the float baseline) on
/// the current rayon pool and scores both against `qrels` if given.
pub fn bench(
    index: &RetrievalIndex,
    queries: &[PatchMatrix],
    qrels: Option<&Qrels>,
    baseline: Option<&FloatIndex>,
    cfg: &BenchConfig,
) -> Result<MetricsReport> {
    let top_k = cfg.options.top_k.unwrap_or(index.config().top_k);
    let warm = &queries[..cfg.warmup.min(queries.len())];
    query_batch(index, warm, &cfg.options)?;
    let out = query_batch(index, queries, &cfg.options)?;
    let q = quality(queries, &out.results, qrels, cfg.eval_k)?;
    let pipeline = pipeline_report(&out.stats, out.wall, q);

    let baseline = match baseline {
        Some(float) => {
            for w in warm {
                float.search(w, top_k)?;
            }
            let start = Instant::now();
            let timed: Vec<(RankedResult, Duration)> = queries
                .par_iter()
                .map(|q| {
                    let t = Instant::now();
                    float.search(q, top_k).map(|r| (r, t.elapsed()))
                })
                .collect::<Result<_>>()?;
            let wall = start.elapsed();
            let (results, lat): (Vec<_>, Vec<_>) = timed.into_iter().unzip();
            let total_evals: u64 = queries
                .iter()
                .map(|q| (q.num_patches() as u64) * (float.num_docs() as u64))
                .sum();
            Some(PipelineReport {
                label: "float-exhaustive".into(),
                queries: queries.len(),
                wall_s: wall.as_secs_f64(),
                qps: queries.len() as f64 / wall.as_secs_f64(),
                latency: LatencySummary::from_durations(&lat),
                stages: None,
                similarity_evaluations: total_evals,
                mean_candidates: float.num_docs() as f64,
                quality: quality(queries, &results, qrels, cfg.eval_k)?,
            })
        }
        None => None,
    };

    Ok(MetricsReport {
        threads: out.threads,
        warmup: warm.len(),
        pipeline,
        baseline,
        storage: storage_stats(index),
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `key: value` lines with dotted keys; per-query metrics are left to
    /// the JSON form.
    pub fn to_text(&self) -> String {
        key_value_text(self)
    }
}

/// Renders any serializable value as `key: value` lines with dotted keys.
/// Fields named `per_query` are skipped.
pub fn key_value_text<T: Serialize>(value: &T) -> String {
    let mut out = String::new();
    flatten("", &serde_json::to_value(value).expect("value serializes"), &mut out);
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                if k != "per_query" {
                    flatten(&key(k), v, out);
                }
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), v, out);
            }
        }
        Value::Null => out.push_str(&format!("{prefix}: none\n")),
        Value::String(s) => out.push_str(&format!("{prefix}: {s}\n")),
        other => out.push_str(&format!("{prefix}: {other}\n")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{build_index, EngineConfig};
    use crate::evalbench::{gen_synthetic, SyntheticSpec};

    #[test]
    fn percentiles_use_nearest_rank() {
        let d: Vec<Duration> = (1..=100).map(Duration::from_millis).collect();
        let s = LatencySummary::from_durations(&d);
        assert_eq!((s.p50_ms, s.p95_ms, s.p99_ms), (50.0, 95.0, 99.0));
        assert!((s.mean_ms - 50.5).abs() < 1e-9);
    }

    #[test]
    fn report_is_consistent_with_eval_pathway() {
        let spec = SyntheticSpec::small(120, 12, 7);
        let data = gen_synthetic(&spec).unwrap();
        let idx = build_index(data.docs.clone(), &EngineConfig::new(32, 1)).unwrap();
        let float = FloatIndex::new(&data.docs, spec.mode).unwrap();
        let report = bench(&idx, &data.queries, Some(&data.qrels), Some(&float), &BenchConfig::default()).unwrap();

        let results: Vec<RankedResult> = data
            .queries
            .iter()
            .map(|q| crate::engine::query(&idx, q, &QueryOptions::default()).unwrap())
            .collect();
        let direct = quality(&data.queries, &results, Some(&data.qrels), 10).unwrap().unwrap();
        assert_eq!(report.pipeline.quality.as_ref().unwrap(), &direct);
        assert_eq!(report.warmup, 10);
        assert_eq!(report.pipeline.queries, 12);

        let text = report.to_text();
        assert!(text.contains("pipeline.latency.p99_ms: "));
        assert!(text.contains("storage.total_bytes: "));
        assert!(!text.contains("per_query"));
        let json: Value = serde_json::from_str(&report.to_json()).unwrap();
        assert!(json["baseline"]["quality"]["mean_ndcg"].is_number());
    }
}
