//! Retrieval-quality metrics, a synthetic corpus generator, an exact float
//! MaxSim baseline and the latency/throughput harness.

mod bench;
mod dense;
mod metrics;
mod synthetic;

pub use bench::{
    bench, key_value_text, BenchConfig, LatencySummary, MetricsReport, PipelineReport, StageMeans};
pub use dense::FloatIndex;
pub use metrics::{
    average_precision, evaluate, mean_average_precision, ndcg_at_k, recall_at_k, QualityReport,
    QueryMetrics,
};
pub use synthetic::{
    gen_synthetic, write_synthetic, SyntheticData, SyntheticPaths, SyntheticSpec, CORPUS_FILE,
    QRELS_FILE, QUERIES_FILE,
};
