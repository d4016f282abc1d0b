//! Candidate generation over the quantized corpus.
//!
//! Three structures are available: an inverted file keyed by centroid code,
//! an HNSW graph over decoded patch vectors, and an exact flat scan that
//! doubles as the recall oracle for the graph.

mod flat;
mod hnsw;
mod postings;

pub use flat::flat_search;
pub use hnsw::{HnswGraph, HnswParams};
pub use postings::{CentroidPostings, Posting};

/// Ranks `(doc ordinal, score)` pairs by descending score, ties by ordinal,
/// and keeps the first `r`.
pub(crate) fn top_docs(mut scored: Vec<(u32, f64)>, r: usize) -> Vec<(u32, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(r);
    scored
}
