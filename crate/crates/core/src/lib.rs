//! Compressed multi-vector document retrieval.
//!
//! Patch embeddings are quantized to k-means centroid codes, queries are
//! pruned to their most salient patches, candidates come from centroid
//! postings, an HNSW graph or a bit-packed Hamming scan, and survivors are
//! reranked by MaxSim through a per-query centroid lookup table.

pub mod ann;
pub mod binary;
pub mod engine;
pub mod error;
pub mod evalbench;
pub mod linalg;
pub mod model;
pub mod pruner;
pub mod quantizer;
pub mod scorer;
pub mod storage;

pub use engine::{
    build_index, query, query_batch, query_with_stats, BatchOutcome, CandidateMode, EngineConfig,
    QueryOptions, QueryStats, StageTimings,
};
pub use error::{Error, Result};
pub use model::{
    CandidateStructure, Codebook, PatchMatrix, QuantizedDocument, RankedResult, RetrievalIndex,
    ScoredDoc, SimilarityMode,
};
pub use pruner::{PruneConfig, PruneSide};
pub use quantizer::{KMeansConfig, KMeansInit};
