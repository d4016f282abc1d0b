//! Offline index build and the online query pipeline.
//!
//! Query flow: validate, prune by attention, build the query-to-centroid
//! lookup table (and codes where the candidate structure needs them),
//! propose candidates, then rerank candidates by MaxSim.

use std::time::{Duration, Instant};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::ann::{self, CentroidPostings, HnswGraph, HnswParams, Posting};
use crate::binary;
use crate::error::{Error, Result};
use crate::model::{
    CandidateStructure, PatchMatrix, QuantizedDocument, RankedResult, RetrievalIndex, ScoredDoc,
    SimilarityMode,
};
use crate::pruner::{self, PruneConfig, PruneSide};
use crate::quantizer::{self, KMeansConfig};
use crate::scorer::{self, ScoreCounter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMode {
    #[default]
    Postings,
    Hnsw,
    Hamming,
}

impl std::str::FromStr for CandidateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "postings" => Ok(CandidateMode::Postings),
            "hnsw" => Ok(CandidateMode::Hnsw),
            "hamming" => Ok(CandidateMode::Hamming),
            other => Err(Error::InvalidConfig(format!("unknown candidate mode {other:?}"))),
        }
    }
}

/// Every knob of the build and query pipeline. Persisted in the index
/// header; query-time values can be overridden per call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub similarity: SimilarityMode,
    pub kmeans: KMeansConfig,
    pub prune: PruneConfig,
    pub candidate_mode: CandidateMode,
    /// Nearest centroids (or graph nodes) probed per query patch.
    pub c_nearest: usize,
    /// Candidate documents passed to the reranker.
    pub candidate_pool: usize,
    pub top_k: usize,
    pub binary_enabled: bool,
    pub locality_ordering: bool,
    /// Score with the query's decoded centroids instead of its raw vectors.
    pub symmetric_quantize: bool,
    pub hnsw: HnswParams,
    /// Fraction of corpus patches used to train the codebook.
    pub train_sample: f64,
    /// Keep raw float patch vectors in the index for float reranking.
    pub float_sidecar: bool,
}

impl EngineConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            similarity: SimilarityMode::Cosine,
            kmeans: KMeansConfig::new(k, seed),
            prune: PruneConfig::default(),
            candidate_mode: CandidateMode::Postings,
            c_nearest: 4,
            candidate_pool: 100,
            top_k: 10,
            binary_enabled: false,
            locality_ordering: false,
            symmetric_quantize: false,
            hnsw: HnswParams {
                seed,
                ..HnswParams::default()
            },
            train_sample: 1.0,
            float_sidecar: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kmeans.validate()?;
        self.hnsw.validate()?;
        // re-run the range check in case the struct was deserialized
        PruneConfig::new(self.prune.p(), self.prune.side)?;
        if self.candidate_mode == CandidateMode::Hamming && !self.binary_enabled {
            return Err(Error::InvalidConfig(
                "hamming candidate mode requires binary encoding".into(),
            ));
        }
        if self.c_nearest == 0 || self.candidate_pool == 0 || self.top_k == 0 {
            return Err(Error::InvalidConfig(
                "c_nearest, candidate_pool and top_k must be positive".into(),
            ));
        }
        if !(self.train_sample > 0.0 && self.train_sample <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_sample must be in (0, 1], got {}",
                self.train_sample
            )));
        }
        Ok(())
    }
}

/// Per-call overrides of the query-time settings stored in the index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryOptions {
    pub prune_p: Option<f64>,
    pub prune_side: Option<PruneSide>,
    pub top_k: Option<usize>,
    pub c_nearest: Option<usize>,
    pub candidate_pool: Option<usize>,
    pub ef_search: Option<usize>,
    pub symmetric_quantize: Option<bool>,
    /// Rerank against the float sidecar instead of decoded centroids.
    pub float_rerank: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub prune: Duration,
    pub encode: Duration,
    pub candidates: Duration,
    pub rerank: Duration,
    pub total: Duration,
}

impl StageTimings {
    pub fn stage_sum(&self) -> Duration {
        self.prune + self.encode + self.candidates + self.rerank
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QueryStats {
    pub retained_query_patches: usize,
    pub candidates: usize,
    pub similarity_evaluations: u64,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub results: Vec<RankedResult>,
    pub stats: Vec<QueryStats>,
    pub wall: Duration,
    pub threads: usize,
}

/// Builds an index over `corpus`. Documents may arrive in any order; the
/// index stores them sorted by id.
pub fn build_index<I>(corpus: I, cfg: &EngineConfig) -> Result<RetrievalIndex>
where
    I: IntoIterator<Item = PatchMatrix>,
{
    cfg.validate()?;
    let mut docs: Vec<PatchMatrix> = corpus
        .into_iter()
        .map(|pm| pm.validate(cfg.similarity))
        .collect::<Result<_>>()?;
    let first = docs.first().ok_or(Error::EmptyCorpus)?;
    let dim = first.dim();
    if let Some(bad) = docs.iter().find(|d| d.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    docs.sort_by_key(PatchMatrix::doc_id);
    if let Some(w) = docs.windows(2).find(|w| w[0].doc_id() == w[1].doc_id()) {
        return Err(Error::DuplicateDocId(w[0].doc_id()));
    }
    if cfg.prune.side.prunes_docs() {
        docs = docs.iter().map(|d| pruner::prune(d, cfg.prune.p())).collect();
    }

    let lengths: Vec<usize> = docs.iter().map(PatchMatrix::num_patches).collect();
    let mut all = Vec::with_capacity(lengths.iter().sum::<usize>() * dim);
    for d in &docs {
        all.extend_from_slice(d.data());
    }
    let total = all.len() / dim;
    let outcome = if cfg.train_sample < 1.0 {
        let n_train = ((total as f64 * cfg.train_sample).ceil() as usize)
            .max(cfg.kmeans.k)
            .min(total);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.kmeans.seed ^ 0x7261_6e64_5f73_6d70);
        let mut rows = index::sample(&mut rng, total, n_train).into_vec();
        rows.sort_unstable();
        let mut sample = Vec::with_capacity(n_train * dim);
        for r in rows {
            sample.extend_from_slice(&all[r * dim..(r + 1) * dim]);
        }
        quantizer::train(&sample, dim, &cfg.kmeans, cfg.similarity)?
    } else {
        quantizer::train(&all, dim, &cfg.kmeans, cfg.similarity)?
    };
    info!(
        k = cfg.kmeans.k,
        iterations = outcome.iterations,
        distortion = outcome.final_distortion(),
        "codebook trained"
    );
    let mut codebook = outcome.codebook;
    let mut codes = quantizer::assign_rows(&codebook, &all)?;

    if cfg.locality_ordering {
        let order = binary::locality_order(&codebook);
        let mut relabel = vec![0u16; order.len()];
        for (new, &old) in order.iter().enumerate() {
            relabel[old] = new as u16;
        }
        codebook = codebook.permuted(&order);
        for c in codes.iter_mut() {
            *c = relabel[*c as usize];
        }
    }

    let mut documents = Vec::with_capacity(docs.len());
    let mut offset = 0;
    for (d, &len) in docs.iter().zip(&lengths) {
        let mut q = QuantizedDocument::new(d.doc_id(), codes[offset..offset + len].to_vec());
        if cfg.binary_enabled {
            q = q.with_binary(codebook.bits())?;
        }
        documents.push(q);
        offset += len;
    }

    let candidates = match cfg.candidate_mode {
        CandidateMode::Postings => {
            CandidateStructure::CentroidPostings(CentroidPostings::build(codebook.k(), &documents)?)
        }
        CandidateMode::Hnsw => {
            let mut vectors = Vec::with_capacity(total * dim);
            let mut payloads = Vec::with_capacity(total);
            for (di, doc) in documents.iter().enumerate() {
                for (pi, &c) in doc.codes.iter().enumerate() {
                    vectors.extend_from_slice(codebook.centroid(c as usize));
                    payloads.push(Posting {
                        doc: di as u32,
                        patch: pi as u32,
                    });
                }
            }
            CandidateStructure::HnswGraph(HnswGraph::build(&vectors, dim, payloads, cfg.hnsw)?)
        }
        CandidateMode::Hamming => CandidateStructure::HammingScan {
            bits: codebook.bits(),
        },
    };

    let doc_attention = cfg
        .prune
        .side
        .prunes_docs()
        .then(|| docs.iter().map(|d| d.attention().to_vec()).collect());
    let float_sidecar = cfg
        .float_sidecar
        .then(|| docs.iter().map(|d| d.data().to_vec()).collect());

    Ok(RetrievalIndex {
        config: cfg.clone(),
        codebook,
        documents,
        candidates,
        doc_attention,
        float_sidecar,
    })
}

pub fn query(index: &RetrievalIndex, pm: &PatchMatrix, opts: &QueryOptions) -> Result<RankedResult> {
    query_with_stats(index, pm, opts).map(|(r, _)| r)
}

pub fn query_with_stats(
    index: &RetrievalIndex,
    pm: &PatchMatrix,
    opts: &QueryOptions,
) -> Result<(RankedResult, QueryStats)> {
    let start = Instant::now();
    let cfg = &index.config;
    let cb = &index.codebook;
    if index.documents.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if pm.dim() != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            found: pm.dim(),
        });
    }
    let p = opts.prune_p.unwrap_or(cfg.prune.p());
    let side = opts.prune_side.unwrap_or(cfg.prune.side);
    PruneConfig::new(p, side)?;
    let top_k = opts.top_k.unwrap_or(cfg.top_k);
    let c_nearest = opts.c_nearest.unwrap_or(cfg.c_nearest);
    let pool = opts.candidate_pool.unwrap_or(cfg.candidate_pool);
    if top_k == 0 || c_nearest == 0 || pool == 0 {
        return Err(Error::InvalidConfig(
            "top_k, c_nearest and candidate_pool must be positive".into(),
        ));
    }

    // 1-2: validate and prune
    let q = pm.clone().validate(cfg.similarity)?;
    let q = if side.prunes_query() {
        pruner::prune(&q, p)
    } else {
        q
    };
    let t_prune = start.elapsed();

    // 3: encode
    let needs_codes = opts.symmetric_quantize.unwrap_or(cfg.symmetric_quantize)
        || matches!(index.candidates, CandidateStructure::HammingScan { .. });
    let codes = if needs_codes {
        Some(quantizer::assign_rows(cb, q.data())?)
    } else {
        None
    };
    let scoring_q = if opts.symmetric_quantize.unwrap_or(cfg.symmetric_quantize) {
        let codes = codes.as_ref().expect("codes computed for symmetric mode");
        let mut data = Vec::with_capacity(q.data().len());
        for &c in codes {
            data.extend_from_slice(cb.centroid(c as usize));
        }
        PatchMatrix::new(q.doc_id(), q.dim(), data, q.attention().to_vec())?
    } else {
        q.clone()
    };
    let lut = scorer::build_lut(&scoring_q, cb)?;
    let t_encode = start.elapsed();

    // 4: candidate search
    let n = index.documents.len();
    let candidates: Vec<(u32, f64)> = match &index.candidates {
        CandidateStructure::CentroidPostings(post) => {
            post.candidates(&lut, q.attention(), c_nearest, pool, n)
        }
        CandidateStructure::HnswGraph(graph) => {
            let ef = opts.ef_search.unwrap_or(graph.params().ef_search);
            hnsw_candidates(graph, &scoring_q, c_nearest, ef, pool, n)?
        }
        CandidateStructure::HammingScan { bits } => {
            let codes = codes.as_ref().expect("codes computed for hamming mode");
            hamming_candidates(&index.documents, codes, q.attention(), *bits, pool)?
        }
    };
    let t_candidates = start.elapsed();

    // 5: rerank
    let counter = ScoreCounter::new();
    let result = if opts.float_rerank {
        let sidecar = index.float_sidecar.as_ref().ok_or_else(|| {
            Error::InvalidConfig("float reranking needs an index built with a float sidecar".into())
        })?;
        let scored: Vec<ScoredDoc> = candidates
            .par_iter()
            .map(|&(d, _)| {
                let rows = &sidecar[d as usize];
                counter.add((q.num_patches() * rows.len() / cb.dim()) as u64);
                ScoredDoc {
                    doc_id: index.documents[d as usize].doc_id,
                    score: scorer::dense_maxsim(&q, rows, cfg.similarity),
                }
            })
            .collect();
        RankedResult::from_scores(scored, top_k)
    } else {
        let docs: Vec<&QuantizedDocument> = candidates
            .iter()
            .map(|&(d, _)| &index.documents[d as usize])
            .collect();
        scorer::rerank(&lut, &docs, top_k, &counter)?
    };
    let total = start.elapsed();

    let stats = QueryStats {
        retained_query_patches: q.num_patches(),
        candidates: candidates.len(),
        similarity_evaluations: counter.get(),
        timings: StageTimings {
            prune: t_prune,
            encode: t_encode - t_prune,
            candidates: t_candidates - t_encode,
            rerank: total - t_candidates,
            total,
        },
    };
    Ok((result, stats))
}

/// Each query patch votes (by attention) for the documents owning any item
/// of its `c_nearest` nearest graph nodes.
fn hnsw_candidates(
    graph: &HnswGraph,
    q: &PatchMatrix,
    c_nearest: usize,
    ef: usize,
    pool: usize,
    n: usize,
) -> Result<Vec<(u32, f64)>> {
    let mut votes = vec![0.0f64; n];
    let mut stamp = vec![0u32; n];
    for (i, row) in q.rows().enumerate() {
        let mark = i as u32 + 1;
        let weight = q.attention()[i] as f64;
        for (node, _) in graph.search_nodes(row, c_nearest, ef)? {
            for &item in graph.node_items(node) {
                let d = graph.payload(item as usize).doc as usize;
                if stamp[d] != mark {
                    stamp[d] = mark;
                    votes[d] += weight;
                }
            }
        }
    }
    let hit = (0..n)
        .filter(|&d| stamp[d] != 0)
        .map(|d| (d as u32, votes[d]))
        .collect();
    Ok(ann::top_docs(hit, pool))
}

/// Scores every document by `sum_i attention_i * (bits - min Hamming
/// distance from query code i to the document's codes)`.
fn hamming_candidates(
    docs: &[QuantizedDocument],
    query_codes: &[u16],
    attention: &[f32],
    bits: u8,
    pool: usize,
) -> Result<Vec<(u32, f64)>> {
    let scored: Vec<(u32, f64)> = docs
        .par_iter()
        .enumerate()
        .map(|(d, doc)| {
            let packed = doc
                .packed_binary
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("document lacks binary codes".into()))?;
            if packed.bits() != bits {
                return Err(Error::BitsMismatch {
                    expected: bits,
                    found: packed.bits(),
                });
            }
            let mut score = 0.0f64;
            for (&qc, &a) in query_codes.iter().zip(attention) {
                if let Some(min) = packed.min_distance(qc as u32)? {
                    score += a as f64 * (bits as u32 - min) as f64;
                }
            }
            Ok((d as u32, score))
        })
        .collect::<Result<_>>()?;
    Ok(ann::top_docs(scored, pool))
}

/// Runs `queries` in parallel on the current rayon pool. Results are in
/// input order and identical to calling [`query`] one by one.
pub fn query_batch(
    index: &RetrievalIndex,
    queries: &[PatchMatrix],
    opts: &QueryOptions,
) -> Result<BatchOutcome> {
    let start = Instant::now();
    let out: Vec<(RankedResult, QueryStats)> = queries
        .par_iter()
        .map(|q| query_with_stats(index, q, opts))
        .collect::<Result<_>>()?;
    let wall = start.elapsed();
    let (results, stats) = out.into_iter().unzip();
    Ok(BatchOutcome {
        results,
        stats,
        wall,
        threads: rayon::current_num_threads(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Codebook;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Small clustered corpus: each doc draws patches from 2 of 6 topics.
    fn corpus(n_docs: usize, m: usize, dim: usize, seed: u64) -> Vec<PatchMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topics: Vec<Vec<f32>> = (0..6)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        (0..n_docs)
            .map(|d| {
                let a = rng.random_range(0..6);
                let b = rng.random_range(0..6);
                let mut data = Vec::new();
                let mut att = Vec::new();
                for p in 0..m {
                    let t = if p % 3 == 0 { b } else { a };
                    for j in 0..dim {
                        let noise: f32 = StandardNormal.sample(&mut rng);
                        data.push(topics[t][j] + 0.4 * noise);
                    }
                    att.push(rng.random::<f32>());
                }
                PatchMatrix::new(1000 + d as u64, dim, data, att).unwrap()
            })
            .collect()
    }

    fn brute_force(index: &RetrievalIndex, q: &PatchMatrix) -> Vec<u64> {
        let cb = index.codebook();
        let q = q.clone().validate(cb.mode()).unwrap();
        let mut scored: Vec<ScoredDoc> = index
            .documents()
            .iter()
            .map(|d| {
                let mut s = 0.0f64;
                for qi in q.rows() {
                    let best = d
                        .codes
                        .iter()
                        .map(|&c| cb.mode().similarity(qi, cb.centroid(c as usize)) as f32)
                        .fold(f32::NEG_INFINITY, f32::max);
                    s += best as f64;
                }
                ScoredDoc { doc_id: d.doc_id, score: s }
            })
            .collect();
        crate::model::sort_scored(&mut scored);
        scored.iter().map(|s| s.doc_id).collect()
    }

    #[test]
    fn build_covers_every_patch() {
        let docs = corpus(100, 12, 8, 1);
        let idx = build_index(docs, &EngineConfig::new(16, 3)).unwrap();
        assert_eq!(idx.num_docs(), 100);
        match idx.candidates() {
            CandidateStructure::CentroidPostings(p) => assert_eq!(p.total_postings(), 1200),
            other => panic!("unexpected {}", other.name()),
        }
    }

    #[test]
    fn binary_codes_for_k512() {
        let docs = corpus(60, 20, 6, 2);
        let mut cfg = EngineConfig::new(512, 3);
        cfg.binary_enabled = true;
        let idx = build_index(docs, &cfg).unwrap();
        for d in idx.documents() {
            let p = d.packed_binary.as_ref().unwrap();
            assert_eq!(p.bits(), 9);
            let codes: Vec<u32> = d.codes.iter().map(|&c| c as u32).collect();
            assert_eq!(p.unpack(), codes);
        }
    }

    #[test]
    fn exhaustive_settings_equal_brute_force() {
        let docs = corpus(80, 10, 8, 4);
        let mut cfg = EngineConfig::new(32, 5);
        cfg.c_nearest = 32;
        cfg.candidate_pool = 80;
        cfg.top_k = 80;
        let idx = build_index(docs, &cfg).unwrap();
        for q in corpus(5, 7, 8, 99) {
            let got = query(&idx, &q, &QueryOptions::default()).unwrap();
            assert_eq!(got.doc_ids(), brute_force(&idx, &q));
        }
    }

    #[test]
    fn self_retrieval() {
        let docs = corpus(50, 10, 8, 6);
        let mut cfg = EngineConfig::new(24, 1);
        cfg.candidate_pool = 50;
        let idx = build_index(docs, &cfg).unwrap();
        let target = &idx.documents()[17];
        let mut data = Vec::new();
        for &c in &target.codes {
            data.extend_from_slice(idx.codebook().centroid(c as usize));
        }
        let q = PatchMatrix::new(0, 8, data, vec![1.0; target.codes.len()]).unwrap();
        let got = query(&idx, &q, &QueryOptions::default()).unwrap();
        assert_eq!(got.entries[0].doc_id, target.doc_id);
    }

    #[test]
    fn top_k_larger_than_corpus() {
        let idx = build_index(corpus(5, 6, 4, 7), &EngineConfig::new(4, 1)).unwrap();
        let got = query(&idx, &corpus(1, 3, 4, 8)[0], &QueryOptions::default()).unwrap();
        assert_eq!(got.len(), 5);
    }

    #[test]
    fn every_candidate_mode_runs_and_is_deterministic() {
        let docs = corpus(120, 10, 8, 9);
        let queries = corpus(6, 8, 8, 10);
        for mode in [CandidateMode::Postings, CandidateMode::Hnsw, CandidateMode::Hamming] {
            let mut cfg = EngineConfig::new(32, 2);
            cfg.candidate_mode = mode;
            cfg.binary_enabled = mode == CandidateMode::Hamming;
            cfg.prune = PruneConfig::new(0.6, PruneSide::Query).unwrap();
            let a = build_index(docs.clone(), &cfg).unwrap();
            let b = build_index(docs.clone(), &cfg).unwrap();
            assert_eq!(a, b);
            let batch = query_batch(&a, &queries, &QueryOptions::default()).unwrap();
            for (q, r) in queries.iter().zip(&batch.results) {
                assert_eq!(&query(&a, q, &QueryOptions::default()).unwrap(), r);
                assert!(!r.is_empty());
            }
            for s in &batch.stats {
                assert!(s.timings.stage_sum() <= s.timings.total);
            }
        }
    }

    #[test]
    fn batch_order_does_not_change_results() {
        let idx = build_index(corpus(40, 8, 6, 11), &EngineConfig::new(8, 1)).unwrap();
        let qs = corpus(4, 5, 6, 12);
        let fwd = query_batch(&idx, &qs, &QueryOptions::default()).unwrap();
        let rev: Vec<PatchMatrix> = qs.iter().rev().cloned().collect();
        let back = query_batch(&idx, &rev, &QueryOptions::default()).unwrap();
        let mut back_results = back.results;
        back_results.reverse();
        assert_eq!(fwd.results, back_results);
        let one = query_batch(&idx, &qs[..1], &QueryOptions::default()).unwrap();
        assert_eq!(one.results[0], fwd.results[0]);
    }

    #[test]
    fn pruning_shrinks_comparisons_exactly() {
        let idx = build_index(corpus(30, 9, 6, 13), &EngineConfig::new(8, 1)).unwrap();
        let q = &corpus(1, 50, 6, 14)[0];
        let opts = |p| QueryOptions {
            prune_p: Some(p),
            candidate_pool: Some(30),
            c_nearest: Some(8),
            ..QueryOptions::default()
        };
        let (_, full) = query_with_stats(&idx, q, &opts(1.0)).unwrap();
        let (_, pruned) = query_with_stats(&idx, q, &opts(0.4)).unwrap();
        assert_eq!(full.similarity_evaluations, 50 * 9 * 30);
        assert_eq!(pruned.similarity_evaluations, 20 * 9 * 30);
    }

    #[test]
    fn config_errors() {
        let mut cfg = EngineConfig::new(8, 1);
        cfg.candidate_mode = CandidateMode::Hamming;
        assert!(matches!(build_index(corpus(3, 4, 2, 1), &cfg), Err(Error::InvalidConfig(_))));
        assert!(matches!(
            build_index(Vec::new(), &EngineConfig::new(8, 1)),
            Err(Error::EmptyCorpus)
        ));
        let mut docs = corpus(3, 4, 2, 1);
        docs.push(docs[0].clone());
        assert!(matches!(
            build_index(docs, &EngineConfig::new(4, 1)),
            Err(Error::DuplicateDocId(1000))
        ));
    }

    #[test]
    fn query_dimension_is_checked() {
        let idx = build_index(corpus(10, 4, 4, 1), &EngineConfig::new(4, 1)).unwrap();
        let q = &corpus(1, 3, 5, 2)[0];
        assert!(matches!(
            query(&idx, q, &QueryOptions::default()),
            Err(Error::DimensionMismatch { expected: 4, found: 5 })
        ));
    }

    #[test]
    fn doc_side_pruning_keeps_budgeted_patches() {
        let mut cfg = EngineConfig::new(8, 1);
        cfg.prune = PruneConfig::new(0.5, PruneSide::Doc).unwrap();
        let idx = build_index(corpus(10, 9, 4, 3), &cfg).unwrap();
        assert!(idx.documents().iter().all(|d| d.codes.len() == 5));
        assert_eq!(idx.doc_attention().unwrap().len(), 10);
    }

    #[test]
    fn locality_ordering_relabels_without_changing_scores() {
        let docs = corpus(40, 8, 6, 21);
        let mut plain = EngineConfig::new(16, 4);
        plain.candidate_pool = 40;
        plain.c_nearest = 16;
        let mut ordered = plain.clone();
        ordered.locality_ordering = true;
        let a = build_index(docs.clone(), &plain).unwrap();
        let b = build_index(docs, &ordered).unwrap();
        let q = &corpus(1, 6, 6, 22)[0];
        let ra = query(&a, q, &QueryOptions::default()).unwrap();
        let rb = query(&b, q, &QueryOptions::default()).unwrap();
        assert_eq!(ra.doc_ids(), rb.doc_ids());
        // same centroid set, permuted
        let set = |cb: &Codebook| {
            let mut v: Vec<Vec<u32>> = (0..cb.k())
                .map(|k| cb.centroid(k).iter().map(|x| x.to_bits()).collect())
                .collect();
            v.sort();
            v
        };
        assert_eq!(set(a.codebook()), set(b.codebook()));
    }

    #[test]
    fn float_rerank_needs_sidecar() {
        let docs = corpus(20, 6, 4, 5);
        let idx = build_index(docs.clone(), &EngineConfig::new(8, 1)).unwrap();
        let opts = QueryOptions {
            float_rerank: true,
            ..QueryOptions::default()
        };
        assert!(query(&idx, &docs[0], &opts).is_err());
        let mut cfg = EngineConfig::new(8, 1);
        cfg.float_sidecar = true;
        let idx = build_index(docs.clone(), &cfg).unwrap();
        let r = query(&idx, &docs[3], &opts).unwrap();
        assert_eq!(r.entries[0].doc_id, docs[3].doc_id());
    }
}
