use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{PatchMatrix, RankedResult, ScoredDoc, SimilarityMode};

/// Rows scored per matrix product in [`FloatIndex::scores`].
const CHUNK_ROWS: usize = 8192;

/// Uncompressed corpus scored by exhaustive float MaxSim: the quality and
/// latency reference for the compressed pipeline.
#[derive(Debug, Clone)]
pub struct FloatIndex {
    dim: usize,
    mode: SimilarityMode,
    doc_ids: Vec<u64>,
    /// Patch-row offsets; document `d` owns rows `offsets[d]..offsets[d + 1]`.
    offsets: Vec<usize>,
    data: Vec<f32>,
    sq_norms: Vec<f32>,
    /// Document ranges handled by one matrix product each.
    chunks: Vec<(usize, usize)>,
}

impl FloatIndex {
    pub fn new(docs: &[PatchMatrix], mode: SimilarityMode) -> Result<Self> {
        let first = docs.first().ok_or(Error::EmptyCorpus)?;
        let dim = first.dim();
        let mut validated: Vec<PatchMatrix> = docs
            .iter()
            .map(|d| {
                if d.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: d.dim(),
                    });
                }
                d.clone().validate(mode)
            })
            .collect::<Result<_>>()?;
        validated.sort_by_key(PatchMatrix::doc_id);
        if let Some(w) = validated.windows(2).find(|w| w[0].doc_id() == w[1].doc_id()) {
            return Err(Error::DuplicateDocId(w[0].doc_id()));
        }
        let mut offsets = vec![0];
        let mut data = Vec::new();
        for d in &validated {
            data.extend_from_slice(d.data());
            offsets.push(offsets.last().unwrap() + d.num_patches());
        }
        let sq_norms = data.chunks_exact(dim).map(|r| linalg::dot(r, r)).collect();
        let mut chunks = Vec::new();
        let mut start = 0;
        for d in 0..validated.len() {
            if offsets[d + 1] - offsets[start] >= CHUNK_ROWS {
                chunks.push((start, d + 1));
                start = d + 1;
            }
        }
        if start < validated.len() {
            chunks.push((start, validated.len()));
        }
        Ok(Self {
            dim,
            mode,
            doc_ids: validated.iter().map(PatchMatrix::doc_id).collect(),
            offsets,
            data,
            sq_norms,
            chunks,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[u64] {
        &self.doc_ids
    }

    /// MaxSim of `query` against every document, in ascending doc-id order.
    pub fn scores(&self, query: &PatchMatrix) -> Result<Vec<f64>> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let q = query.clone().validate(self.mode)?;
        let mq = q.num_patches();
        let q_norms: Vec<f32> = q.rows().map(|r| linalg::dot(r, r)).collect();
        let per_chunk: Vec<Vec<f64>> = self
            .chunks
            .par_iter()
            .map(|&(d0, d1)| {
                let (r0, r1) = (self.offsets[d0], self.offsets[d1]);
                let n = r1 - r0;
                let mut sims = vec![0.0f32; mq * n];
                linalg::gemm_abt(q.data(), &self.data[r0 * self.dim..r1 * self.dim], self.dim, &mut sims);
                if self.mode == SimilarityMode::L2 {
                    for (i, row) in sims.chunks_exact_mut(n).enumerate() {
                        for (j, s) in row.iter_mut().enumerate() {
                            *s = 2.0 * *s - q_norms[i] - self.sq_norms[r0 + j];
                        }
                    }
                }
                (d0..d1)
                    .map(|d| {
                        let (a, b) = (self.offsets[d] - r0, self.offsets[d + 1] - r0);
                        sims.chunks_exact(n)
                            .map(|row| row[a..b].iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64)
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Ok(per_chunk.concat())
    }

    pub fn search(&self, query: &PatchMatrix, top_k: usize) -> Result<RankedResult> {
        let scores = self.scores(query)?;
        let scored = self
            .doc_ids
            .iter()
            .zip(scores)
            .map(|(&doc_id, score)| ScoredDoc { doc_id, score })
            .collect();
        Ok(RankedResult::from_scores(scored, top_k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::dense_maxsim;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn docs(n: usize, dim: usize, seed: u64) -> Vec<PatchMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let m = rng.random_range(1..700);
                let data = (0..m * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                PatchMatrix::new((n - i) as u64, dim, data, vec![1.0; m]).unwrap()
            })
            .collect()
    }

    #[test]
    fn matches_reference_scorer_in_every_mode() {
        let corpus = docs(40, 12, 1);
        let q = &docs(1, 12, 2)[0];
        for mode in [SimilarityMode::Cosine, SimilarityMode::Dot, SimilarityMode::L2] {
            let idx = FloatIndex::new(&corpus, mode).unwrap();
            let got = idx.scores(q).unwrap();
            let qv = q.clone().validate(mode).unwrap();
            for (id, s) in idx.doc_ids().iter().zip(&got) {
                let d = corpus.iter().find(|d| d.doc_id() == *id).unwrap();
                let dv = d.clone().validate(mode).unwrap();
                let want = dense_maxsim(&qv, dv.data(), mode);
                assert!((s - want).abs() <= 1e-4 * want.abs().max(1.0), "{mode:?}: {s} vs {want}");
            }
        }
    }

    #[test]
    fn document_finds_itself() {
        let corpus = docs(30, 8, 3);
        let idx = FloatIndex::new(&corpus, SimilarityMode::Cosine).unwrap();
        let r = idx.search(&corpus[5], 3).unwrap();
        assert_eq!(r.entries[0].doc_id, corpus[5].doc_id());
        assert_eq!(r.len(), 3);
    }
}
