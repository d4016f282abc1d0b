//! Late-interaction MaxSim scoring through a per-query lookup table.
//!
//! The table holds the similarity of every (retained) query patch against
//! every centroid, so scoring a document patch is one table read instead of
//! a `D`-dimensional product.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Codebook, PatchMatrix, QuantizedDocument, RankedResult, ScoredDoc, SimilarityMode};

/// Counts query-patch x document-patch comparisons.
#[derive(Debug, Default)]
pub struct ScoreCounter {
    similarity_evaluations: AtomicU64,
}

impl ScoreCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.similarity_evaluations.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.similarity_evaluations.load(Ordering::Relaxed)
    }
}

/// `rows x k` similarity table, stored code-major so that scoring a
/// document reads one contiguous strip per document patch.
#[derive(Debug, Clone, PartialEq)]
pub struct SimLut {
    rows: usize,
    k: usize,
    /// `by_code[code * rows + i]`
    by_code: Vec<f32>,
    /// `by_row[i * k + code]`
    by_row: Vec<f32>,
}

impl SimLut {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, row: usize, code: usize) -> f32 {
        self.by_row[row * self.k + code]
    }

    /// Similarities of query patch `i` against all centroids.
    pub fn row(&self, i: usize) -> &[f32] {
        &self.by_row[i * self.k..(i + 1) * self.k]
    }

    fn strip(&self, code: usize) -> &[f32] {
        &self.by_code[code * self.rows..(code + 1) * self.rows]
    }
}

pub fn build_lut(query: &PatchMatrix, cb: &Codebook) -> Result<SimLut> {
    if query.dim() != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            found: query.dim(),
        });
    }
    let rows = query.num_patches();
    let k = cb.k();
    let mode = cb.mode();
    let mut by_row = vec![0.0f32; rows * k];
    for (i, q) in query.rows().enumerate() {
        for code in 0..k {
            by_row[i * k + code] = mode.similarity(q, cb.centroid(code)) as f32;
        }
    }
    let mut by_code = vec![0.0f32; rows * k];
    for i in 0..rows {
        for code in 0..k {
            by_code[code * rows + i] = by_row[i * k + code];
        }
    }
    Ok(SimLut {
        rows,
        k,
        by_code,
        by_row,
    })
}

/// Sum over query patches of the best table entry among the document's
/// codes. Adds `rows * M_d` to `counter`.
pub fn maxsim(lut: &SimLut, doc: &QuantizedDocument, counter: &ScoreCounter) -> Result<f64> {
    let mut best = vec![f32::NEG_INFINITY; lut.rows];
    for &code in &doc.codes {
        if code as usize >= lut.k {
            return Err(Error::CodeOutOfRange {
                code: code as usize,
                k: lut.k,
            });
        }
        for (b, &s) in best.iter_mut().zip(lut.strip(code as usize)) {
            if s > *b {
                *b = s;
            }
        }
    }
    counter.add((lut.rows * doc.codes.len()) as u64);
    if doc.codes.is_empty() {
        return Ok(0.0);
    }
    Ok(best.iter().map(|&b| b as f64).sum())
}

/// Scores every candidate and keeps the `top_k` best, ties by doc id.
pub fn rerank(
    lut: &SimLut,
    candidates: &[&QuantizedDocument],
    top_k: usize,
    counter: &ScoreCounter,
) -> Result<RankedResult> {
    let scored: Vec<ScoredDoc> = candidates
        .par_iter()
        .map(|doc| {
            maxsim(lut, doc, counter).map(|score| ScoredDoc {
                doc_id: doc.doc_id,
                score,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RankedResult::from_scores(scored, top_k))
}

/// MaxSim between raw float patch sets; the uncompressed reference scorer.
pub fn dense_maxsim(query: &PatchMatrix, doc_rows: &[f32], mode: SimilarityMode) -> f64 {
    let dim = query.dim();
    query
        .rows()
        .map(|q| {
            doc_rows
                .chunks_exact(dim)
                .map(|d| mode.similarity(q, d) as f32)
                .fold(f32::NEG_INFINITY, f32::max) as f64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn codebook(k: usize, dim: usize, seed: u64, mode: SimilarityMode) -> Codebook {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f32> = (0..k * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Codebook::new(c, dim, mode, 0).unwrap()
    }

    fn query(rows: usize, dim: usize, seed: u64) -> PatchMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f32> = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        PatchMatrix::new(0, dim, d, vec![1.0; rows]).unwrap()
    }

    #[test]
    fn lut_entries_for_identical_and_orthogonal() {
        let cb = Codebook::new(vec![0.0, 2.0, 3.0, 0.0], 2, SimilarityMode::Cosine, 0).unwrap();
        let q = PatchMatrix::new(0, 2, vec![0.0, 1.0], vec![1.0]).unwrap();
        let lut = build_lut(&q, &cb).unwrap();
        assert!((lut.get(0, 0) - 1.0).abs() < 1e-6);
        assert!(lut.get(0, 1).abs() < 1e-6);
    }

    #[test]
    fn lut_rejects_dimension_mismatch() {
        let cb = codebook(4, 3, 1, SimilarityMode::Dot);
        assert!(matches!(
            build_lut(&query(2, 2, 1), &cb),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lut_matches_direct_similarity() {
        for mode in [SimilarityMode::Cosine, SimilarityMode::Dot, SimilarityMode::L2] {
            let cb = codebook(32, 16, 2, mode);
            let q = query(7, 16, 3);
            let lut = build_lut(&q, &cb).unwrap();
            for i in 0..7 {
                for k in 0..32 {
                    let direct: f64 = match mode {
                        SimilarityMode::Dot => q.row(i).iter().zip(cb.centroid(k)).map(|(a, b)| (*a * *b) as f64).sum(),
                        SimilarityMode::L2 => -q.row(i).iter().zip(cb.centroid(k)).map(|(a, b)| ((*a - *b) as f64).powi(2)).sum::<f64>(),
                        SimilarityMode::Cosine => {
                            let n = |v: &[f32]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                            q.row(i).iter().zip(cb.centroid(k)).map(|(a, b)| (*a * *b) as f64).sum::<f64>()
                                / (n(q.row(i)) * n(cb.centroid(k)))
                        }
                    };
                    assert!((lut.get(i, k) as f64 - direct).abs() < 1e-6 * direct.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn identical_patch_scores_one() {
        let cb = codebook(8, 4, 5, SimilarityMode::Cosine);
        let q = PatchMatrix::new(0, 4, cb.centroid(3).to_vec(), vec![1.0]).unwrap();
        let lut = build_lut(&q, &cb).unwrap();
        let counter = ScoreCounter::new();
        let s = maxsim(&lut, &QuantizedDocument::new(1, vec![0, 3, 6]), &counter).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
        assert_eq!(counter.get(), 3);
    }

    #[test]
    fn constant_document_sums_one_column() {
        let cb = codebook(8, 4, 6, SimilarityMode::Dot);
        let q = query(5, 4, 7);
        let lut = build_lut(&q, &cb).unwrap();
        let s = maxsim(&lut, &QuantizedDocument::new(1, vec![2; 9]), &ScoreCounter::new()).unwrap();
        let want: f64 = (0..5).map(|i| lut.get(i, 2) as f64).sum();
        assert!((s - want).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_code() {
        let cb = codebook(4, 2, 1, SimilarityMode::Dot);
        let lut = build_lut(&query(1, 2, 1), &cb).unwrap();
        assert!(matches!(
            maxsim(&lut, &QuantizedDocument::new(1, vec![4]), &ScoreCounter::new()),
            Err(Error::CodeOutOfRange { code: 4, k: 4 })
        ));
    }

    #[test]
    fn rerank_edge_cases() {
        let cb = codebook(6, 3, 9, SimilarityMode::Cosine);
        let lut = build_lut(&query(3, 3, 10), &cb).unwrap();
        let counter = ScoreCounter::new();
        let d1 = QuantizedDocument::new(4, vec![1, 2]);
        let only = rerank(&lut, &[&d1], 10, &counter).unwrap();
        assert_eq!(only.doc_ids(), vec![4]);
        assert_eq!(only.entries[0].score, maxsim(&lut, &d1, &ScoreCounter::new()).unwrap());
        let d2 = QuantizedDocument::new(5, vec![1, 2]);
        let d3 = QuantizedDocument::new(2, vec![0]);
        let r = rerank(&lut, &[&d1, &d2, &d3], 2, &counter).unwrap();
        assert_eq!(r.len(), 2);
    }

    /// Decodes every document patch and runs the double loop in f64.
    fn naive_maxsim(q: &PatchMatrix, cb: &Codebook, codes: &[u16]) -> f64 {
        let mut total = 0.0;
        for qi in q.rows() {
            let mut best = f64::NEG_INFINITY;
            for &c in codes {
                let s = cb.mode().similarity(qi, cb.centroid(c as usize));
                best = best.max(s);
            }
            total += best;
        }
        total
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn lut_path_equals_naive_path(
            seed in any::<u64>(),
            codes in prop::collection::vec(0u16..16, 1..40),
            rows in 1usize..12,
        ) {
            for mode in [SimilarityMode::Cosine, SimilarityMode::Dot, SimilarityMode::L2] {
                let cb = codebook(16, 8, seed, mode);
                let q = query(rows, 8, seed.wrapping_add(1));
                let lut = build_lut(&q, &cb).unwrap();
                let counter = ScoreCounter::new();
                let fast = maxsim(&lut, &QuantizedDocument::new(0, codes.clone()), &counter).unwrap();
                let slow = naive_maxsim(&q, &cb, &codes);
                prop_assert!((fast - slow).abs() <= 1e-5 * slow.abs().max(1.0));
                prop_assert_eq!(counter.get(), (rows * codes.len()) as u64);
            }
        }

        #[test]
        fn order_invariance_and_monotone_growth(
            seed in any::<u64>(),
            codes in prop::collection::vec(0u16..16, 2..30),
            extra in 0u16..16,
        ) {
            let cb = codebook(16, 6, seed, SimilarityMode::Cosine);
            let q = query(5, 6, seed ^ 1);
            let lut = build_lut(&q, &cb).unwrap();
            let c = ScoreCounter::new();
            let base = maxsim(&lut, &QuantizedDocument::new(0, codes.clone()), &c).unwrap();
            let mut rev = codes.clone();
            rev.reverse();
            prop_assert_eq!(base, maxsim(&lut, &QuantizedDocument::new(0, rev), &c).unwrap());
            let mut grown = codes.clone();
            grown.push(extra);
            prop_assert!(maxsim(&lut, &QuantizedDocument::new(0, grown), &c).unwrap() >= base);
            // query patch order
            let perm: Vec<usize> = (0..5).rev().collect();
            let lut_rev = build_lut(&q.select_rows(&perm), &cb).unwrap();
            let permuted = maxsim(&lut_rev, &QuantizedDocument::new(0, codes), &c).unwrap();
            prop_assert!((permuted - base).abs() < 1e-9);
        }
    }
}
