//! Core domain types: patch matrices, codebooks, quantized documents,
//! ranked results and the persisted retrieval index.

use serde::{Deserialize, Serialize};

use crate::ann::{CentroidPostings, HnswGraph};
use crate::binary::{self, PackedCodes};
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::linalg;

/// Rows whose norm is already this close to 1 are left untouched by
/// normalization, which makes `validate` idempotent bit-for-bit.
const UNIT_NORM_SLACK: f64 = 1e-6;

/// How two embeddings are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMode {
    /// Cosine similarity; patch rows are unit-normalized on ingest.
    #[default]
    Cosine,
    Dot,
    /// Negative squared Euclidean distance.
    L2,
}

impl SimilarityMode {
    pub fn to_u8(self) -> u8 {
        match self {
            SimilarityMode::Cosine => 0,
            SimilarityMode::Dot => 1,
            SimilarityMode::L2 => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(SimilarityMode::Cosine),
            1 => Some(SimilarityMode::Dot),
            2 => Some(SimilarityMode::L2),
            _ => None,
        }
    }

    /// Higher is more similar for every mode.
    pub fn similarity(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            SimilarityMode::Cosine => {
                let denom = linalg::norm_f64(a) * linalg::norm_f64(b);
                if denom == 0.0 {
                    0.0
                } else {
                    linalg::dot_f64(a, b) / denom
                }
            }
            SimilarityMode::Dot => linalg::dot_f64(a, b),
            SimilarityMode::L2 => -linalg::l2_sq_f64(a, b),
        }
    }
}

impl std::str::FromStr for SimilarityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" | "cosine-normalized" => Ok(SimilarityMode::Cosine),
            "dot" => Ok(SimilarityMode::Dot),
            "l2" => Ok(SimilarityMode::L2),
            other => Err(Error::InvalidConfig(format!("unknown similarity mode {other:?}"))),
        }
    }
}

/// A document (or query) as a bag of `M` patch embeddings of dimension `D`,
/// each with a non-negative salience weight.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    doc_id: u64,
    dim: usize,
    data: Vec<f32>,
    attention: Vec<f32>,
}

impl PatchMatrix {
    /// `data` is row-major `M x dim`.
    pub fn new(doc_id: u64, dim: usize, data: Vec<f32>, attention: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        let rows = data.len() / dim;
        if attention.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: attention.len(),
            });
        }
        Ok(Self {
            doc_id,
            dim,
            data,
            attention,
        })
    }

    /// Builds a matrix from rows; all rows must share a length.
    pub fn from_rows(doc_id: u64, rows: &[Vec<f32>], attention: Vec<f32>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyMatrix)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(doc_id, dim, data, attention)
    }

    pub fn doc_id(&self) -> u64 {
        self.doc_id
    }

    pub fn with_doc_id(mut self, doc_id: u64) -> Self {
        self.doc_id = doc_id;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_patches(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn attention(&self) -> &[f32] {
        &self.attention
    }

    /// Keeps the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> PatchMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        let mut attention = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.row(r));
            attention.push(self.attention[r]);
        }
        PatchMatrix {
            doc_id: self.doc_id,
            dim: self.dim,
            data,
            attention,
        }
    }

    /// Rejects non-finite values and bad attention; in cosine mode every row
    /// is scaled to unit norm.
    pub fn validate(mut self, mode: SimilarityMode) -> Result<Self> {
        for (row, values) in self.data.chunks_exact(self.dim).enumerate() {
            if let Some(column) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { row, column });
            }
        }
        if let Some(index) = self
            .attention
            .iter()
            .position(|a| !a.is_finite() || *a < 0.0)
        {
            return Err(Error::InvalidAttention { index });
        }
        if mode == SimilarityMode::Cosine {
            for (row, values) in self.data.chunks_exact_mut(self.dim).enumerate() {
                let norm = linalg::norm_f64(values);
                if norm == 0.0 {
                    return Err(Error::ZeroNormRow { row });
                }
                if (norm - 1.0).abs() > UNIT_NORM_SLACK {
                    for v in values.iter_mut() {
                        *v = (*v as f64 / norm) as f32;
                    }
                }
            }
        }
        Ok(self)
    }
}

/// The `K` learned centroids that define the code vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<f32>,
    k: usize,
    dim: usize,
    mode: SimilarityMode,
    training_seed: u64,
}

impl Codebook {
    pub const MAX_K: usize = 65_536;

    pub fn new(
        centroids: Vec<f32>,
        dim: usize,
        mode: SimilarityMode,
        training_seed: u64,
    ) -> Result<Self> {
        if dim == 0 || !centroids.len().is_multiple_of(dim) {
            return Err(Error::Format("centroid buffer is not a multiple of dim".into()));
        }
        let k = centroids.len() / dim;
        if !(2..=Self::MAX_K).contains(&k) {
            return Err(Error::InvalidConfig(format!(
                "codebook size {k} outside 2..={}",
                Self::MAX_K
            )));
        }
        if let Some(pos) = centroids.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / dim,
                column: pos % dim,
            });
        }
        Ok(Self {
            centroids,
            k,
            dim,
            mode,
            training_seed,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> SimilarityMode {
        self.mode
    }

    pub fn training_seed(&self) -> u64 {
        self.training_seed
    }

    pub fn centroid(&self, code: usize) -> &[f32] {
        &self.centroids[code * self.dim..(code + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Bytes used to store one code: 1 for `K <= 256`, else 2.
    pub fn code_width(&self) -> usize {
        if self.k <= 256 {
            1
        } else {
            2
        }
    }

    /// Bits per code in binary mode.
    pub fn bits(&self) -> u8 {
        binary::bits_for(self.k)
    }

    /// Returns a codebook whose code `new` is the old code `order[new]`.
    pub(crate) fn permuted(&self, order: &[usize]) -> Codebook {
        let mut centroids = Vec::with_capacity(self.centroids.len());
        for &old in order {
            centroids.extend_from_slice(self.centroid(old));
        }
        Codebook {
            centroids,
            ..self.clone()
        }
    }
}

/// A document reduced to one centroid code per patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedDocument {
    pub doc_id: u64,
    pub codes: Vec<u16>,
    pub packed_binary: Option<PackedCodes>,
}

impl QuantizedDocument {
    pub fn new(doc_id: u64, codes: Vec<u16>) -> Self {
        Self {
            doc_id,
            codes,
            packed_binary: None,
        }
    }

    pub fn num_patches(&self) -> usize {
        self.codes.len()
    }

    /// Attaches the bit-packed form of the codes.
    pub fn with_binary(mut self, bits: u8) -> Result<Self> {
        let codes: Vec<u32> = self.codes.iter().map(|&c| c as u32).collect();
        self.packed_binary = Some(binary::pack(&codes, bits)?);
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredDoc {
    pub doc_id: u64,
    pub score: f64,
}

/// Documents ordered by descending score; ties go to the smaller id.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RankedResult {
    pub entries: Vec<ScoredDoc>,
}

impl RankedResult {
    /// Sorts and truncates. Doc ids must be distinct.
    pub fn from_scores(mut scored: Vec<ScoredDoc>, top_k: usize) -> Self {
        sort_scored(&mut scored);
        scored.truncate(top_k);
        Self { entries: scored }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.doc_id).collect()
    }
}

pub(crate) fn sort_scored(scored: &mut [ScoredDoc]) {
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

/// The structure used to propose candidate documents before reranking.
#[derive(Debug, Clone, PartialEq)]
pub enum CandidateStructure {
    CentroidPostings(CentroidPostings),
    HnswGraph(HnswGraph),
    /// Brute-force scan over the packed binary codes held by each document.
    HammingScan { bits: u8 },
}

impl CandidateStructure {
    pub fn name(&self) -> &'static str {
        match self {
            CandidateStructure::CentroidPostings(_) => "postings",
            CandidateStructure::HnswGraph(_) => "hnsw",
            CandidateStructure::HammingScan { .. } => "hamming",
        }
    }
}

/// A built, immutable corpus index. Documents are sorted by `doc_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub(crate) config: EngineConfig,
    pub(crate) codebook: Codebook,
    pub(crate) documents: Vec<QuantizedDocument>,
    pub(crate) candidates: CandidateStructure,
    pub(crate) doc_attention: Option<Vec<Vec<f32>>>,
    pub(crate) float_sidecar: Option<Vec<Vec<f32>>>,
}

impl RetrievalIndex {
    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn documents(&self) -> &[QuantizedDocument] {
        &self.documents
    }

    pub fn candidates(&self) -> &CandidateStructure {
        &self.candidates
    }

    pub fn doc_attention(&self) -> Option<&[Vec<f32>]> {
        self.doc_attention.as_deref()
    }

    /// Raw float patch rows per document, when the index keeps them.
    pub fn float_sidecar(&self) -> Option<&[Vec<f32>]> {
        self.float_sidecar.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.codebook.dim()
    }

    pub fn num_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn total_patches(&self) -> usize {
        self.documents.iter().map(|d| d.codes.len()).sum()
    }
}
