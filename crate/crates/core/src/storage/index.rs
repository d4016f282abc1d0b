use std::path::Path;

use serde::Serialize;

use super::bytes::{Reader, Writer};
use crate::ann::{CentroidPostings, HnswGraph, HnswParams, Posting};
use crate::binary::PackedCodes;
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::model::{CandidateStructure, Codebook, QuantizedDocument, RetrievalIndex, SimilarityMode};

pub const INDEX_MAGIC: &[u8; 4] = b"HPCI";
pub const INDEX_VERSION: u16 = 1;
/// name 8 + length 8 + crc 4
const SECTION_HEADER_LEN: usize = 20;

const ENC_U8: u8 = 0;
const ENC_U16: u8 = 1;
const ENC_PACKED: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectionStats {
    pub name: String,
    /// Payload bytes, excluding the 20-byte section header.
    pub bytes: u64,
    /// Float baseline bytes (`patches * D * 4`) divided by `bytes`.
    pub ratio_vs_float: f64,
}

/// Byte accounting for a persisted index. `total_bytes` equals the size of
/// the file written by [`save_index`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorageStats {
    pub total_bytes: u64,
    /// File header plus per-section headers.
    pub header_bytes: u64,
    pub sections: Vec<SectionStats>,
    pub num_docs: usize,
    pub num_patches: usize,
    pub dim: usize,
    pub k: usize,
    /// Stored bits per patch code: 8 or 16 for byte codes, `b` when packed.
    pub bits_per_code: u8,
    pub packed_codes: bool,
    /// Bytes holding patch codes only.
    pub code_bytes: u64,
    pub code_bytes_per_patch: f64,
    pub bytes_per_patch: f64,
    pub float_baseline_bytes: u64,
    /// `D * 4 / code_bytes_per_patch`
    pub code_only_ratio: f64,
    /// `D * 4 / bytes_per_patch`, everything in the file amortized.
    pub compression_ratio: f64,
}

impl StorageStats {
    pub fn section(&self, name: &str) -> Option<&SectionStats> {
        self.sections.iter().find(|s| s.name == name)
    }
}

fn encode_codebook(cb: &Codebook) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(cb.k() as u32);
    w.u32(cb.dim() as u32);
    w.u8(cb.mode().to_u8());
    w.u64(cb.training_seed());
    w.f32s(cb.centroids());
    w.buf
}

/// Returns the section and the number of bytes in it that hold codes.
fn encode_docs(index: &RetrievalIndex) -> (Vec<u8>, u64) {
    let docs = &index.documents;
    let packed = index.config.binary_enabled;
    let mut w = Writer::default();
    w.u64(docs.len() as u64);
    let (enc, bits) = if packed {
        (ENC_PACKED, index.codebook.bits())
    } else if index.codebook.code_width() == 1 {
        (ENC_U8, 8)
    } else {
        (ENC_U16, 16)
    };
    w.u8(enc);
    w.u8(bits);
    for d in docs {
        w.u64(d.doc_id);
    }
    for d in docs {
        w.u32(d.codes.len() as u32);
    }
    let before = w.buf.len();
    for d in docs {
        match enc {
            ENC_PACKED => w.bytes(
                d.packed_binary
                    .as_ref()
                    .expect("binary index documents carry packed codes")
                    .as_bytes(),
            ),
            ENC_U8 => w.buf.extend(d.codes.iter().map(|&c| c as u8)),
            _ => d.codes.iter().for_each(|&c| w.u16(c)),
        }
    }
    let code_bytes = (w.buf.len() - before) as u64;
    (w.buf, code_bytes)
}

fn encode_candidates(c: &CandidateStructure) -> (&'static str, Vec<u8>) {
    let mut w = Writer::default();
    match c {
        CandidateStructure::CentroidPostings(p) => {
            // lists are rebuilt from the codes on load; lengths are kept
            // as a consistency check
            w.u32(p.k() as u32);
            for l in p.lists() {
                w.u32(l.len() as u32);
            }
            ("postings", w.buf)
        }
        CandidateStructure::HnswGraph(g) => {
            // node vectors and payloads are derived from codes on load
            w.u32(g.params.m as u32);
            w.u32(g.params.ef_construction as u32);
            w.u32(g.params.ef_search as u32);
            w.u64(g.params.seed);
            w.u32(g.entry);
            w.u32(g.node_items.len() as u32);
            for (items, links) in g.node_items.iter().zip(&g.links) {
                w.u32(items.len() as u32);
                items.iter().for_each(|&i| w.u32(i));
                w.u8(links.len() as u8);
                for layer in links {
                    w.u32(layer.len() as u32);
                    layer.iter().for_each(|&n| w.u32(n));
                }
            }
            ("hnsw", w.buf)
        }
        CandidateStructure::HammingScan { bits } => {
            w.u8(*bits);
            ("hamming", w.buf)
        }
    }
}

fn encode_rows(rows: &[Vec<f32>]) -> Vec<u8> {
    let mut w = Writer::default();
    for r in rows {
        w.f32s(r);
    }
    w.buf
}

struct Encoded {
    config: Vec<u8>,
    sections: Vec<(&'static str, Vec<u8>)>,
    code_bytes: u64,
}

fn encode(index: &RetrievalIndex) -> Encoded {
    let config = serde_json::to_vec(&index.config).expect("config serializes");
    let (docs, code_bytes) = encode_docs(index);
    let mut sections = vec![("codebook", encode_codebook(&index.codebook)), ("docs", docs)];
    sections.push(encode_candidates(&index.candidates));
    if let Some(att) = &index.doc_attention {
        sections.push(("docattn", encode_rows(att)));
    }
    if let Some(rows) = &index.float_sidecar {
        sections.push(("sidecar", encode_rows(rows)));
    }
    Encoded {
        config,
        sections,
        code_bytes,
    }
}

fn file_header_len(config_len: usize) -> usize {
    // magic, version, config length, config, config crc, section count
    4 + 2 + 4 + config_len + 4 + 4
}

pub fn index_to_bytes(index: &RetrievalIndex) -> Vec<u8> {
    let enc = encode(index);
    let mut w = Writer::default();
    w.bytes(INDEX_MAGIC);
    w.u16(INDEX_VERSION);
    w.u32(enc.config.len() as u32);
    w.bytes(&enc.config);
    w.u32(crc32fast::hash(&enc.config));
    w.u32(enc.sections.len() as u32);
    for (name, payload) in &enc.sections {
        let mut tag = [0u8; 8];
        tag[..name.len()].copy_from_slice(name.as_bytes());
        w.bytes(&tag);
        w.u64(payload.len() as u64);
        w.u32(crc32fast::hash(payload));
        w.bytes(payload);
    }
    w.buf
}

pub fn save_index(index: &RetrievalIndex, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, index_to_bytes(index))?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<RetrievalIndex> {
    index_from_bytes(&std::fs::read(path)?)
}

pub fn storage_stats(index: &RetrievalIndex) -> StorageStats {
    let enc = encode(index);
    let patches = index.total_patches();
    let dim = index.dim();
    let float = (patches * dim * 4) as u64;
    let header_bytes =
        (file_header_len(enc.config.len()) + SECTION_HEADER_LEN * enc.sections.len()) as u64;
    let sections: Vec<SectionStats> = enc
        .sections
        .iter()
        .map(|(name, p)| SectionStats {
            name: name.to_string(),
            bytes: p.len() as u64,
            ratio_vs_float: float as f64 / p.len().max(1) as f64,
        })
        .collect();
    let total = header_bytes + sections.iter().map(|s| s.bytes).sum::<u64>();
    let code_per_patch = enc.code_bytes as f64 / patches as f64;
    let per_patch = total as f64 / patches as f64;
    let packed = index.config.binary_enabled;
    StorageStats {
        total_bytes: total,
        header_bytes,
        sections,
        num_docs: index.num_docs(),
        num_patches: patches,
        dim,
        k: index.codebook.k(),
        bits_per_code: if packed {
            index.codebook.bits()
        } else {
            8 * index.codebook.code_width() as u8
        },
        packed_codes: packed,
        code_bytes: enc.code_bytes,
        code_bytes_per_patch: code_per_patch,
        bytes_per_patch: per_patch,
        float_baseline_bytes: float,
        code_only_ratio: (dim * 4) as f64 / code_per_patch,
        compression_ratio: (dim * 4) as f64 / per_patch,
    }
}

pub fn index_from_bytes(data: &[u8]) -> Result<RetrievalIndex> {
    let mut r = Reader::new(data, 0);
    let magic = r.take(4)?;
    if magic != INDEX_MAGIC {
        return Err(Error::BadMagic {
            offset: 0,
            expected: String::from_utf8_lossy(INDEX_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u16()?;
    if version != INDEX_VERSION {
        return Err(Error::VersionUnsupported { version, offset: 4 });
    }
    let config_len = r.u32()? as usize;
    let config_bytes = r.take(config_len)?;
    if r.u32()? != crc32fast::hash(config_bytes) {
        return Err(Error::ChecksumMismatch {
            section: "config".into(),
        });
    }
    let config: EngineConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| Error::Format(format!("index config: {e}")))?;
    config.validate()?;

    let count = r.u32()?;
    let mut sections: Vec<(String, Reader)> = Vec::new();
    for _ in 0..count {
        let tag = r.take(8)?;
        let name = String::from_utf8_lossy(tag).trim_end_matches('\0').to_string();
        let len = r.len(1)?;
        let crc = r.u32()?;
        let base = r.offset();
        let payload = r.take(len)?;
        if crc32fast::hash(payload) != crc {
            return Err(Error::ChecksumMismatch { section: name });
        }
        sections.push((name, Reader::new(payload, base)));
    }
    r.finish("last section")?;

    let mut take = |name: &str| -> Option<Reader> {
        let pos = sections.iter().position(|(n, _)| n == name)?;
        Some(sections.remove(pos).1)
    };
    let missing = |name: &str| Error::Format(format!("index has no {name} section"));

    let codebook = decode_codebook(take("codebook").ok_or_else(|| missing("codebook"))?)?;
    if codebook.mode() != config.similarity || codebook.k() != config.kmeans.k {
        return Err(Error::Format("codebook disagrees with the stored config".into()));
    }
    let documents = decode_docs(take("docs").ok_or_else(|| missing("docs"))?, &codebook, &config)?;
    let lengths: Vec<usize> = documents.iter().map(|d| d.codes.len()).collect();

    let candidates = if let Some(s) = take("postings") {
        decode_postings(s, &codebook, &documents)?
    } else if let Some(s) = take("hnsw") {
        decode_hnsw(s, &codebook, &documents)?
    } else if let Some(mut s) = take("hamming") {
        let bits = s.u8()?;
        s.finish("hamming section")?;
        if bits != codebook.bits() {
            return Err(Error::BitsMismatch {
                expected: codebook.bits(),
                found: bits,
            });
        }
        CandidateStructure::HammingScan { bits }
    } else {
        return Err(missing("candidate structure"));
    };
    let doc_attention = take("docattn")
        .map(|s| decode_rows(s, &lengths, 1, "docattn"))
        .transpose()?;
    let float_sidecar = take("sidecar")
        .map(|s| decode_rows(s, &lengths, codebook.dim(), "sidecar"))
        .transpose()?;
    if let Some((name, _)) = sections.first() {
        return Err(Error::Format(format!("unexpected section {name:?}")));
    }

    Ok(RetrievalIndex {
        config,
        codebook,
        documents,
        candidates,
        doc_attention,
        float_sidecar,
    })
}

fn decode_codebook(mut r: Reader) -> Result<Codebook> {
    let k = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mode = r.u8()?;
    let mode = SimilarityMode::from_u8(mode)
        .ok_or_else(|| Error::Format(format!("unknown similarity mode byte {mode}")))?;
    let seed = r.u64()?;
    let centroids = r.f32s(k.checked_mul(dim).ok_or_else(|| Error::Format("codebook size".into()))?)?;
    r.finish("codebook")?;
    Codebook::new(centroids, dim, mode, seed)
}

fn decode_docs(mut r: Reader, cb: &Codebook, config: &EngineConfig) -> Result<Vec<QuantizedDocument>> {
    let n = r.len(12)?;
    let enc = r.u8()?;
    let bits = r.u8()?;
    let expected = if config.binary_enabled {
        (ENC_PACKED, cb.bits())
    } else if cb.code_width() == 1 {
        (ENC_U8, 8)
    } else {
        (ENC_U16, 16)
    };
    if (enc, bits) != expected {
        return Err(Error::Format(format!(
            "document encoding ({enc}, {bits} bits) does not match codebook of size {}",
            cb.k()
        )));
    }
    let ids: Vec<u64> = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
    let lens: Vec<usize> = (0..n).map(|_| r.u32().map(|m| m as usize)).collect::<Result<_>>()?;
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Format("document ids not strictly increasing".into()));
    }
    let mut docs = Vec::with_capacity(n);
    for (&doc_id, &m) in ids.iter().zip(&lens) {
        let doc = match enc {
            ENC_PACKED => {
                let bytes = r.take(crate::binary::packed_len(m, bits))?.to_vec();
                let packed = PackedCodes::from_bytes(bits, m, bytes)?;
                let codes = packed.unpack().into_iter().map(|c| c as u16).collect();
                QuantizedDocument {
                    doc_id,
                    codes,
                    packed_binary: Some(packed),
                }
            }
            ENC_U8 => QuantizedDocument::new(doc_id, r.take(m)?.iter().map(|&c| c as u16).collect()),
            _ => QuantizedDocument::new(
                doc_id,
                (0..m).map(|_| r.u16()).collect::<Result<_>>()?,
            ),
        };
        if let Some(&c) = doc.codes.iter().find(|&&c| c as usize >= cb.k()) {
            return Err(Error::CodeOutOfRange {
                code: c as usize,
                k: cb.k(),
            });
        }
        docs.push(doc);
    }
    r.finish("docs")?;
    Ok(docs)
}

fn decode_postings(mut r: Reader, cb: &Codebook, docs: &[QuantizedDocument]) -> Result<CandidateStructure> {
    let k = r.u32()? as usize;
    if k != cb.k() {
        return Err(Error::CodebookMismatch);
    }
    let lens: Vec<u32> = (0..k).map(|_| r.u32()).collect::<Result<_>>()?;
    r.finish("postings")?;
    let post = CentroidPostings::build(k, docs)?;
    if post.lists().iter().map(|l| l.len() as u32).ne(lens.iter().copied()) {
        return Err(Error::Format("posting list lengths disagree with document codes".into()));
    }
    Ok(CandidateStructure::CentroidPostings(post))
}

fn decode_hnsw(mut r: Reader, cb: &Codebook, docs: &[QuantizedDocument]) -> Result<CandidateStructure> {
    let params = HnswParams {
        m: r.u32()? as usize,
        ef_construction: r.u32()? as usize,
        ef_search: r.u32()? as usize,
        seed: r.u64()?,
    };
    params.validate()?;
    let entry = r.u32()?;
    let n = r.u32()? as usize;
    let mut node_items = Vec::with_capacity(n.min(r.remaining()));
    let mut links = Vec::with_capacity(n.min(r.remaining()));
    for _ in 0..n {
        let c = r.u32()? as usize;
        node_items.push((0..c).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        let layers = r.u8()? as usize;
        let mut node_links = Vec::with_capacity(layers);
        for _ in 0..layers {
            let c = r.u32()? as usize;
            node_links.push((0..c).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        }
        links.push(node_links);
    }
    r.finish("hnsw")?;

    let mut payloads = Vec::new();
    let mut codes = Vec::new();
    for (d, doc) in docs.iter().enumerate() {
        for (p, &c) in doc.codes.iter().enumerate() {
            payloads.push(Posting {
                doc: d as u32,
                patch: p as u32,
            });
            codes.push(c);
        }
    }
    let mut vectors = Vec::with_capacity(n * cb.dim());
    for items in &node_items {
        let first = *items
            .first()
            .ok_or_else(|| Error::Format("hnsw node without items".into()))?;
        let code = *codes
            .get(first as usize)
            .ok_or_else(|| Error::Format("hnsw item out of range".into()))?;
        vectors.extend_from_slice(cb.centroid(code as usize));
    }
    let g = HnswGraph::from_parts(params, cb.dim(), vectors, node_items, payloads, links, entry)?;
    Ok(CandidateStructure::HnswGraph(g))
}

fn decode_rows(mut r: Reader, lengths: &[usize], width: usize, name: &str) -> Result<Vec<Vec<f32>>> {
    let rows = lengths
        .iter()
        .map(|&m| r.f32s(m * width))
        .collect::<Result<_>>()?;
    r.finish(name)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{build_index, query, CandidateMode, QueryOptions};
    use crate::model::PatchMatrix;
    use crate::pruner::{PruneConfig, PruneSide};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus(n: usize, m: usize, dim: usize, seed: u64) -> Vec<PatchMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let data = (0..m * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                let att = (0..m).map(|_| rng.random::<f32>()).collect();
                PatchMatrix::new(i as u64, dim, data, att).unwrap()
            })
            .collect()
    }

    fn configs() -> Vec<EngineConfig> {
        let mut out = Vec::new();
        for mode in [CandidateMode::Postings, CandidateMode::Hnsw, CandidateMode::Hamming] {
            let mut cfg = EngineConfig::new(16, 9);
            cfg.candidate_mode = mode;
            cfg.binary_enabled = mode == CandidateMode::Hamming;
            out.push(cfg);
        }
        let mut cfg = EngineConfig::new(300, 9);
        cfg.prune = PruneConfig::new(0.75, PruneSide::Both).unwrap();
        cfg.float_sidecar = true;
        cfg.locality_ordering = true;
        out.push(cfg);
        out
    }

    #[test]
    fn round_trip_preserves_index_and_queries() {
        let docs = corpus(60, 8, 6, 1);
        let queries = corpus(4, 5, 6, 2);
        for cfg in configs() {
            let idx = build_index(docs.clone(), &cfg).unwrap();
            let bytes = index_to_bytes(&idx);
            let back = index_from_bytes(&bytes).unwrap();
            assert_eq!(back, idx, "{:?}", cfg.candidate_mode);
            assert_eq!(index_to_bytes(&back), bytes);
            assert_eq!(storage_stats(&idx).total_bytes, bytes.len() as u64);
            for q in &queries {
                assert_eq!(
                    query(&back, q, &QueryOptions::default()).unwrap(),
                    query(&idx, q, &QueryOptions::default()).unwrap()
                );
            }
        }
    }

    fn section_payload_offset(bytes: &[u8], name: &str) -> usize {
        let cfg_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let mut pos = file_header_len(cfg_len);
        loop {
            let tag = &bytes[pos..pos + 8];
            let len = u64::from_le_bytes(bytes[pos + 8..pos + 16].try_into().unwrap()) as usize;
            if tag.starts_with(name.as_bytes()) {
                return pos + SECTION_HEADER_LEN;
            }
            pos += SECTION_HEADER_LEN + len;
        }
    }

    #[test]
    fn corruption_names_the_section() {
        let idx = build_index(corpus(20, 4, 3, 3), &EngineConfig::new(8, 1)).unwrap();
        let bytes = index_to_bytes(&idx);
        for name in ["codebook", "docs", "postings"] {
            let mut bad = bytes.clone();
            bad[section_payload_offset(&bytes, name) + 9] ^= 0x40;
            match index_from_bytes(&bad) {
                Err(Error::ChecksumMismatch { section }) => assert_eq!(section, name),
                other => panic!("expected checksum error, got {other:?}"),
            }
        }
    }

    #[test]
    fn header_errors() {
        let idx = build_index(corpus(10, 3, 2, 4), &EngineConfig::new(4, 1)).unwrap();
        let mut bytes = index_to_bytes(&idx);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(index_from_bytes(&bytes), Err(Error::TruncatedFile { .. })));
        bytes[0] = b'Z';
        assert!(matches!(index_from_bytes(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn sidecar_and_code_ratios() {
        let mut cfg = EngineConfig::new(16, 1);
        cfg.float_sidecar = true;
        let idx = build_index(corpus(30, 10, 8, 5), &cfg).unwrap();
        let stats = storage_stats(&idx);
        assert_eq!(stats.section("sidecar").unwrap().ratio_vs_float, 1.0);
        assert_eq!(stats.code_bytes_per_patch, 1.0);
        assert_eq!(stats.code_only_ratio, 32.0);
        assert_eq!(stats.bits_per_code, 8);
    }
}
