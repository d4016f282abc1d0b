use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bytes::f32s_from_le;
use crate::error::{Error, Result};
use crate::model::{PatchMatrix, SimilarityMode};

pub const EMBEDDINGS_MAGIC: &[u8; 4] = b"HPCE";
pub const EMBEDDINGS_VERSION: u16 = 1;
/// magic 4 + version 2 + dim 4 + doc count 8 + mode 1
pub const EMBEDDINGS_HEADER_LEN: u64 = 19;
const COUNT_OFFSET: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingsHeader {
    pub version: u16,
    pub dim: usize,
    pub num_docs: u64,
    pub mode: SimilarityMode,
}

/// Streams `PatchMatrix` records; only one document is held in memory.
pub struct EmbeddingsReader<R> {
    inner: R,
    header: EmbeddingsHeader,
    offset: u64,
    read: u64,
    total_len: Option<u64>,
    failed: bool,
}

impl EmbeddingsReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        Self::with_len(BufReader::new(file), Some(len))
    }
}

impl<R: Read> EmbeddingsReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        Self::with_len(inner, None)
    }

    fn with_len(inner: R, total_len: Option<u64>) -> Result<Self> {
        let mut r = Self {
            inner,
            header: EmbeddingsHeader {
                version: EMBEDDINGS_VERSION,
                dim: 0,
                num_docs: 0,
                mode: SimilarityMode::Cosine,
            },
            offset: 0,
            read: 0,
            total_len,
            failed: false,
        };
        let mut magic = [0u8; 4];
        r.fill(&mut magic)?;
        if &magic != EMBEDDINGS_MAGIC {
            return Err(Error::BadMagic {
                offset: 0,
                expected: String::from_utf8_lossy(EMBEDDINGS_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let mut head = [0u8; 15];
        r.fill(&mut head)?;
        let version = u16::from_le_bytes([head[0], head[1]]);
        if version != EMBEDDINGS_VERSION {
            return Err(Error::VersionUnsupported { version, offset: 4 });
        }
        let dim = u32::from_le_bytes(head[2..6].try_into().unwrap()) as usize;
        let num_docs = u64::from_le_bytes(head[6..14].try_into().unwrap());
        let mode = SimilarityMode::from_u8(head[14]).ok_or_else(|| {
            Error::Format(format!("unknown similarity mode byte {} at offset 18", head[14]))
        })?;
        if dim == 0 {
            return Err(Error::Format("embedding dimension is zero".into()));
        }
        r.header = EmbeddingsHeader {
            version,
            dim,
            num_docs,
            mode,
        };
        Ok(r)
    }

    pub fn header(&self) -> EmbeddingsHeader {
        self.header
    }

    /// Reads exactly `buf.len()` bytes; on early EOF reports the absolute
    /// offset where the data ran out.
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(Error::TruncatedFile {
                        offset: self.offset + got as u64,
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += got as u64;
        Ok(())
    }

    fn next_record(&mut self) -> Result<PatchMatrix> {
        let mut head = [0u8; 12];
        self.fill(&mut head)?;
        let doc_id = u64::from_le_bytes(head[..8].try_into().unwrap());
        let m = u32::from_le_bytes(head[8..].try_into().unwrap()) as usize;
        if m == 0 {
            return Err(Error::Format(format!(
                "document {doc_id} at offset {} has no patches",
                self.offset - 12
            )));
        }
        let dim = self.header.dim;
        let body = (m as u64) * (dim as u64 + 1) * 4;
        if let Some(total) = self.total_len {
            if self.offset + body > total {
                return Err(Error::TruncatedFile { offset: total });
            }
        }
        let mut buf = vec![0u8; body as usize];
        self.fill(&mut buf)?;
        let split = m * dim * 4;
        PatchMatrix::new(
            doc_id,
            dim,
            f32s_from_le(&buf[..split]),
            f32s_from_le(&buf[split..]),
        )
    }

    fn check_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => {
                    return Err(Error::Format(format!(
                        "trailing data after {} declared documents at offset {}",
                        self.header.num_docs, self.offset
                    )))
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl<R: Read> Iterator for EmbeddingsReader<R> {
    type Item = Result<PatchMatrix>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = if self.read == self.header.num_docs {
            match self.check_eof() {
                Ok(()) => return None,
                Err(e) => Err(e),
            }
        } else {
            self.read += 1;
            self.next_record()
        };
        self.failed = item.is_err();
        Some(item)
    }
}

/// Opens a binary embeddings file for streaming.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingsReader<BufReader<File>>> {
    EmbeddingsReader::open(path)
}

/// Writes the header up front and patches the document count on `finish`.
pub struct EmbeddingsWriter<W: Write + Seek> {
    inner: W,
    dim: usize,
    count: u64,
}

impl<W: Write + Seek> EmbeddingsWriter<W> {
    pub fn new(mut inner: W, dim: usize, mode: SimilarityMode) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!("unsupported dimension {dim}")));
        }
        inner.write_all(EMBEDDINGS_MAGIC)?;
        inner.write_all(&EMBEDDINGS_VERSION.to_le_bytes())?;
        inner.write_all(&(dim as u32).to_le_bytes())?;
        inner.write_all(&0u64.to_le_bytes())?;
        inner.write_all(&[mode.to_u8()])?;
        Ok(Self {
            inner,
            dim,
            count: 0,
        })
    }

    pub fn write(&mut self, pm: &PatchMatrix) -> Result<()> {
        if pm.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: pm.dim(),
            });
        }
        let m = u32::try_from(pm.num_patches())
            .map_err(|_| Error::InvalidConfig("too many patches in one document".into()))?;
        let mut buf = Vec::with_capacity(12 + (pm.data().len() + pm.attention().len()) * 4);
        buf.extend_from_slice(&pm.doc_id().to_le_bytes());
        buf.extend_from_slice(&m.to_le_bytes());
        for x in pm.data().iter().chain(pm.attention()) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.seek(SeekFrom::Start(COUNT_OFFSET))?;
        self.inner.write_all(&self.count.to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn write_embeddings<'a, I>(
    path: impl AsRef<Path>,
    docs: I,
    dim: usize,
    mode: SimilarityMode,
) -> Result<()>
where
    I: IntoIterator<Item = &'a PatchMatrix>,
{
    let mut w = EmbeddingsWriter::new(BufWriter::new(File::create(path)?), dim, mode)?;
    for d in docs {
        w.write(d)?;
    }
    w.finish()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct JsonDoc {
    doc_id: u64,
    patches: Vec<Vec<f32>>,
    attention: Vec<f32>,
}

/// One JSON object per line: `{"doc_id", "patches": [[..]], "attention": [..]}`.
pub fn read_embeddings_jsonl(path: impl AsRef<Path>) -> Result<Vec<PatchMatrix>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: JsonDoc = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let pm = PatchMatrix::from_rows(doc.doc_id, &doc.patches, doc.attention).map_err(|e| {
            Error::Parse {
                line: i + 1,
                message: e.to_string(),
            }
        })?;
        out.push(pm);
    }
    Ok(out)
}

pub fn write_embeddings_jsonl<'a, I>(path: impl AsRef<Path>, docs: I) -> Result<()>
where
    I: IntoIterator<Item = &'a PatchMatrix>,
{
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        let doc = JsonDoc {
            doc_id: d.doc_id(),
            patches: d.rows().map(<[f32]>::to_vec).collect(),
            attention: d.attention().to_vec(),
        };
        serde_json::to_writer(&mut w, &doc).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a whole corpus, choosing the format by extension (`.jsonl` is
/// text, anything else binary). The mode is `None` for text input.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<(Vec<PatchMatrix>, Option<SimilarityMode>)> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Ok((read_embeddings_jsonl(path)?, None));
    }
    let reader = read_embeddings(path)?;
    let mode = reader.header().mode;
    Ok((reader.collect::<Result<_>>()?, Some(mode)))
}
