//! On-disk formats: embeddings (`HPCE`), indexes (`HPCI`) and TREC-style
//! qrels and run files. All multi-byte integers and floats are
//! little-endian.

mod bytes;
mod embeddings;
mod index;
mod trec;

pub use embeddings::{
    read_embeddings, read_embeddings_jsonl, read_corpus, write_embeddings, write_embeddings_jsonl,
    EmbeddingsHeader, EmbeddingsReader, EmbeddingsWriter, EMBEDDINGS_HEADER_LEN,
    EMBEDDINGS_MAGIC, EMBEDDINGS_VERSION,
};
pub use index::{
    load_index, save_index, storage_stats, index_to_bytes, index_from_bytes, SectionStats,
    StorageStats, INDEX_MAGIC, INDEX_VERSION,
};
pub use trec::{read_qrels, read_run, write_qrels, write_run, Qrels, Run};
