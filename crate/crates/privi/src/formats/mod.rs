//! On-disk formats: snippet manifests, the embedding store, binary
//! checkpoints, line-delimited logs and evaluation reports.

mod checkpoint;
mod embeddings;
mod jsonl;
mod manifest;
mod report;

pub use checkpoint::{
    decode_checkpoint, decode_classifier, decode_jepa, decode_relevance, encode_checkpoint, encode_classifier, encode_jepa,
    encode_relevance, Checkpoint, CHECKPOINT_VERSION, CLASSIFIER_MAGIC, JEPA_MAGIC, RELEVANCE_MAGIC,
};
pub use embeddings::{EmbeddingStore, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use jsonl::{from_jsonl, to_jsonl};
pub use manifest::{read_manifest, round6, write_manifest};
pub use report::{plot_csv, report_jsonl, CurvePoint, ReportLine};
