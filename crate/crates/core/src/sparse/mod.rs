//! Sparse training data: CSC storage, SVMLight ingestion, worker
//! partitioning, chunked on-disk storage and spectral norm bounds.

mod chunk;
mod matrix;
mod partition;
mod spectral;
mod svmlight;

pub use chunk::{write_chunks, ChunkDescriptor, ChunkHeader, ChunkStore, CHUNK_MAGIC, CHUNK_VERSION};
pub use matrix::SparseColumnMatrix;
pub use partition::{partition_columns, Partition, PartitionStrategy};
pub use spectral::spectral_bound;
pub use svmlight::{parse_svmlight, write_svmlight};
