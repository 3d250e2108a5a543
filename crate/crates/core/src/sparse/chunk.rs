//! On-disk chunk store for out-of-core training.
//!
//! Layout (little-endian):
//!
//! ```text
//! header (32 bytes):
//!   magic      [u8; 8]  "GLMCHUNK"
//!   version    u32
//!   flags      u16      bit 0: label arrays present
//!   endian     u16      0xFEFF as written by a little-endian writer
//!   n_rows     u64
//!   n_cols     u64      total over all chunks
//! chunk (repeated):
//!   n_cols     u32
//!   nnz        u64
//!   col_ptr    [u64; n_cols + 1]
//!   row_idx    [u32; nnz]
//!   values     [f64; nnz]
//!   labels     [f64; n_cols]   only when flag bit 0 is set
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::SparseColumnMatrix;

pub const CHUNK_MAGIC: &[u8; 8] = b"GLMCHUNK";
pub const CHUNK_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 32;
const ENDIAN_MARK: u16 = 0xFEFF;
const FLAG_LABELS: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkHeader {
    pub version: u32,
    pub has_labels: bool,
    pub n_rows: u64,
    pub n_cols: u64,
}

impl ChunkHeader {
    fn encode(&self) -> [u8; 32] {
        let mut buf = [0u8; 32];
        buf[..8].copy_from_slice(CHUNK_MAGIC);
        buf[8..12].copy_from_slice(&self.version.to_le_bytes());
        let flags = if self.has_labels { FLAG_LABELS } else { 0 };
        buf[12..14].copy_from_slice(&flags.to_le_bytes());
        buf[14..16].copy_from_slice(&ENDIAN_MARK.to_le_bytes());
        buf[16..24].copy_from_slice(&self.n_rows.to_le_bytes());
        buf[24..32].copy_from_slice(&self.n_cols.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8; 32]) -> Result<Self> {
        if &buf[..8] != CHUNK_MAGIC {
            return Err(Error::format("chunk file magic mismatch"));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != CHUNK_VERSION {
            return Err(Error::format(format!("unsupported chunk format version {version}")));
        }
        let flags = u16::from_le_bytes(buf[12..14].try_into().unwrap());
        let endian = u16::from_le_bytes(buf[14..16].try_into().unwrap());
        if endian != ENDIAN_MARK {
            return Err(Error::format(format!("unexpected endianness marker {endian:#06x}")));
        }
        Ok(Self {
            version,
            has_labels: flags & FLAG_LABELS != 0,
            n_rows: u64::from_le_bytes(buf[16..24].try_into().unwrap()),
            n_cols: u64::from_le_bytes(buf[24..32].try_into().unwrap()),
        })
    }
}

/// Location of one chunk inside the store file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkDescriptor {
    pub file_offset: u64,
    pub n_cols: usize,
    pub nnz: usize,
    /// Index of the chunk's first column within the whole matrix.
    pub first_col: usize,
}

impl ChunkDescriptor {
    fn byte_len(&self, has_labels: bool) -> u64 {
        let n = self.n_cols as u64;
        let z = self.nnz as u64;
        4 + 8 + 8 * (n + 1) + 4 * z + 8 * z + if has_labels { 8 * n } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ChunkStore {
    path: PathBuf,
    header: ChunkHeader,
    chunk_size: usize,
    chunks: Vec<ChunkDescriptor>,
}

/// Writes `matrix` as consecutive chunks of `chunk_size` columns.
pub fn write_chunks<T: Scalar>(
    matrix: &SparseColumnMatrix<T>,
    chunk_size: usize,
    path: impl AsRef<Path>,
) -> Result<ChunkStore> {
    if chunk_size == 0 {
        return Err(Error::invalid("chunk size must be at least 1"));
    }
    let path = path.as_ref();
    let header = ChunkHeader {
        version: CHUNK_VERSION,
        has_labels: matrix.labels().is_some(),
        n_rows: matrix.n_rows() as u64,
        n_cols: matrix.n_cols() as u64,
    };
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&header.encode())?;
    let mut offset = HEADER_LEN;
    let mut chunks = Vec::new();
    let ptr = matrix.col_ptr();
    let mut start = 0;
    while start < matrix.n_cols() {
        let end = (start + chunk_size).min(matrix.n_cols());
        let (lo, hi) = (ptr[start], ptr[end]);
        let desc = ChunkDescriptor { file_offset: offset, n_cols: end - start, nnz: hi - lo, first_col: start };
        out.write_all(&(desc.n_cols as u32).to_le_bytes())?;
        out.write_all(&(desc.nnz as u64).to_le_bytes())?;
        for &p in &ptr[start..=end] {
            out.write_all(&((p - lo) as u64).to_le_bytes())?;
        }
        for &r in &matrix.row_indices()[lo..hi] {
            out.write_all(&r.to_le_bytes())?;
        }
        for &v in &matrix.values()[lo..hi] {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
        if let Some(labels) = matrix.labels() {
            for &y in &labels[start..end] {
                out.write_all(&y.as_f64().to_le_bytes())?;
            }
        }
        offset += desc.byte_len(header.has_labels);
        chunks.push(desc);
        start = end;
    }
    out.flush()?;
    Ok(ChunkStore { path: path.to_path_buf(), header, chunk_size, chunks })
}

impl ChunkStore {
    /// Opens an existing store and indexes its chunks.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = BufReader::new(File::open(path)?);
        let file_len = file.get_ref().metadata()?.len();
        let mut hbuf = [0u8; 32];
        file.read_exact(&mut hbuf).map_err(truncated)?;
        let header = ChunkHeader::decode(&hbuf)?;
        let mut chunks = Vec::new();
        let mut offset = HEADER_LEN;
        let mut first_col = 0usize;
        while offset < file_len {
            file.seek(SeekFrom::Start(offset))?;
            let mut b4 = [0u8; 4];
            let mut b8 = [0u8; 8];
            file.read_exact(&mut b4).map_err(truncated)?;
            file.read_exact(&mut b8).map_err(truncated)?;
            let desc = ChunkDescriptor {
                file_offset: offset,
                n_cols: u32::from_le_bytes(b4) as usize,
                nnz: u64::from_le_bytes(b8) as usize,
                first_col,
            };
            offset += desc.byte_len(header.has_labels);
            if offset > file_len {
                return Err(Error::format("truncated chunk store"));
            }
            first_col += desc.n_cols;
            chunks.push(desc);
        }
        if first_col as u64 != header.n_cols {
            return Err(Error::format(format!(
                "chunks hold {first_col} columns but header declares {}",
                header.n_cols
            )));
        }
        let chunk_size = chunks.first().map_or(0, |c| c.n_cols);
        Ok(Self { path: path.to_path_buf(), header, chunk_size, chunks })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &ChunkHeader {
        &self.header
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn chunks(&self) -> &[ChunkDescriptor] {
        &self.chunks
    }

    pub fn n_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn n_rows(&self) -> usize {
        self.header.n_rows as usize
    }

    pub fn n_cols(&self) -> usize {
        self.header.n_cols as usize
    }

    /// Reads chunk `index`. Opens its own file handle, so distinct chunks can
    /// be read from different threads at once.
    pub fn read_chunk<T: Scalar>(&self, index: usize) -> Result<SparseColumnMatrix<T>> {
        let desc = self
            .chunks
            .get(index)
            .ok_or_else(|| Error::invalid(format!("chunk {index} out of range ({})", self.chunks.len())))?;
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(desc.file_offset))?;
        let mut buf = vec![0u8; desc.byte_len(self.header.has_labels) as usize];
        file.read_exact(&mut buf).map_err(truncated)?;
        let mut cur = Cursor { buf: &buf, pos: 12 };
        let n = desc.n_cols;
        let col_ptr: Vec<usize> = (0..=n).map(|_| cur.u64() as usize).collect();
        let row_idx: Vec<u32> = (0..desc.nnz).map(|_| cur.u32()).collect();
        let values: Vec<T> = (0..desc.nnz).map(|_| T::lit(cur.f64())).collect();
        let labels = self
            .header
            .has_labels
            .then(|| (0..n).map(|_| T::lit(cur.f64())).collect());
        SparseColumnMatrix::from_parts(self.n_rows(), col_ptr, row_idx, values, labels)
    }

    /// Reads all chunks and concatenates them.
    pub fn read_all<T: Scalar>(&self) -> Result<SparseColumnMatrix<T>> {
        let parts = (0..self.n_chunks()).map(|i| self.read_chunk(i)).collect::<Result<Vec<_>>>()?;
        if parts.is_empty() {
            return Ok(SparseColumnMatrix::empty(self.n_rows()));
        }
        SparseColumnMatrix::hstack(&parts)
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::format("truncated chunk store")
    } else {
        Error::Io(e)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}
