//! Wire frames: `{u32 tag, u32 rank, u64 payload_len, payload_len × f64}`,
//! all little-endian. `payload_len` counts f64 values.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper limit on a single frame payload (values, not bytes).
pub const MAX_PAYLOAD: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Tag {
    Handshake = 1,
    ReduceChunk = 2,
    ResultChunk = 3,
    Error = 4,
}

impl Tag {
    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            1 => Tag::Handshake,
            2 => Tag::ReduceChunk,
            3 => Tag::ResultChunk,
            4 => Tag::Error,
            _ => return Err(Error::Protocol(format!("unknown frame tag {v}"))),
        })
    }
}

/// Error codes carried as the first payload value of an `Error` frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    VersionMismatch = 1,
    LengthMismatch = 2,
    DuplicateRank = 3,
    PeerFailure = 4,
    BadRank = 5,
}

impl ErrorCode {
    pub fn describe(code: f64) -> &'static str {
        match code as u32 {
            1 => "protocol version mismatch",
            2 => "vector length mismatch",
            3 => "duplicate rank",
            4 => "peer failure",
            5 => "unexpected rank",
            _ => "unknown error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub tag: Tag,
    pub rank: u32,
    pub payload: Vec<f64>,
}

impl Frame {
    pub fn new(tag: Tag, rank: usize, payload: Vec<f64>) -> Self {
        Self { tag, rank: rank as u32, payload }
    }

    pub fn error(rank: usize, code: ErrorCode) -> Self {
        Self::new(Tag::Error, rank, vec![code as u32 as f64])
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.payload.len());
        buf.extend_from_slice(&(self.tag as u32).to_le_bytes());
        buf.extend_from_slice(&self.rank.to_le_bytes());
        buf.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        for v in &self.payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.encode()).map_err(comm_io)?;
        w.flush().map_err(comm_io)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut head = [0u8; 16];
        r.read_exact(&mut head).map_err(comm_io)?;
        let tag = Tag::from_u32(u32::from_le_bytes(head[0..4].try_into().unwrap()))?;
        let rank = u32::from_le_bytes(head[4..8].try_into().unwrap());
        let len = u64::from_le_bytes(head[8..16].try_into().unwrap());
        if len > MAX_PAYLOAD {
            return Err(Error::Protocol(format!("frame payload of {len} values exceeds limit")));
        }
        let mut bytes = vec![0u8; len as usize * 8];
        r.read_exact(&mut bytes).map_err(comm_io)?;
        let payload = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { tag, rank, payload })
    }

    /// Turns an `Error` frame into a protocol error, passes others through.
    pub fn into_result(self) -> Result<Self> {
        if self.tag == Tag::Error {
            let code = self.payload.first().copied().unwrap_or(0.0);
            return Err(Error::Protocol(format!(
                "{} (reported by rank {})",
                ErrorCode::describe(code),
                self.rank
            )));
        }
        Ok(self)
    }

    pub fn expect(self, tag: Tag) -> Result<Self> {
        let frame = self.into_result()?;
        if frame.tag != tag {
            return Err(Error::Protocol(format!("expected {tag:?} frame, got {:?}", frame.tag)));
        }
        Ok(frame)
    }
}

pub(crate) fn comm_io(e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => Error::Comm("timed out waiting for peer".into()),
        std::io::ErrorKind::UnexpectedEof => Error::Comm("peer disconnected".into()),
        _ => Error::Comm(e.to_string()),
    }
}
