//! Collectives used to combine per-node updates.
//!
//! Every implementation sums contributions in rank order
//! (`((c0 + c1) + c2) + ...`), so results are bit-identical across
//! topologies and transports.

mod frame;
mod tcp;

pub use frame::{ErrorCode, Frame, Tag, PROTOCOL_VERSION};
pub use tcp::{TcpConfig, TcpReducer};

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Topology {
    #[default]
    Star,
    Ring,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Star => "star",
            Topology::Ring => "ring",
        })
    }
}

impl FromStr for Topology {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "star" => Ok(Topology::Star),
            "ring" => Ok(Topology::Ring),
            _ => Err(Error::invalid(format!("unknown topology `{s}` (expected star or ring)"))),
        }
    }
}

/// A sum-allreduce over `world_size` ranks, some of which live in this process.
pub trait Reducer: Send {
    fn world_size(&self) -> usize;

    /// Ranks whose contributions this process supplies.
    fn local_ranks(&self) -> Range<usize>;

    /// Sums one vector per local rank with every other participant's.
    /// All participants receive the same bits.
    fn allreduce_sum(&mut self, contributions: &[Vec<f64>]) -> Result<Vec<f64>>;

    /// Distributes `value` from rank 0. Non-root callers pass `None`.
    fn broadcast(&mut self, value: Option<&[f64]>) -> Result<Vec<f64>>;

    /// Bytes sent by this process so far.
    fn bytes_sent(&self) -> u64 {
        0
    }
}

/// Rank-order left fold of equally sized vectors.
pub fn canonical_sum(parts: &[&[f64]]) -> Result<Vec<f64>> {
    let (first, rest) = parts.split_first().ok_or_else(|| Error::invalid("no contributions to sum"))?;
    let mut out = first.to_vec();
    for p in rest {
        if p.len() != out.len() {
            return Err(Error::Dimension { expected: out.len(), got: p.len() });
        }
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o += *v;
        }
    }
    Ok(out)
}

/// All ranks in one process.
#[derive(Debug, Clone)]
pub struct InProcessReducer {
    world: usize,
}

impl InProcessReducer {
    pub fn new(world: usize) -> Result<Self> {
        if world == 0 {
            return Err(Error::invalid("world size must be positive"));
        }
        Ok(Self { world })
    }
}

impl Reducer for InProcessReducer {
    fn world_size(&self) -> usize {
        self.world
    }

    fn local_ranks(&self) -> Range<usize> {
        0..self.world
    }

    fn allreduce_sum(&mut self, contributions: &[Vec<f64>]) -> Result<Vec<f64>> {
        if contributions.len() != self.world {
            return Err(Error::Dimension { expected: self.world, got: contributions.len() });
        }
        let parts: Vec<&[f64]> = contributions.iter().map(Vec::as_slice).collect();
        canonical_sum(&parts)
    }

    fn broadcast(&mut self, value: Option<&[f64]>) -> Result<Vec<f64>> {
        value.map(<[f64]>::to_vec).ok_or_else(|| Error::invalid("broadcast root must supply a value"))
    }
}
