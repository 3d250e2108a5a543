//! TCP transport for the collectives, star or ring.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::ops::Range;
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{comm_io, ErrorCode, Frame, Tag, PROTOCOL_VERSION};
use super::{canonical_sum, Reducer, Topology};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TcpConfig {
    pub rank: usize,
    /// One `host:port` per rank. Star only needs rank 0 to listen.
    pub peers: Vec<String>,
    pub topology: Topology,
    /// Shared vector length, checked during the handshake.
    pub dim: usize,
    pub timeout: Duration,
}

impl TcpConfig {
    pub fn new(rank: usize, peers: Vec<String>, topology: Topology, dim: usize) -> Self {
        Self { rank, peers, topology, dim, timeout: Duration::from_secs(30) }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.peers.is_empty() {
            return Err(Error::invalid("peer list is empty"));
        }
        if self.rank >= self.peers.len() {
            return Err(Error::invalid(format!(
                "rank {} out of range for {} peers",
                self.rank,
                self.peers.len()
            )));
        }
        Ok(())
    }

    fn needs_listener(&self) -> bool {
        self.peers.len() > 1 && (self.topology == Topology::Ring || self.rank == 0)
    }
}

enum Links {
    Single,
    StarRoot(Vec<Option<TcpStream>>),
    StarLeaf(TcpStream),
    Ring { next: TcpStream, prev: TcpStream },
}

pub struct TcpReducer {
    rank: usize,
    world: usize,
    links: Links,
    sent: u64,
}

impl std::fmt::Debug for TcpReducer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TcpReducer").field("rank", &self.rank).field("world", &self.world).finish()
    }
}

fn prepare(stream: &TcpStream, timeout: Duration) -> Result<()> {
    stream.set_nonblocking(false).map_err(comm_io)?;
    stream.set_nodelay(true).map_err(comm_io)?;
    stream.set_read_timeout(Some(timeout)).map_err(comm_io)?;
    stream.set_write_timeout(Some(timeout)).map_err(comm_io)?;
    Ok(())
}

fn accept_before(listener: &TcpListener, deadline: Instant, timeout: Duration) -> Result<TcpStream> {
    listener.set_nonblocking(true).map_err(comm_io)?;
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                prepare(&stream, timeout)?;
                return Ok(stream);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(Error::Comm("timed out waiting for peers to connect".into()));
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(comm_io(e)),
        }
    }
}

fn connect_before(addr: &str, deadline: Instant, timeout: Duration) -> Result<TcpStream> {
    loop {
        let attempt = addr
            .to_socket_addrs()
            .map_err(|e| Error::Comm(format!("cannot resolve {addr}: {e}")))?
            .next()
            .ok_or_else(|| Error::Comm(format!("no address for {addr}")))
            .and_then(|sa| TcpStream::connect_timeout(&sa, Duration::from_millis(500)).map_err(comm_io));
        match attempt {
            Ok(stream) => {
                prepare(&stream, timeout)?;
                return Ok(stream);
            }
            Err(e) => {
                if Instant::now() >= deadline {
                    return Err(Error::Comm(format!("could not connect to {addr}: {e}")));
                }
                thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

fn segment(m: usize, world: usize, j: usize) -> Range<usize> {
    (m * j / world)..(m * (j + 1) / world)
}

impl TcpReducer {
    /// Binds (if this rank listens), connects and completes the handshake.
    pub fn connect(config: TcpConfig) -> Result<Self> {
        config.validate()?;
        let listener = if config.needs_listener() {
            let addr = &config.peers[config.rank];
            Some(TcpListener::bind(addr).map_err(|e| Error::Comm(format!("cannot listen on {addr}: {e}")))?)
        } else {
            None
        };
        Self::connect_with_listener(config, listener)
    }

    /// Like [`TcpReducer::connect`] with a listener bound by the caller.
    pub fn connect_with_listener(config: TcpConfig, listener: Option<TcpListener>) -> Result<Self> {
        config.validate()?;
        let world = config.peers.len();
        let rank = config.rank;
        if world == 1 {
            return Ok(Self { rank, world, links: Links::Single, sent: 0 });
        }
        let listener = match (config.needs_listener(), listener) {
            (true, Some(l)) => Some(l),
            (true, None) => return Err(Error::invalid("this rank needs a listener")),
            (false, _) => None,
        };
        let deadline = Instant::now() + config.timeout;
        let hello = Frame::new(Tag::Handshake, rank, vec![PROTOCOL_VERSION as f64, config.dim as f64, world as f64]);
        let mut reducer = match config.topology {
            Topology::Star if rank == 0 => {
                let listener = listener.expect("checked above");
                let mut links: Vec<Option<TcpStream>> = (0..world).map(|_| None).collect();
                let mut extras = Vec::new();
                let mut failure: Option<ErrorCode> = None;
                for _ in 1..world {
                    let mut stream = accept_before(&listener, deadline, config.timeout)?;
                    let frame = Frame::read_from(&mut stream)?.expect(Tag::Handshake)?;
                    let peer = frame.rank as usize;
                    if let Some(code) = check_hello(&frame, config.dim, world) {
                        failure.get_or_insert(code);
                    }
                    if peer == 0 || peer >= world {
                        failure.get_or_insert(ErrorCode::BadRank);
                        extras.push(stream);
                    } else if links[peer].is_some() {
                        failure.get_or_insert(ErrorCode::DuplicateRank);
                        extras.push(stream);
                    } else {
                        links[peer] = Some(stream);
                    }
                }
                if let Some(code) = failure {
                    let err = Frame::error(0, code);
                    for s in links.iter_mut().flatten().chain(extras.iter_mut()) {
                        let _ = err.write_to(s);
                    }
                    return Err(Error::Protocol(format!("handshake failed: {}", ErrorCode::describe(code as u32 as f64))));
                }
                for s in links.iter_mut().flatten() {
                    hello.write_to(s)?;
                }
                Self { rank, world, links: Links::StarRoot(links), sent: 0 }
            }
            Topology::Star => {
                let mut stream = connect_before(&config.peers[0], deadline, config.timeout)?;
                hello.write_to(&mut stream)?;
                let reply = Frame::read_from(&mut stream)?.expect(Tag::Handshake)?;
                if let Some(code) = check_hello(&reply, config.dim, world) {
                    return Err(Error::Protocol(format!("handshake failed: {}", ErrorCode::describe(code as u32 as f64))));
                }
                Self { rank, world, links: Links::StarLeaf(stream), sent: 0 }
            }
            Topology::Ring => {
                let listener = listener.expect("checked above");
                let mut next = connect_before(&config.peers[(rank + 1) % world], deadline, config.timeout)?;
                let mut prev = accept_before(&listener, deadline, config.timeout)?;
                hello.write_to(&mut next)?;
                let frame = Frame::read_from(&mut prev)?.expect(Tag::Handshake)?;
                let mut code = check_hello(&frame, config.dim, world).map_or(0u32, |c| c as u32);
                if code == 0 && frame.rank as usize != (rank + world - 1) % world {
                    code = ErrorCode::BadRank as u32;
                }
                // Spread the worst status once around the ring.
                for _ in 0..world - 1 {
                    Frame::new(Tag::Handshake, rank, vec![code as f64]).write_to(&mut next)?;
                    let status = Frame::read_from(&mut prev)?.expect(Tag::Handshake)?;
                    code = code.max(status.payload.first().copied().unwrap_or(0.0) as u32);
                }
                if code != 0 {
                    return Err(Error::Protocol(format!("handshake failed: {}", ErrorCode::describe(code as f64))));
                }
                Self { rank, world, links: Links::Ring { next, prev }, sent: 0 }
            }
        };
        reducer.sent = 0;
        Ok(reducer)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn send(sent: &mut u64, stream: &mut TcpStream, frame: &Frame) -> Result<()> {
        *sent += 16 + 8 * frame.payload.len() as u64;
        frame.write_to(stream)
    }

    fn star_root_reduce(links: &mut [Option<TcpStream>], sent: &mut u64, own: &[f64]) -> Result<Vec<f64>> {
        let mut parts = vec![own.to_vec()];
        let mut failure: Option<ErrorCode> = None;
        let mut first_err = None;
        for s in links.iter_mut().skip(1) {
            let s = s.as_mut().expect("star root holds every link");
            match Frame::read_from(s).and_then(|f| f.expect(Tag::ReduceChunk)) {
                Ok(f) if f.payload.len() == own.len() => parts.push(f.payload),
                Ok(_) => {
                    failure.get_or_insert(ErrorCode::LengthMismatch);
                }
                Err(e) => {
                    failure.get_or_insert(ErrorCode::PeerFailure);
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(code) = failure {
            let err = Frame::error(0, code);
            for s in links.iter_mut().skip(1).flatten() {
                let _ = Self::send(sent, s, &err);
            }
            return Err(first_err.unwrap_or_else(|| {
                Error::Protocol(format!("allreduce failed: {}", ErrorCode::describe(code as u32 as f64)))
            }));
        }
        let refs: Vec<&[f64]> = parts.iter().map(Vec::as_slice).collect();
        let total = canonical_sum(&refs)?;
        let out = Frame::new(Tag::ResultChunk, 0, total.clone());
        for s in links.iter_mut().skip(1).flatten() {
            Self::send(sent, s, &out)?;
        }
        Ok(total)
    }

    /// One ring step: write `out` to `next` while reading from `prev`.
    fn exchange(next: &mut TcpStream, prev: &mut TcpStream, sent: &mut u64, out: Frame) -> Result<Frame> {
        *sent += 16 + 8 * out.payload.len() as u64;
        thread::scope(|scope| {
            let writer = scope.spawn(move || out.write_to(next));
            let read = Frame::read_from(prev);
            let wrote = writer.join().map_err(|_| Error::Comm("writer thread panicked".into()))?;
            wrote?;
            read
        })
    }

    fn ring_reduce(&mut self, own: &[f64]) -> Result<Vec<f64>> {
        let world = self.world;
        let rank = self.rank;
        let m = own.len();
        let Links::Ring { next, prev } = &mut self.links else { unreachable!() };
        let sent = &mut self.sent;
        let mut failed: Option<Error> = None;
        let prev_rank = (rank + world - 1) % world;

        // Reduce-scatter: forward per-rank slices so the owner can fold in rank order.
        let mut bundle: Vec<f64> = own[segment(m, world, rank)].to_vec();
        for s in 0..world - 1 {
            let out = if failed.is_some() {
                Frame::error(rank, ErrorCode::PeerFailure)
            } else {
                let mut payload = Vec::with_capacity(bundle.len() + 1);
                payload.push(m as f64);
                payload.extend_from_slice(&bundle);
                Frame::new(Tag::ReduceChunk, rank, payload)
            };
            let frame = Self::exchange(next, prev, sent, out)?;
            if failed.is_some() {
                continue;
            }
            let j = (rank + 2 * world - 1 - s) % world;
            let seg = segment(m, world, j);
            match frame.expect(Tag::ReduceChunk) {
                Ok(f) if f.payload.first().copied() == Some(m as f64) && f.payload.len() == 1 + (s + 1) * seg.len() => {
                    bundle = f.payload[1..].to_vec();
                    bundle.extend_from_slice(&own[seg]);
                }
                Ok(_) => failed = Some(Error::Protocol(format!("allreduce failed: {}", ErrorCode::describe(2.0)))),
                Err(e) => failed = Some(e),
            }
        }
        let mut result = vec![0.0; m];
        if failed.is_none() {
            let j = (rank + 1) % world;
            let seg = segment(m, world, j);
            let len = seg.len();
            // Entry i of the bundle came from rank (j + i) mod world.
            let mut parts: Vec<&[f64]> = vec![&[]; world];
            for i in 0..world {
                parts[(j + i) % world] = &bundle[i * len..(i + 1) * len];
            }
            let folded = if len == 0 { Vec::new() } else { canonical_sum(&parts)? };
            result[seg].copy_from_slice(&folded);
        }

        // Allgather of the reduced segments.
        for s in 0..world - 1 {
            let send_j = (rank + 1 + world - s) % world;
            let out = if failed.is_some() {
                Frame::error(rank, ErrorCode::PeerFailure)
            } else {
                Frame::new(Tag::ResultChunk, rank, result[segment(m, world, send_j)].to_vec())
            };
            let frame = Self::exchange(next, prev, sent, out)?;
            if failed.is_some() {
                continue;
            }
            let recv_j = (rank + world - s) % world;
            let seg = segment(m, world, recv_j);
            match frame.expect(Tag::ResultChunk) {
                Ok(f) if f.rank as usize == prev_rank && f.payload.len() == seg.len() => {
                    result[seg].copy_from_slice(&f.payload);
                }
                Ok(_) => failed = Some(Error::Protocol("allgather segment mismatch".into())),
                Err(e) => failed = Some(e),
            }
        }
        match failed {
            Some(e) => Err(e),
            None => Ok(result),
        }
    }
}

fn check_hello(frame: &Frame, dim: usize, world: usize) -> Option<ErrorCode> {
    let p = &frame.payload;
    if p.first().copied() != Some(PROTOCOL_VERSION as f64) {
        return Some(ErrorCode::VersionMismatch);
    }
    if p.get(1).copied() != Some(dim as f64) {
        return Some(ErrorCode::LengthMismatch);
    }
    if p.get(2).copied() != Some(world as f64) {
        return Some(ErrorCode::BadRank);
    }
    None
}

impl Reducer for TcpReducer {
    fn world_size(&self) -> usize {
        self.world
    }

    fn local_ranks(&self) -> Range<usize> {
        self.rank..self.rank + 1
    }

    fn allreduce_sum(&mut self, contributions: &[Vec<f64>]) -> Result<Vec<f64>> {
        if contributions.len() != 1 {
            return Err(Error::Dimension { expected: 1, got: contributions.len() });
        }
        let own = &contributions[0];
        match &mut self.links {
            Links::Single => Ok(own.clone()),
            Links::StarRoot(links) => Self::star_root_reduce(links, &mut self.sent, own),
            Links::StarLeaf(stream) => {
                Self::send(&mut self.sent, stream, &Frame::new(Tag::ReduceChunk, self.rank, own.clone()))?;
                let reply = Frame::read_from(stream)?.expect(Tag::ResultChunk)?;
                if reply.payload.len() != own.len() {
                    return Err(Error::Protocol(format!("allreduce failed: {}", ErrorCode::describe(2.0))));
                }
                Ok(reply.payload)
            }
            Links::Ring { .. } => self.ring_reduce(own),
        }
    }

    fn broadcast(&mut self, value: Option<&[f64]>) -> Result<Vec<f64>> {
        if (self.rank == 0) != value.is_some() {
            return Err(Error::invalid("exactly rank 0 supplies the broadcast value"));
        }
        let rank = self.rank;
        let world = self.world;
        match &mut self.links {
            Links::Single => Ok(value.unwrap().to_vec()),
            Links::StarRoot(links) => {
                let frame = Frame::new(Tag::ResultChunk, 0, value.unwrap().to_vec());
                for s in links.iter_mut().skip(1).flatten() {
                    Self::send(&mut self.sent, s, &frame)?;
                }
                Ok(frame.payload)
            }
            Links::StarLeaf(stream) => Ok(Frame::read_from(stream)?.expect(Tag::ResultChunk)?.payload),
            Links::Ring { next, prev } => {
                let payload = match value {
                    Some(v) => v.to_vec(),
                    None => Frame::read_from(prev)?.expect(Tag::ResultChunk)?.payload,
                };
                if !(rank + 1).is_multiple_of(world) {
                    Self::send(&mut self.sent, next, &Frame::new(Tag::ResultChunk, rank, payload.clone()))?;
                }
                Ok(payload)
            }
        }
    }

    fn bytes_sent(&self) -> u64 {
        self.sent
    }
}
