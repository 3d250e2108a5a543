//! Out-of-core epochs over a chunk store with a three-stage pipeline:
//! while chunk `c` trains, chunk `c+1` is read into the swap buffer and its
//! permutation keys are generated.

use std::io::Write;
use std::sync::mpsc::{sync_channel, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::cocoa::load_chunk;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, generate_keys, permutation_from_keys};
use crate::scalar::Scalar;
use crate::solver::{scd_pass, EpochData, LocalProblem, SolverOptions, SolverState};
use crate::sparse::{ChunkStore, SparseColumnMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PipelineMode {
    #[default]
    On,
    Off,
}

impl std::str::FromStr for PipelineMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(PipelineMode::On),
            "off" => Ok(PipelineMode::Off),
            _ => Err(Error::invalid(format!("pipeline mode must be `on` or `off`, got `{s}`"))),
        }
    }
}

/// Artificial per-chunk latency added to each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageDelays {
    pub load: Duration,
    pub rand: Duration,
    pub train: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineOptions {
    pub mode: PipelineMode,
    pub delays: StageDelays,
    pub key_threads: usize,
    /// Longest the trainer waits for the next chunk.
    pub step_timeout: Duration,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { mode: PipelineMode::On, delays: StageDelays::default(), key_threads: 1, step_timeout: Duration::from_secs(60) }
    }
}

pub const STAGE_LOG_HEADER: &str = "chunk,load_ms,rand_ms,train_ms,step_ms";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTiming {
    pub chunk: usize,
    pub load_ms: f64,
    pub rand_ms: f64,
    pub train_ms: f64,
    /// Time between the end of the previous training step and this one.
    pub step_ms: f64,
}

pub fn write_stage_log<W: Write>(timings: &[StageTiming], mut w: W) -> Result<()> {
    writeln!(w, "{STAGE_LOG_HEADER}")?;
    for t in timings {
        writeln!(w, "{},{:.3},{:.3},{:.3},{:.3}", t.chunk, t.load_ms, t.rand_ms, t.train_ms, t.step_ms)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageEvent {
    Loaded(usize),
    Keyed(usize),
    TrainStart(usize),
    TrainEnd(usize),
}

#[derive(Debug, Clone, Default)]
pub struct PipelineSchedule {
    /// Chunks in training order.
    pub order: Vec<usize>,
    pub timings: Vec<StageTiming>,
    /// Stage events in the order they happened.
    pub events: Vec<StageEvent>,
}

/// A chunk in the swap buffer, ready to become the active one.
struct Loaded<T> {
    index: usize,
    columns: SparseColumnMatrix<T>,
    norms: Vec<T>,
    ms: f64,
}

struct Keys {
    index: usize,
    keys: Vec<u32>,
    ms: f64,
}

fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn pause(d: Duration) {
    if !d.is_zero() {
        thread::sleep(d);
    }
}

fn load_stage<T: Scalar>(store: &ChunkStore, fold: bool, index: usize, delay: Duration) -> Result<Loaded<T>> {
    let t0 = Instant::now();
    pause(delay);
    let columns = load_chunk::<T>(store, index, fold)?;
    let norms = columns.col_sq_norms();
    Ok(Loaded { index, columns, norms, ms: millis(t0.elapsed()) })
}

fn key_stage(store: &ChunkStore, seed: u64, index: usize, delay: Duration, threads: usize) -> Keys {
    let t0 = Instant::now();
    pause(delay);
    let keys = generate_keys(derive_seed(seed, &[index as u64]), store.chunks()[index].n_cols, threads);
    Keys { index, keys, ms: millis(t0.elapsed()) }
}

fn receive<X>(rx: &Receiver<X>, timeout: Duration, stage: &str) -> Result<X> {
    rx.recv_timeout(timeout).map_err(|e| match e {
        RecvTimeoutError::Timeout => Error::Worker(format!("{stage} stage did not deliver within {timeout:?}")),
        RecvTimeoutError::Disconnected => Error::Worker(format!("{stage} stage stopped unexpectedly")),
    })
}

/// One pass over every chunk of `store`. The result is identical with the
/// pipeline on or off.
#[allow(clippy::too_many_arguments)]
pub fn pipelined_epoch<T: Scalar>(
    store: &ChunkStore,
    fold: bool,
    problem: &LocalProblem<'_, T>,
    state: &mut SolverState<T>,
    damping: T,
    seed: u64,
    solver: &SolverOptions,
    options: &PipelineOptions,
) -> Result<PipelineSchedule> {
    let n = store.n_chunks();
    if n == 0 {
        return Err(Error::invalid("chunk store is empty"));
    }
    let events = Mutex::new(Vec::with_capacity(4 * n));
    let log = |e: StageEvent| events.lock().unwrap().push(e);
    let delays = options.delays;
    let epoch_start = Instant::now();
    let mut timings = Vec::with_capacity(n);
    let mut last_end = epoch_start;

    let mut train = |chunk: Loaded<T>, keys: Keys, state: &mut SolverState<T>| -> Result<()> {
        debug_assert_eq!(chunk.index, keys.index);
        log(StageEvent::TrainStart(chunk.index));
        let t0 = Instant::now();
        pause(delays.train);
        let order = permutation_from_keys(&keys.keys);
        let first = store.chunks()[chunk.index].first_col;
        scd_pass(problem, &chunk.columns, &chunk.norms, first, &order, state, damping, solver)?;
        let end = Instant::now();
        log(StageEvent::TrainEnd(chunk.index));
        timings.push(StageTiming {
            chunk: chunk.index,
            load_ms: chunk.ms,
            rand_ms: keys.ms,
            train_ms: millis(end - t0),
            step_ms: millis(end - last_end),
        });
        last_end = end;
        Ok(())
    };

    match options.mode {
        PipelineMode::Off => {
            for c in 0..n {
                let chunk = load_stage::<T>(store, fold, c, delays.load)?;
                log(StageEvent::Loaded(c));
                let keys = key_stage(store, seed, c, delays.rand, options.key_threads);
                log(StageEvent::Keyed(c));
                train(chunk, keys, state)?;
            }
        }
        PipelineMode::On => {
            let (load_tx, load_rx) = sync_channel::<Result<Loaded<T>>>(0);
            let (key_tx, key_rx) = sync_channel::<Keys>(0);
            thread::scope(|s| -> Result<()> {
                s.spawn(|| {
                    for c in 0..n {
                        let item = load_stage::<T>(store, fold, c, delays.load);
                        let failed = item.is_err();
                        if item.is_ok() {
                            log(StageEvent::Loaded(c));
                        }
                        if load_tx.send(item).is_err() || failed {
                            break;
                        }
                    }
                    drop(load_tx);
                });
                s.spawn(|| {
                    for c in 0..n {
                        let keys = key_stage(store, seed, c, delays.rand, options.key_threads);
                        log(StageEvent::Keyed(c));
                        if key_tx.send(keys).is_err() {
                            break;
                        }
                    }
                    drop(key_tx);
                });
                let trainer = s.spawn(|| -> Result<()> {
                    let result = (0..n).try_for_each(|_| {
                        let chunk = receive(&load_rx, options.step_timeout, "load")??;
                        let keys = receive(&key_rx, options.step_timeout, "key generation")?;
                        train(chunk, keys, state)
                    });
                    drop(load_rx);
                    drop(key_rx);
                    result
                });
                trainer.join().map_err(|_| Error::Worker("training stage panicked".into()))?
            })?;
        }
    }
    Ok(PipelineSchedule { order: (0..n).collect(), timings, events: events.into_inner().unwrap() })
}

/// Device data that lives in a chunk store and is streamed each epoch.
pub struct ChunkedColumns<T> {
    store: Arc<ChunkStore>,
    fold: bool,
    options: PipelineOptions,
    timings: Mutex<Vec<StageTiming>>,
    last_events: Mutex<Vec<StageEvent>>,
    _marker: std::marker::PhantomData<fn() -> T>,
}

impl<T: Scalar> ChunkedColumns<T> {
    /// `fold` multiplies every column by its (±1-mapped) label on load.
    pub fn new(store: Arc<ChunkStore>, fold: bool, options: PipelineOptions) -> Result<Self> {
        if store.n_chunks() == 0 {
            return Err(Error::invalid("chunk store is empty"));
        }
        if fold && !store.header().has_labels {
            return Err(Error::invalid("chunk store has no labels to fold"));
        }
        Ok(Self {
            store,
            fold,
            options,
            timings: Mutex::new(Vec::new()),
            last_events: Mutex::new(Vec::new()),
            _marker: std::marker::PhantomData,
        })
    }

    pub fn timings(&self) -> Vec<StageTiming> {
        self.timings.lock().unwrap().clone()
    }

    pub fn last_events(&self) -> Vec<StageEvent> {
        self.last_events.lock().unwrap().clone()
    }
}

impl<T: Scalar> EpochData<T> for ChunkedColumns<T> {
    fn n_coords(&self) -> usize {
        self.store.n_cols()
    }

    fn n_rows(&self) -> usize {
        self.store.n_rows()
    }

    fn run_epoch(
        &self,
        problem: &LocalProblem<'_, T>,
        state: &mut SolverState<T>,
        damping: T,
        seed: u64,
        options: &SolverOptions,
    ) -> Result<()> {
        let schedule = pipelined_epoch(&self.store, self.fold, problem, state, damping, seed, options, &self.options)?;
        self.timings.lock().unwrap().extend(schedule.timings);
        *self.last_events.lock().unwrap() = schedule.events;
        Ok(())
    }
}
