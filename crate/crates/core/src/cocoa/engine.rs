use std::ops::Range;
use std::sync::Arc;
use std::time::Instant;

use super::subproblem::inner_linear_term;
use super::{ConvergenceTrace, HierarchyConfig, PartitionKind, StopCriteria, StopReason, TraceRow};
use crate::comm::{InProcessReducer, Reducer};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::objective::Objective;
use crate::pipeline::{ChunkedColumns, PipelineOptions, StageTiming};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::solver::{damped_solve, measure_theta, DampingState, EpochData, LocalProblem, ResidentColumns, SubtaskResult};
use crate::sparse::{partition_columns, ChunkStore, PartitionStrategy, SparseColumnMatrix};

enum DeviceData<T: Scalar> {
    Resident(ResidentColumns<T>),
    Chunked(ChunkedColumns<T>),
}

impl<T: Scalar> DeviceData<T> {
    fn as_epoch_data(&self) -> &(dyn EpochData<T> + Sync) {
        match self {
            DeviceData::Resident(r) => r,
            DeviceData::Chunked(c) => c,
        }
    }

    fn resident(&self) -> Option<&SparseColumnMatrix<T>> {
        match self {
            DeviceData::Resident(r) => Some(r.columns()),
            DeviceData::Chunked(_) => None,
        }
    }
}

struct Device<T: Scalar> {
    worker: usize,
    coords: Range<usize>,
    data: DeviceData<T>,
    damping: DampingState<T>,
}

struct Node<T: Scalar> {
    coords: Range<usize>,
    devices: Vec<Device<T>>,
}

enum Source<T> {
    Resident(Arc<SparseColumnMatrix<T>>),
    Chunked { store: Arc<ChunkStore>, fold: bool },
}

/// Summary of one outer round.
#[derive(Debug, Clone, Default)]
pub struct RoundInfo {
    pub round: usize,
    /// Largest measured device θ (when measuring).
    pub theta: Option<f64>,
    /// Smallest damping factor any device ended with.
    pub min_damping: f64,
    pub attempts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundStats {
    pub objective: f64,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rounds: usize,
    pub reason: StopReason,
    pub trace: ConvergenceTrace,
}

/// A failed training run together with the trace recorded up to the failure.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub trace: ConvergenceTrace,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} trace rows)", self.error, self.trace.len())
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Hierarchical training engine. Nodes and devices run as thread groups;
/// with a network reducer only the nodes of the reducer's local ranks run
/// in this process.
pub struct Engine<T: Scalar> {
    objective: Objective<T>,
    config: HierarchyConfig,
    sigma: T,
    sigma_bar: T,
    source: Source<T>,
    n_rows: usize,
    alpha: Vec<T>,
    v: Vec<T>,
    nodes: Vec<Node<T>>,
    reducer: Box<dyn Reducer>,
    round: usize,
}

impl<T: Scalar> std::fmt::Debug for Engine<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("kind", &self.objective.kind())
            .field("nodes", &self.config.nodes)
            .field("devices", &self.config.devices)
            .field("round", &self.round)
            .finish()
    }
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

impl<T: Scalar> Engine<T> {
    /// In-process engine over resident data.
    pub fn new(matrix: Arc<SparseColumnMatrix<T>>, objective: Objective<T>, config: HierarchyConfig) -> Result<Self> {
        let reducer = Box::new(InProcessReducer::new(config.nodes)?);
        Self::with_reducer(matrix, objective, config, reducer)
    }

    /// Engine whose nodes are the reducer's local ranks.
    pub fn with_reducer(
        matrix: Arc<SparseColumnMatrix<T>>,
        objective: Objective<T>,
        config: HierarchyConfig,
        reducer: Box<dyn Reducer>,
    ) -> Result<Self> {
        config.validate()?;
        if objective.n_coords() != matrix.n_cols() {
            return Err(Error::Dimension { expected: matrix.n_cols(), got: objective.n_coords() });
        }
        if reducer.world_size() != config.nodes {
            return Err(Error::invalid(format!(
                "reducer spans {} ranks but {} nodes are configured",
                reducer.world_size(),
                config.nodes
            )));
        }
        let nnz = matrix.col_nnz();
        let strategy = match config.partition {
            PartitionKind::Contiguous => PartitionStrategy::Contiguous,
            PartitionKind::BalancedByNnz => PartitionStrategy::BalancedByNnz(&nnz),
        };
        let parts = partition_columns(matrix.n_cols(), config.nodes, config.devices, strategy)?;
        let local = reducer.local_ranks();
        let mut nodes = Vec::new();
        for k in local {
            let mine = &parts[k * config.devices..(k + 1) * config.devices];
            let devices = mine
                .iter()
                .map(|p| {
                    let coords = p.coords[0]..p.coords[p.coords.len() - 1] + 1;
                    Device {
                        worker: p.worker(config.devices),
                        data: DeviceData::Resident(ResidentColumns::new(matrix.column_range(coords.start, coords.end))),
                        coords,
                        damping: DampingState::default(),
                    }
                })
                .collect::<Vec<_>>();
            let coords = devices[0].coords.start..devices[devices.len() - 1].coords.end;
            nodes.push(Node { coords, devices });
        }
        let alpha = objective.initial_alpha(matrix.n_cols());
        let v = matrix.matvec(&alpha)?;
        Ok(Self {
            sigma: T::lit(config.sigma()),
            sigma_bar: T::lit(config.sigma_bar()),
            n_rows: matrix.n_rows(),
            source: Source::Resident(matrix),
            objective,
            config,
            alpha,
            v,
            nodes,
            reducer,
            round: 0,
        })
    }

    /// Single node, single device engine streaming columns from a chunk
    /// store. Only dual objectives (columns are examples) are supported.
    pub fn out_of_core(
        store: Arc<ChunkStore>,
        objective: Objective<T>,
        config: HierarchyConfig,
        pipeline: PipelineOptions,
    ) -> Result<Self> {
        config.validate()?;
        if config.nodes != 1 || config.devices != 1 {
            return Err(Error::Unsupported("out-of-core training runs with one node and one device".into()));
        }
        if !objective.kind().is_dual() {
            return Err(Error::Unsupported(format!("out-of-core training of the {} objective", objective.kind())));
        }
        if config.measure_theta {
            return Err(Error::Unsupported("θ measurement needs resident data".into()));
        }
        let n = store.n_cols();
        if objective.n_coords() != n {
            return Err(Error::Dimension { expected: n, got: objective.n_coords() });
        }
        let fold = store.header().has_labels;
        let data = ChunkedColumns::new(store.clone(), fold, pipeline)?;
        let alpha = objective.initial_alpha(n);
        let mut v = vec![T::zero(); store.n_rows()];
        for (c, desc) in store.chunks().iter().enumerate() {
            let chunk = load_chunk::<T>(&store, c, fold)?;
            let part = chunk.matvec(&alpha[desc.first_col..desc.first_col + desc.n_cols])?;
            for (vi, p) in v.iter_mut().zip(part) {
                *vi += p;
            }
        }
        let device = Device { worker: 0, coords: 0..n, data: DeviceData::Chunked(data), damping: DampingState::default() };
        Ok(Self {
            sigma: T::lit(config.sigma()),
            sigma_bar: T::lit(config.sigma_bar()),
            n_rows: store.n_rows(),
            source: Source::Chunked { store, fold },
            objective,
            config,
            alpha,
            v,
            nodes: vec![Node { coords: 0..n, devices: vec![device] }],
            reducer: Box::new(InProcessReducer::new(1)?),
            round: 0,
        })
    }

    pub fn objective(&self) -> &Objective<T> {
        &self.objective
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.config
    }

    /// Current model. In multi-process runs only this process's node
    /// slices are current; see [`Engine::model`].
    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn shared(&self) -> &[T] {
        &self.v
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Coordinate ranges of this process's nodes.
    pub fn node_ranges(&self) -> Vec<Range<usize>> {
        self.nodes.iter().map(|n| n.coords.clone()).collect()
    }

    /// Coordinate ranges of this process's devices, by node.
    pub fn device_ranges(&self) -> Vec<Vec<Range<usize>>> {
        self.nodes.iter().map(|n| n.devices.iter().map(|d| d.coords.clone()).collect()).collect()
    }

    fn all_local(&self) -> bool {
        self.reducer.local_ranks() == (0..self.config.nodes)
    }

    /// Pipeline stage timings of every epoch run so far (out-of-core only).
    pub fn stage_log(&self) -> Vec<StageTiming> {
        self.nodes
            .iter()
            .flat_map(|n| n.devices.iter())
            .filter_map(|d| match &d.data {
                DeviceData::Chunked(c) => Some(c.timings()),
                DeviceData::Resident(_) => None,
            })
            .flatten()
            .collect()
    }

    /// Runs `t2` inner rounds on every local node and reduces the node
    /// updates into the shared vector.
    pub fn outer_round(&mut self) -> Result<RoundInfo> {
        let grad = self.objective.grad_f(&self.v);
        let ctx = NodeContext {
            objective: &self.objective,
            grad: &grad,
            alpha: &self.alpha,
            sigma: self.sigma,
            sigma_bar: self.sigma_bar,
            config: &self.config,
            round: self.round,
            n_rows: self.n_rows,
        };
        let outcomes: Vec<Result<NodeOutcome<T>>> = if self.nodes.len() == 1 {
            vec![ctx.run(&mut self.nodes[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = self.nodes.iter_mut().map(|node| s.spawn(|| ctx.run(node))).collect();
                handles.into_iter().map(|h| h.join().unwrap_or_else(|p| Err(worker_panic(p)))).collect()
            })
        };
        let mut info = RoundInfo { round: self.round, theta: None, min_damping: 1.0, attempts: 0 };
        let mut contributions = Vec::with_capacity(outcomes.len());
        let mut updates = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            let outcome = outcome?;
            info.theta = match (info.theta, outcome.theta) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
            info.min_damping = info.min_damping.min(outcome.min_damping);
            info.attempts += outcome.attempts;
            contributions.push(to_f64(&outcome.vbar));
            updates.push(outcome.alpha);
        }
        let total = self
            .reducer
            .allreduce_sum(&contributions)
            .map_err(|e| Error::Comm(format!("shared-vector reduce in round {} failed: {e}", self.round)))?;
        if total.len() != self.v.len() {
            return Err(Error::Dimension { expected: self.v.len(), got: total.len() });
        }
        for (vi, t) in self.v.iter_mut().zip(&total) {
            *vi += T::lit(*t);
        }
        for (node, alpha) in self.nodes.iter().zip(updates) {
            self.alpha[node.coords.clone()].copy_from_slice(&alpha);
        }
        self.round += 1;
        Ok(info)
    }

    /// Objective and (where available) duality gap at the current point.
    pub fn stats(&mut self) -> Result<RoundStats> {
        let f_v = self.objective.f(&self.v);
        let w = self.objective.grad_f(&self.v);
        let with_gap = self.objective.kind() != crate::ObjectiveKind::LassoPrimal;
        let (g, gap_terms) = if self.all_local() {
            let everything = 0..self.alpha.len();
            self.partial_stats(std::slice::from_ref(&everything), &w, with_gap)?
        } else {
            let ranges = self.node_ranges();
            let (g, gap) = self.partial_stats(&ranges, &w, with_gap)?;
            let total = self.reducer.allreduce_sum(&[vec![g.as_f64(), gap.as_f64()]])?;
            (T::lit(total[0]), T::lit(total[1]))
        };
        let objective = (f_v + g).as_f64();
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!("objective after round {}", self.round)));
        }
        let gap = with_gap.then(|| (self.objective.gap_shared_term(&self.v) + gap_terms).as_f64());
        Ok(RoundStats { objective, gap })
    }

    fn partial_stats(&self, ranges: &[Range<usize>], w: &[T], with_gap: bool) -> Result<(T, T)> {
        let mut g = T::zero();
        let mut gap = T::zero();
        let mut visit = |matrix: &SparseColumnMatrix<T>, first: usize, range: Range<usize>| -> Result<()> {
            for i in range {
                let a = self.alpha[i];
                g += self.objective.g(a);
                if with_gap {
                    gap += self.objective.gap_coordinate_term(a, matrix.column_dot(i - first, w))?;
                }
            }
            Ok(())
        };
        match &self.source {
            Source::Resident(m) => {
                for r in ranges {
                    visit(m, 0, r.clone())?;
                }
            }
            Source::Chunked { store, fold } => {
                for (c, desc) in store.chunks().iter().enumerate() {
                    let chunk = load_chunk::<T>(store, c, *fold)?;
                    visit(&chunk, desc.first_col, desc.first_col..desc.first_col + desc.n_cols)?;
                }
            }
        }
        Ok((g, gap))
    }

    /// Runs outer rounds until a stopping rule fires or `t1` rounds are done.
    pub fn train(&mut self, stop: &StopCriteria) -> std::result::Result<TrainReport, TrainFailure> {
        let mut trace = ConvergenceTrace::default();
        if let Err(error) = stop.validate() {
            return Err(TrainFailure { error, trace });
        }
        let start = Instant::now();
        let mut theta = None;
        loop {
            let stats = match self.stats() {
                Ok(s) => s,
                Err(error) => return Err(TrainFailure { error, trace }),
            };
            let wall = start.elapsed();
            trace.push(TraceRow {
                round: self.round,
                wall_s: wall.as_secs_f64(),
                sim_cost: self.config.cost.simulated_time(self.round, self.config.inner_rounds),
                objective: stats.objective,
                gap: stats.gap,
                theta,
            });
            let reason = if matches!((stop.target_gap, stats.gap), (Some(t), Some(g)) if g <= t) {
                Some(StopReason::TargetGap)
            } else if matches!((stop.target_suboptimality, stop.optimum), (Some(t), Some(f)) if stats.objective - f <= t) {
                Some(StopReason::TargetSuboptimality)
            } else if stop.time_budget.is_some_and(|b| wall >= b) {
                Some(StopReason::TimeBudget)
            } else if self.round >= self.config.outer_rounds {
                Some(StopReason::MaxRounds)
            } else {
                None
            };
            if let Some(reason) = reason {
                return Ok(TrainReport { rounds: self.round, reason, trace });
            }
            match self.outer_round() {
                Ok(info) => theta = info.theta,
                Err(error) => return Err(TrainFailure { error, trace }),
            }
        }
    }

    /// Full model, gathering node slices from other processes if needed.
    pub fn model(&mut self) -> Result<Model> {
        let alpha = if self.all_local() {
            to_f64(&self.alpha)
        } else {
            let mut mine = vec![0.0; self.alpha.len()];
            for r in self.node_ranges() {
                for i in r {
                    mine[i] = self.alpha[i].as_f64();
                }
            }
            self.reducer.allreduce_sum(&[mine])?
        };
        let alpha_t: Vec<T> = alpha.iter().map(|&a| T::lit(a)).collect();
        let weights = to_f64(&self.objective.primal_weights(&self.v, &alpha_t));
        Ok(Model::new(self.objective.kind(), self.objective.lambda().as_f64(), alpha, weights))
    }
}

pub(crate) fn load_chunk<T: Scalar>(store: &ChunkStore, index: usize, fold: bool) -> Result<SparseColumnMatrix<T>> {
    let chunk = store.read_chunk::<T>(index)?;
    if fold {
        let labels = crate::objective::binary_labels(chunk.labels().expect("store has labels"))?;
        chunk.with_labels(labels)?.fold_labels()
    } else {
        Ok(chunk)
    }
}

fn worker_panic(p: Box<dyn std::any::Any + Send>) -> Error {
    let msg = p
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "worker panicked".into());
    Error::Worker(msg)
}

struct NodeOutcome<T> {
    vbar: Vec<T>,
    alpha: Vec<T>,
    theta: Option<f64>,
    min_damping: f64,
    attempts: usize,
}

struct NodeContext<'a, T: Scalar> {
    objective: &'a Objective<T>,
    grad: &'a [T],
    alpha: &'a [T],
    sigma: T,
    sigma_bar: T,
    config: &'a HierarchyConfig,
    round: usize,
    n_rows: usize,
}

impl<T: Scalar> NodeContext<'_, T> {
    fn run(&self, node: &mut Node<T>) -> Result<NodeOutcome<T>> {
        let mut current: Vec<Vec<T>> = node.devices.iter().map(|d| self.alpha[d.coords.clone()].to_vec()).collect();
        let mut vbar = vec![T::zero(); self.n_rows];
        let beta_bar = self.sigma * self.objective.beta();
        let curvature = self.sigma_bar * self.sigma * self.objective.beta();
        let mut out = NodeOutcome { vbar: Vec::new(), alpha: Vec::new(), theta: None, min_damping: 1.0, attempts: 0 };
        for d in &mut node.devices {
            d.damping = DampingState::default();
        }
        for j in 0..self.config.inner_rounds {
            let linear = inner_linear_term(self.grad, &vbar, beta_bar);
            let solve = |device: &mut Device<T>, base: &[T]| -> Result<(SubtaskResult<T>, Option<f64>)> {
                let problem = LocalProblem { objective: self.objective, linear: &linear, curvature, base };
                let seed = derive_seed(self.config.seed, &[device.worker as u64, self.round as u64, j as u64]);
                let result = damped_solve(
                    device.data.as_epoch_data(),
                    &problem,
                    &mut device.damping,
                    self.config.local_epochs,
                    seed,
                    &self.config.solver,
                )?;
                let theta = match (self.config.measure_theta, device.data.resident()) {
                    (true, Some(cols)) => Some(
                        measure_theta(cols, &problem, &result.delta_alpha, T::lit(self.config.theta_tolerance))?.as_f64(),
                    ),
                    _ => None,
                };
                Ok((result, theta))
            };
            let results: Vec<Result<(SubtaskResult<T>, Option<f64>)>> = if node.devices.len() == 1 {
                vec![solve(&mut node.devices[0], &current[0])]
            } else {
                std::thread::scope(|s| {
                    let handles: Vec<_> = node
                        .devices
                        .iter_mut()
                        .zip(&current)
                        .map(|(dev, base)| s.spawn(|| solve(dev, base)))
                        .collect();
                    handles.into_iter().map(|h| h.join().unwrap_or_else(|p| Err(worker_panic(p)))).collect()
                })
            };
            for (ell, r) in results.into_iter().enumerate() {
                let (r, theta) = r.map_err(|e| match e {
                    Error::Worker(m) => Error::Worker(format!("device {ell}: {m}")),
                    other => other,
                })?;
                for (x, d) in current[ell].iter_mut().zip(&r.delta_alpha) {
                    *x += *d;
                }
                for (x, d) in vbar.iter_mut().zip(&r.delta_v) {
                    *x += *d;
                }
                out.min_damping = out.min_damping.min(r.damping.as_f64());
                out.attempts += r.attempts;
                out.theta = match (out.theta, theta) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                };
            }
        }
        out.vbar = vbar;
        out.alpha = current.concat();
        Ok(out)
    }
}
