use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};

use hcocoa::analysis::{optimize_schedule, time_to_target, BoundKind, CostModel, RateParams, MAX_ROUNDS};
use hcocoa::cocoa::{Engine, HierarchyConfig, PartitionKind, StopCriteria, TrainReport};
use hcocoa::comm::{InProcessReducer, Reducer, TcpConfig, TcpReducer, Topology};
use hcocoa::model::{accuracy, logloss, mean_squared_error, sigmoid, Model};
use hcocoa::objective::{prepare_problem, Objective};
use hcocoa::pipeline::{write_stage_log, PipelineMode, PipelineOptions, StageDelays};
use hcocoa::rng::{derive_seed, mix64};
use hcocoa::solver::SolverOptions;
use hcocoa::sparse::{parse_svmlight, spectral_bound, write_chunks, ChunkStore, SparseColumnMatrix, CHUNK_MAGIC};
use hcocoa::ObjectiveKind;

use crate::args::{AllreduceCheckArgs, AnalyzeArgs, ChunkArgs, CommArg, EvalArgs, OnOff, PartitionArg, PredictArgs, TrainArgs};
use crate::UsageError;

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(UsageError(format!("{what} not found: {}", path.display())).into());
    }
    Ok(())
}

fn is_chunk_store(path: &Path) -> Result<bool> {
    let mut magic = [0u8; 8];
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(f.read(&mut magic)? == 8 && &magic == CHUNK_MAGIC)
}

fn read_svmlight(path: &Path, min_features: Option<usize>) -> Result<(SparseColumnMatrix<f64>, Vec<f64>)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_svmlight(BufReader::new(file), min_features).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn tcp_reducer(comm: CommArg, rank: usize, peers: &[String], dim: usize, timeout: f64) -> Result<Box<dyn Reducer>> {
    let topology = match comm {
        CommArg::TcpStar => Topology::Star,
        CommArg::TcpRing => Topology::Ring,
        CommArg::Inproc => unreachable!("in-process reducers are built elsewhere"),
    };
    if peers.is_empty() {
        return Err(UsageError("--peers is required with a TCP reducer".into()).into());
    }
    let config = TcpConfig::new(rank, peers.to_vec(), topology, dim).with_timeout(Duration::from_secs_f64(timeout));
    Ok(Box::new(TcpReducer::connect(config)?))
}

fn hierarchy(a: &TrainArgs) -> HierarchyConfig {
    HierarchyConfig {
        nodes: a.nodes,
        devices: a.devices,
        outer_rounds: a.max_rounds.unwrap_or(a.t1),
        inner_rounds: a.t2,
        sigma: a.sigma,
        sigma_bar: a.sigma_bar,
        local_epochs: a.epochs,
        seed: a.seed,
        solver: SolverOptions { threads: a.threads_per_device, stale_reads: a.stale_reads },
        partition: match a.partition {
            PartitionArg::Contiguous => PartitionKind::Contiguous,
            PartitionArg::Balanced => PartitionKind::BalancedByNnz,
        },
        measure_theta: a.measure_theta,
        cost: CostModel::new(a.cost.c1, a.cost.c2, a.cost.ccomp, 0.0).unwrap_or_default(),
        ..HierarchyConfig::default()
    }
}

/// Classification quality of `model` on labeled examples.
struct Quality {
    logloss: f64,
    accuracy: f64,
}

fn quality(model: &Model, x: &SparseColumnMatrix<f64>, labels: &[f64]) -> Result<Quality> {
    let p = model.probabilities(x)?;
    Ok(Quality { logloss: logloss(labels, &p)?, accuracy: accuracy(labels, &p)? })
}

fn chunked_quality(model: &Model, store: &ChunkStore) -> Result<Quality> {
    let (mut ll, mut acc, mut n) = (0.0, 0.0, 0usize);
    for c in 0..store.n_chunks() {
        let chunk = store.read_chunk::<f64>(c)?;
        let labels = chunk.labels().context("chunk store has no labels")?.to_vec();
        let q = quality(model, &chunk.without_labels(), &labels)?;
        ll += q.logloss * labels.len() as f64;
        acc += q.accuracy * labels.len() as f64;
        n += labels.len();
    }
    Ok(Quality { logloss: ll / n as f64, accuracy: acc / n as f64 })
}

pub fn train(a: TrainArgs) -> Result<()> {
    require_file(&a.data, "data file")?;
    let kind: ObjectiveKind = a.objective.into();
    let config = hierarchy(&a);
    let stop = StopCriteria {
        target_suboptimality: a.target_subopt,
        optimum: a.optimum,
        target_gap: a.target_gap,
        time_budget: a.time_budget.map(Duration::from_secs_f64),
    };
    if a.target_subopt.is_some() && a.optimum.is_none() {
        return Err(UsageError("--target-subopt needs --optimum".into()).into());
    }
    let writes_outputs = a.comm == CommArg::Inproc || a.rank == 0;

    let mut store = None;
    let mut labeled = None;
    let mut engine = if is_chunk_store(&a.data)? {
        if a.comm != CommArg::Inproc {
            return Err(UsageError("out-of-core training runs in a single process".into()).into());
        }
        let s = Arc::new(ChunkStore::open(&a.data)?);
        let objective = Objective::new(kind, a.lambda, s.n_cols(), Vec::new())?;
        let pipeline = PipelineOptions {
            mode: match a.pipeline {
                OnOff::On => PipelineMode::On,
                OnOff::Off => PipelineMode::Off,
            },
            delays: StageDelays {
                load: Duration::from_millis(a.inject_load_delay_ms),
                rand: Duration::from_millis(a.inject_rand_delay_ms),
                train: Duration::from_millis(a.inject_train_delay_ms),
            },
            key_threads: a.threads_per_device,
            ..PipelineOptions::default()
        };
        store = Some(s.clone());
        Engine::out_of_core(s, objective, config, pipeline)?
    } else {
        let (x, y) = read_svmlight(&a.data, None)?;
        let (objective, matrix) = prepare_problem(kind, a.lambda, &x, &y)?;
        let matrix = Arc::new(matrix);
        labeled = Some((x, y));
        match a.comm {
            CommArg::Inproc => Engine::new(matrix, objective, config)?,
            comm => {
                let reducer = tcp_reducer(comm, a.rank, &a.peers, matrix.n_rows(), a.comm_timeout)?;
                Engine::with_reducer(matrix, objective, config, reducer)?
            }
        }
    };

    let outcome = engine.train(&stop);
    let trace = match &outcome {
        Ok(r) => &r.trace,
        Err(f) => &f.trace,
    };
    if writes_outputs {
        if let Some(path) = &a.trace {
            trace.write_csv(create(path)?)?;
        }
        if let Some(path) = &a.stage_log {
            write_stage_log(&engine.stage_log(), create(path)?)?;
        }
    }
    let TrainReport { rounds, reason, trace } = outcome.map_err(|f| f.error)?;
    let model = engine.model()?;
    if writes_outputs {
        if let Some(path) = &a.model {
            model.save(path).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let last = trace.last().expect("trace has a starting row");
    let mut summary = format!("rounds={rounds} stop={reason:?} objective={:.12e}", last.objective);
    if let Some(g) = last.gap {
        summary.push_str(&format!(" gap={g:.6e}"));
    }
    if kind.is_dual() {
        let q = match (&labeled, &store) {
            (Some((x, y)), _) => quality(&model, x, y)?,
            (None, Some(s)) => chunked_quality(&model, s)?,
            _ => unreachable!("data is either resident or chunked"),
        };
        summary.push_str(&format!(" logloss={:.6} accuracy={:.4}", q.logloss, q.accuracy));
    }
    if writes_outputs {
        println!("{summary}");
    }
    Ok(())
}

fn model_and_data(model: &Path, data: &Path) -> Result<(Model, SparseColumnMatrix<f64>, Vec<f64>)> {
    require_file(model, "model file")?;
    require_file(data, "data file")?;
    let model = Model::load(model).with_context(|| format!("reading {}", model.display()))?;
    let features = if model.kind.is_dual() { model.weights.len() } else { model.alpha.len() };
    let (x, y) = read_svmlight(data, Some(features))?;
    if x.n_rows() > features {
        return Err(hcocoa::Error::Dimension { expected: features, got: x.n_rows() })
            .context("test data has more features than the model");
    }
    Ok((model, x, y))
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let (model, x, _) = model_and_data(&a.model, &a.data)?;
    let scores = model.scores(&x)?;
    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "score,probability")?;
    for s in scores {
        writeln!(out, "{s:e},{:e}", sigmoid(s))?;
    }
    out.flush()?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (model, x, y) = model_and_data(&a.model, &a.data)?;
    if x.n_cols() == 0 {
        return Err(UsageError(format!("no examples in {}", a.data.display())).into());
    }
    if model.kind.is_dual() {
        let q = quality(&model, &x, &y)?;
        println!("examples={} logloss={:.6} accuracy={:.4}", y.len(), q.logloss, q.accuracy);
    } else {
        let mse = mean_squared_error(&y, &model.scores(&x)?)?;
        println!("examples={} mse={mse:.6e}", y.len());
    }
    Ok(())
}

pub fn chunk(a: ChunkArgs) -> Result<()> {
    require_file(&a.data, "data file")?;
    if a.chunk_size == 0 {
        return Err(UsageError("--chunk-size must be positive".into()).into());
    }
    let (x, y) = read_svmlight(&a.data, None)?;
    let store = write_chunks(&x.with_labels(y)?, a.chunk_size, &a.output)?;
    println!(
        "wrote {} chunks ({} examples, {} features) to {}",
        store.n_chunks(),
        store.n_cols(),
        store.n_rows(),
        a.output.display()
    );
    Ok(())
}

fn rate_params(a: &AnalyzeArgs) -> Result<RateParams<f64>> {
    let derived = match &a.data {
        Some(path) => {
            require_file(path, "data file")?;
            let (x, y) = read_svmlight(path, None)?;
            let (objective, matrix) = prepare_problem(a.objective.into(), a.lambda, &x, &y)?;
            Some((objective.beta(), objective.mu(), objective.radius(), spectral_bound(&matrix, 1e-6)))
        }
        None => None,
    };
    let required = |explicit: Option<f64>, derived: Option<f64>, name: &str| -> Result<f64> {
        explicit.or(derived).ok_or_else(|| UsageError(format!("--{name} is required without --data")).into())
    };
    let mut p = RateParams::new(
        a.radius.or(derived.map(|d| d.2)).unwrap_or(f64::INFINITY),
        required(a.beta, derived.map(|d| d.0), "beta")?,
        a.mu.or(derived.map(|d| d.1)).unwrap_or(0.0),
        required(a.ca, derived.map(|d| d.3), "ca")?,
        a.theta_bar,
        a.nodes,
        a.devices,
    )?;
    if let Some(s) = a.sigma {
        p.sigma = s;
    }
    if let Some(s) = a.sigma_bar {
        p.sigma_bar = s;
    }
    p.validate()?;
    Ok(p)
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let params = rate_params(&a)?;
    let cost = CostModel::new(a.cost.c1, a.cost.c2, a.cost.ccomp, a.budget)?;
    let kind = BoundKind::for_params(&params, a.eps0);
    if kind == BoundKind::General && !params.radius.is_finite() {
        return Err(UsageError("μ = 0 needs a finite --radius for the general bound".into()).into());
    }
    let best = optimize_schedule(&params, &cost, kind)?;

    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "t1,t2,bound,sim_time")?;
    let mut t2 = 1;
    while t2 <= MAX_ROUNDS {
        let t1 = cost.max_outer_rounds(t2);
        if t1 == 0 {
            break;
        }
        writeln!(out, "{t1},{t2},{:e},{}", kind.evaluate(&params, t1, t2), cost.simulated_time(t1, t2))?;
        t2 *= 2;
    }
    out.flush()?;
    drop(out);
    eprintln!("best: t1={} t2={} bound={:e} sim_time={}", best.t1, best.t2, best.bound, best.cost);

    if let Some(path) = &a.trace {
        require_file(path, "trace file")?;
        let (Some(optimum), Some(target)) = (a.optimum, a.target) else {
            return Err(UsageError("--trace needs --optimum and --target".into()).into());
        };
        let trace = hcocoa::ConvergenceTrace::read_csv(BufReader::new(File::open(path)?))?;
        match time_to_target(&trace.objectives(), optimum, target, &cost, a.trace_t2) {
            Some((round, time)) => eprintln!("time_to_target: round={round} sim_time={time}"),
            None => eprintln!("time_to_target: unreached within {} rounds", trace.len().saturating_sub(1)),
        }
    }
    Ok(())
}

/// Deterministic test vector of rank `rank`, draw `index`.
fn check_vector(seed: u64, rank: usize, index: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let bits = mix64(derive_seed(seed, &[rank as u64, index as u64, j as u64]));
            let unit = (bits >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
            unit * 10f64.powi((bits % 13) as i32 - 6)
        })
        .collect()
}

pub fn allreduce_check(a: AllreduceCheckArgs) -> Result<()> {
    let mut out = create(&a.output)?;
    let mut reducer: Box<dyn Reducer> = match a.comm {
        CommArg::Inproc => Box::new(InProcessReducer::new(a.world)?),
        comm => tcp_reducer(comm, a.rank, &a.peers, a.dim, 30.0)?,
    };
    let ranks = reducer.local_ranks();
    for i in 0..a.vectors {
        let contributions: Vec<Vec<f64>> = ranks.clone().map(|r| check_vector(a.seed, r, i, a.dim)).collect();
        let total = reducer.allreduce_sum(&contributions)?;
        for x in total {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

