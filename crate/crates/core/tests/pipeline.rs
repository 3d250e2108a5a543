use std::sync::Arc;
use std::time::Duration;

use hcocoa::cocoa::{Engine, HierarchyConfig, StopCriteria};
use hcocoa::objective::{prepare_problem, Objective};
use hcocoa::pipeline::{pipelined_epoch, PipelineMode, PipelineOptions, StageDelays, StageEvent};
use hcocoa::solver::{LocalProblem, SolverOptions, SolverState};
use hcocoa::sparse::{write_chunks, ChunkStore, SparseColumnMatrix};
use hcocoa::synth::{classification, SynthSpec};
use hcocoa::ObjectiveKind;

struct Fixture {
    _dir: tempfile::TempDir,
    store: ChunkStore,
    objective: Objective<f64>,
    folded: SparseColumnMatrix<f64>,
}

fn fixture(n: usize, chunk_size: usize) -> Fixture {
    let (x, y) = classification(&SynthSpec::new(n, 15, 0.4, 21)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.chunks");
    let store = write_chunks(&x.clone().with_labels(y.clone()).unwrap(), chunk_size, &path).unwrap();
    let (objective, folded) = prepare_problem(ObjectiveKind::DualLogistic, 0.1, &x, &y).unwrap();
    Fixture { _dir: dir, store, objective, folded }
}

fn epoch(f: &Fixture, mode: PipelineMode, solver: &SolverOptions, delays: StageDelays) -> (Vec<f64>, Vec<f64>, hcocoa::pipeline::PipelineSchedule) {
    let n = f.store.n_cols();
    let base = f.objective.initial_alpha(n);
    let v = f.folded.matvec(&base).unwrap();
    let grad = f.objective.grad_f(&v);
    let problem = LocalProblem { objective: &f.objective, linear: &grad, curvature: f.objective.beta(), base: &base };
    let mut state = SolverState::new(n, f.store.n_rows());
    let options = PipelineOptions { mode, delays, ..Default::default() };
    let schedule = pipelined_epoch(&f.store, true, &problem, &mut state, 1.0, 77, solver, &options).unwrap();
    let u = state.shared_snapshot();
    (state.delta, u, schedule)
}

#[test]
fn pipelined_equals_sequential_bitwise() {
    for chunks in [1usize, 2, 3, 8] {
        let n = 96;
        let f = fixture(n, n.div_ceil(chunks));
        assert_eq!(f.store.n_chunks(), chunks);
        let solver = SolverOptions::default();
        let (d1, u1, s1) = epoch(&f, PipelineMode::On, &solver, StageDelays::default());
        let (d2, u2, s2) = epoch(&f, PipelineMode::Off, &solver, StageDelays::default());
        assert!(d1.iter().zip(&d2).all(|(a, b)| a.to_bits() == b.to_bits()), "{chunks} chunks");
        assert!(u1.iter().zip(&u2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(s1.order, (0..chunks).collect::<Vec<_>>());
        assert_eq!(s1.timings.len(), chunks);
        assert_eq!(s2.timings.len(), chunks);
        assert!(d1.iter().any(|&x| x != 0.0));
    }
}

#[test]
fn pipelined_matches_sequential_with_threads() {
    let f = fixture(200, 40);
    let solver = SolverOptions { threads: 4, stale_reads: true };
    let (d1, u1, _) = epoch(&f, PipelineMode::On, &solver, StageDelays::default());
    let (d2, u2, _) = epoch(&f, PipelineMode::Off, &solver, StageDelays::default());
    for (a, b) in d1.iter().zip(&d2).chain(u1.iter().zip(&u2)) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn training_waits_for_load_and_keys() {
    let f = fixture(64, 8);
    let delays = StageDelays { load: Duration::from_millis(2), rand: Duration::from_millis(1), train: Duration::ZERO };
    let (_, _, s) = epoch(&f, PipelineMode::On, &SolverOptions::default(), delays);
    let pos = |e: StageEvent| s.events.iter().position(|&x| x == e).unwrap();
    for c in 0..8 {
        let start = pos(StageEvent::TrainStart(c));
        assert!(pos(StageEvent::Loaded(c)) < start);
        assert!(pos(StageEvent::Keyed(c)) < start);
        if c > 0 {
            assert!(pos(StageEvent::TrainEnd(c - 1)) < start);
        }
        // Depth one: chunk c+2 cannot finish loading before chunk c starts training.
        if c + 2 < 8 {
            assert!(pos(StageEvent::Loaded(c + 2)) > start);
        }
    }
}

#[test]
fn stages_overlap() {
    let f = fixture(80, 8);
    let u = 10u64;
    let delays = StageDelays {
        load: Duration::from_millis(3 * u),
        rand: Duration::from_millis(u),
        train: Duration::from_millis(2 * u),
    };
    let (_, _, s) = epoch(&f, PipelineMode::On, &SolverOptions::default(), delays);
    let steady: Vec<f64> = s.timings.iter().skip(2).map(|t| t.step_ms).collect();
    let mean = steady.iter().sum::<f64>() / steady.len() as f64;
    assert!(mean < 3.5 * u as f64, "steady-state step {mean} ms");
}

#[test]
fn out_of_core_training_matches_in_memory() {
    let f = fixture(150, 32);
    let mut cfg = HierarchyConfig::new(1, 1);
    cfg.outer_rounds = 400;
    let stop = StopCriteria { target_gap: Some(1e-11), ..Default::default() };
    let store = Arc::new(ChunkStore::open(f.store.path()).unwrap());
    let mut ooc = Engine::out_of_core(store, f.objective.clone(), cfg.clone(), PipelineOptions::default()).unwrap();
    let r1 = ooc.train(&stop).unwrap();
    let mut mem = Engine::new(Arc::new(f.folded.clone()), f.objective.clone(), cfg).unwrap();
    let r2 = mem.train(&stop).unwrap();
    let a = r1.trace.last().unwrap().objective;
    let b = r2.trace.last().unwrap().objective;
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    assert_eq!(ooc.stage_log().len(), r1.rounds * f.store.n_chunks());
}

#[test]
fn primal_kinds_are_rejected_out_of_core() {
    let f = fixture(20, 8);
    let store = Arc::new(ChunkStore::open(f.store.path()).unwrap());
    let ridge = Objective::ridge(0.1, 20, vec![0.0; 15]).unwrap();
    assert!(Engine::out_of_core(store.clone(), ridge, HierarchyConfig::new(1, 1), PipelineOptions::default()).is_err());
    assert!(Engine::out_of_core(store, f.objective.clone(), HierarchyConfig::new(2, 1), PipelineOptions::default()).is_err());
}
