//! Per-device local solver: asynchronous stochastic coordinate descent on
//! the quadratic subproblem
//!
//! ```text
//! G(Δ) = wᵀ(BΔ) + (s/2)‖BΔ‖² + Σᵢ gᵢ(xᵢ + Δᵢ)
//! ```
//!
//! where `w` is the linear term handed down by the hierarchy, `s` the
//! curvature (`σ̄·σ·β`) and `x` the current coordinate values. Worker
//! threads pull coordinates from a shared queue, read the local shared
//! vector `u = BΔ` without locking and push their column updates into it
//! with atomic additions. After every epoch the subproblem value is checked;
//! an epoch that increased it is discarded and the step damping halved.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::objective::{Objective, ObjectiveKind};
use crate::rng::{derive_seed, generate_keys, permutation_from_keys};
use crate::scalar::{dot, norm_sq, AtomicScalar, Scalar};
use crate::sparse::SparseColumnMatrix;

/// Smallest damping factor tried before an epoch is declared divergent.
pub const DAMPING_FLOOR: f64 = 1.0 / (1u64 << 20) as f64;

const QUEUE_BATCH: usize = 8;

/// Sweeps without any progress after which [`exact_local_solve`] stops.
const STALL_SWEEPS: usize = 25;

/// Definition of one device subproblem (everything except the data).
#[derive(Debug, Clone, Copy)]
pub struct LocalProblem<'a, T> {
    pub objective: &'a Objective<T>,
    /// Linear term `w` (length `d`).
    pub linear: &'a [T],
    /// Curvature `s`; the quadratic term is `(s/2)‖BΔ‖²`.
    pub curvature: T,
    /// Coordinate values `x` at the start of the solve.
    pub base: &'a [T],
}

impl<T: Scalar> LocalProblem<'_, T> {
    /// `G(Δ)` without the constant offset, given `u = BΔ`.
    pub fn value(&self, delta: &[T], u: &[T]) -> T {
        self.value_with_scale(delta, u).0
    }

    /// Value together with the sum of the magnitudes of its terms, which
    /// sets the rounding noise floor for comparisons.
    fn value_with_scale(&self, delta: &[T], u: &[T]) -> (T, T) {
        let lin = dot(self.linear, u);
        let quad = self.curvature * norm_sq(u) / T::lit(2.0);
        let mut g = T::zero();
        let mut scale = lin.abs() + quad;
        for (&x, &d) in self.base.iter().zip(delta) {
            let gi = self.objective.g(x + d);
            g += gi;
            scale += gi.abs();
        }
        (lin + quad + g, scale)
    }

    /// Value of `Δ` with `u` recomputed from the columns.
    pub fn evaluate(&self, columns: &SparseColumnMatrix<T>, delta: &[T]) -> Result<T> {
        let u = columns.matvec(delta)?;
        Ok(self.value(delta, &u))
    }

    /// Duality gap of the subproblem at `Δ` (requires conjugates).
    pub fn gap(&self, columns: &SparseColumnMatrix<T>, delta: &[T], u: &[T]) -> Result<T> {
        Ok(self.gap_with_scale(columns, delta, u)?.0)
    }

    /// Gap together with the sum of the magnitudes of its terms.
    fn gap_with_scale(&self, columns: &SparseColumnMatrix<T>, delta: &[T], u: &[T]) -> Result<(T, T)> {
        let z: Vec<T> = self.linear.iter().zip(u).map(|(&w, &ui)| w + self.curvature * ui).collect();
        let mut gap = T::zero();
        let mut scale = T::zero();
        for (j, (&x, &d)) in self.base.iter().zip(delta).enumerate() {
            let (a, m) = (x + d, columns.column_dot(j, &z));
            let (g, conj, lin) = (self.objective.g(a), self.objective.g_conj(-m)?, a * m);
            gap += g + conj + lin;
            scale += g.abs() + conj.abs() + lin.abs();
        }
        Ok((gap, scale))
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub threads: usize,
    /// Every coordinate in a pass reads the shared vector as it was when
    /// the pass started: the most stale view asynchronous workers can see.
    pub stale_reads: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { threads: 1, stale_reads: false }
    }
}

/// Step damping of one device. Only ever halves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingState<T> {
    pub delta: T,
    pub last_value: Option<T>,
}

impl<T: Scalar> Default for DampingState<T> {
    fn default() -> Self {
        Self { delta: T::one(), last_value: None }
    }
}

impl<T: Scalar> DampingState<T> {
    pub fn halve(&mut self) {
        self.delta /= T::lit(2.0);
    }
}

/// Mutable state of a running solve: accumulated update and `u = BΔ`.
pub struct SolverState<T: Scalar> {
    pub delta: Vec<T>,
    shared: Vec<T::Atomic>,
}

impl<T: Scalar> SolverState<T> {
    pub fn new(n_coords: usize, d: usize) -> Self {
        Self { delta: vec![T::zero(); n_coords], shared: (0..d).map(|_| T::Atomic::new(T::zero())).collect() }
    }

    pub fn shared_snapshot(&self) -> Vec<T> {
        self.shared.iter().map(AtomicScalar::load).collect()
    }

    fn restore(&mut self, delta: &[T], shared: &[T]) {
        self.delta.copy_from_slice(delta);
        for (cell, &v) in self.shared.iter().zip(shared) {
            cell.store(v);
        }
    }
}

enum View<'a, T: Scalar> {
    Live(&'a [T::Atomic]),
    Snapshot(&'a [T]),
}

impl<T: Scalar> View<'_, T> {
    #[inline]
    fn get(&self, r: usize) -> T {
        match self {
            View::Live(cells) => cells[r].load(),
            View::Snapshot(vals) => vals[r],
        }
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn coordinate_step<T: Scalar>(
    problem: &LocalProblem<'_, T>,
    columns: &SparseColumnMatrix<T>,
    norms: &[T],
    j: usize,
    x: T,
    view: &View<'_, T>,
    shared: &[T::Atomic],
    damping: T,
) -> Result<T> {
    let (rows, vals) = columns.column(j);
    let mut c = T::zero();
    for (&r, &a) in rows.iter().zip(vals) {
        let r = r as usize;
        c += a * (problem.linear[r] + problem.curvature * view.get(r));
    }
    let step = damping * problem.objective.coordinate_update(x, c, problem.curvature * norms[j])?;
    if step != T::zero() {
        for (&r, &a) in rows.iter().zip(vals) {
            shared[r as usize].fetch_add(step * a);
        }
    }
    Ok(step)
}

/// One pass over `order` (indices into `columns`, whose coordinates start
/// at `offset` in the device's numbering).
#[allow(clippy::too_many_arguments)]
pub fn scd_pass<T: Scalar>(
    problem: &LocalProblem<'_, T>,
    columns: &SparseColumnMatrix<T>,
    norms: &[T],
    offset: usize,
    order: &[usize],
    state: &mut SolverState<T>,
    damping: T,
    options: &SolverOptions,
) -> Result<()> {
    let snapshot = options.stale_reads.then(|| state.shared_snapshot());
    let view = match &snapshot {
        Some(s) => View::Snapshot(s),
        None => View::Live(&state.shared),
    };
    let threads = options.threads.max(1).min(order.len().max(1));
    if threads == 1 {
        for &j in order {
            let i = offset + j;
            let x = problem.base[i] + state.delta[i];
            let step = coordinate_step(problem, columns, norms, j, x, &view, &state.shared, damping)?;
            state.delta[i] += step;
        }
    } else {
        let cursor = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let delta = &state.delta;
        let shared = &state.shared;
        let results: Vec<std::thread::Result<Vec<(usize, T)>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|_| {
                    s.spawn(|| {
                        let mut updates = Vec::new();
                        'work: while !abort.load(Ordering::Relaxed) {
                            let start = cursor.fetch_add(QUEUE_BATCH, Ordering::Relaxed);
                            if start >= order.len() {
                                break;
                            }
                            for &j in &order[start..(start + QUEUE_BATCH).min(order.len())] {
                                let i = offset + j;
                                let x = problem.base[i] + delta[i];
                                match coordinate_step(problem, columns, norms, j, x, &view, shared, damping) {
                                    Ok(step) => updates.push((i, step)),
                                    Err(e) => {
                                        abort.store(true, Ordering::Relaxed);
                                        failure.lock().unwrap().get_or_insert(e);
                                        break 'work;
                                    }
                                }
                            }
                        }
                        updates
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join()).collect()
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        for result in results {
            let updates = result.map_err(|p| Error::Worker(panic_message(&p)))?;
            for (i, step) in updates {
                state.delta[i] += step;
            }
        }
    }
    if state.shared.iter().any(|c| !c.load().is_finite()) {
        return Err(Error::NonFinite("shared vector entry after solver pass".into()));
    }
    Ok(())
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "solver thread panicked".into()
    }
}

/// Source of columns for solver epochs.
pub trait EpochData<T: Scalar> {
    fn n_coords(&self) -> usize;
    fn n_rows(&self) -> usize;
    /// Runs one pass over every coordinate in a fresh order derived from
    /// `seed`.
    fn run_epoch(
        &self,
        problem: &LocalProblem<'_, T>,
        state: &mut SolverState<T>,
        damping: T,
        seed: u64,
        options: &SolverOptions,
    ) -> Result<()>;
}

/// Device data held entirely in memory.
#[derive(Debug, Clone)]
pub struct ResidentColumns<T> {
    columns: SparseColumnMatrix<T>,
    norms: Vec<T>,
}

impl<T: Scalar> ResidentColumns<T> {
    pub fn new(columns: SparseColumnMatrix<T>) -> Self {
        let norms = columns.col_sq_norms();
        Self { columns, norms }
    }

    pub fn columns(&self) -> &SparseColumnMatrix<T> {
        &self.columns
    }

    pub fn norms(&self) -> &[T] {
        &self.norms
    }
}

impl<T: Scalar> EpochData<T> for ResidentColumns<T> {
    fn n_coords(&self) -> usize {
        self.columns.n_cols()
    }

    fn n_rows(&self) -> usize {
        self.columns.n_rows()
    }

    fn run_epoch(
        &self,
        problem: &LocalProblem<'_, T>,
        state: &mut SolverState<T>,
        damping: T,
        seed: u64,
        options: &SolverOptions,
    ) -> Result<()> {
        let keys = generate_keys(seed, self.columns.n_cols(), options.threads);
        let order = permutation_from_keys(&keys);
        scd_pass(problem, &self.columns, &self.norms, 0, &order, state, damping, options)
    }
}

/// Result of one device solve.
#[derive(Debug, Clone)]
pub struct SubtaskResult<T> {
    /// Update over the device's coordinates (device-local order).
    pub delta_alpha: Vec<T>,
    /// `B·Δα`, accumulated by the solver.
    pub delta_v: Vec<T>,
    /// Accepted epochs.
    pub epochs_run: usize,
    /// Epochs attempted, including discarded ones.
    pub attempts: usize,
    pub initial_value: T,
    pub final_value: T,
    /// Value after each accepted epoch.
    pub values: Vec<T>,
    /// Damping factor in force at the end of the solve.
    pub damping: T,
    pub measured_theta: Option<T>,
}

/// Seed of epoch attempt `attempt` of a solve seeded with `seed`.
pub fn epoch_seed(seed: u64, attempt: usize) -> u64 {
    derive_seed(seed, &[attempt as u64])
}

/// Runs `epochs` accepted epochs. After each attempt the subproblem value is
/// compared with the value before it; on an increase the attempt is undone
/// and the damping halved. Falling below [`DAMPING_FLOOR`] is an error.
pub fn damped_solve<T: Scalar, D: EpochData<T> + ?Sized>(
    data: &D,
    problem: &LocalProblem<'_, T>,
    damping: &mut DampingState<T>,
    epochs: usize,
    seed: u64,
    options: &SolverOptions,
) -> Result<SubtaskResult<T>> {
    if epochs == 0 {
        return Err(Error::invalid("at least one epoch is required"));
    }
    let n = data.n_coords();
    if problem.base.len() != n {
        return Err(Error::Dimension { expected: n, got: problem.base.len() });
    }
    if problem.linear.len() != data.n_rows() {
        return Err(Error::Dimension { expected: data.n_rows(), got: problem.linear.len() });
    }
    let mut state = SolverState::new(n, data.n_rows());
    let zero_u = vec![T::zero(); data.n_rows()];
    let (initial_value, _) = problem.value_with_scale(&state.delta, &zero_u);
    let mut current = initial_value;
    let mut accepted = 0;
    let mut attempts = 0;
    let mut values = Vec::with_capacity(epochs);
    while accepted < epochs {
        let saved_delta = state.delta.clone();
        let saved_u = state.shared_snapshot();
        let outcome = data.run_epoch(problem, &mut state, damping.delta, epoch_seed(seed, attempts), options);
        attempts += 1;
        let candidate = match outcome {
            Ok(()) => {
                let u = state.shared_snapshot();
                let (value, scale) = problem.value_with_scale(&state.delta, &u);
                let noise = T::epsilon() * T::lit(16.0) * scale;
                (value.is_finite() && value <= current + noise).then_some(value)
            }
            Err(Error::NonFinite(_)) => None,
            Err(e) => return Err(e),
        };
        match candidate {
            Some(value) => {
                current = value;
                values.push(value);
                damping.last_value = Some(value);
                accepted += 1;
            }
            None => {
                state.restore(&saved_delta, &saved_u);
                damping.halve();
                if damping.delta < T::lit(DAMPING_FLOOR) {
                    return Err(Error::Divergence {
                        delta: damping.delta.as_f64(),
                        epochs: attempts,
                        value: current.as_f64(),
                    });
                }
            }
        }
    }
    let delta_v = state.shared_snapshot();
    Ok(SubtaskResult {
        delta_alpha: state.delta,
        delta_v,
        epochs_run: accepted,
        attempts,
        initial_value,
        final_value: current,
        values,
        damping: damping.delta,
        measured_theta: None,
    })
}

/// High-accuracy sequential solve of a device subproblem: cyclic exact
/// coordinate minimization until the subproblem gap (or, for lasso, the
/// per-sweep decrease) is below `tolerance · max(1, |G|)`, within rounding
/// noise of zero, or has stopped moving.
pub fn exact_local_solve<T: Scalar>(
    columns: &SparseColumnMatrix<T>,
    problem: &LocalProblem<'_, T>,
    tolerance: T,
    max_sweeps: usize,
) -> Result<(Vec<T>, T)> {
    let n = columns.n_cols();
    let norms = columns.col_sq_norms();
    let mut delta = vec![T::zero(); n];
    let mut u = vec![T::zero(); columns.n_rows()];
    let mut prev = problem.value(&delta, &u);
    let mut measure = T::infinity();
    let mut best_measure = T::infinity();
    let mut stalled = 0;
    for sweep in 1..=max_sweeps {
        for j in 0..n {
            let (rows, vals) = columns.column(j);
            let c = rows.iter().zip(vals).fold(T::zero(), |s, (&r, &a)| {
                s + a * (problem.linear[r as usize] + problem.curvature * u[r as usize])
            });
            let step = problem
                .objective
                .exact_coordinate_min(problem.base[j] + delta[j], c, problem.curvature * norms[j])?;
            if step != T::zero() {
                delta[j] += step;
                columns.axpy_column(j, step, &mut u);
            }
        }
        if sweep % 50 == 0 {
            u = columns.matvec(&delta)?;
        }
        let value = problem.value(&delta, &u);
        let floor = if problem.objective.kind() == ObjectiveKind::LassoPrimal {
            measure = prev - value;
            T::zero()
        } else {
            let (gap, scale) = problem.gap_with_scale(columns, &delta, &u)?;
            measure = gap;
            T::epsilon() * T::lit(256.0) * scale
        };
        let decreased = value < prev;
        prev = value;
        if measure < best_measure {
            best_measure = measure;
            stalled = 0;
        } else if !decreased {
            stalled += 1;
        }
        // A gap that neither the value nor the gap itself can reduce any
        // further is the floor set by the domain margin.
        if measure <= (tolerance * value.abs().max(T::one())).max(floor) || stalled >= STALL_SWEEPS {
            let exact = problem.evaluate(columns, &delta)?;
            return Ok((delta, exact));
        }
    }
    Err(Error::MaxIterations { iterations: max_sweeps, gap: measure.as_f64(), best: prev.as_f64() })
}

/// Approximation quality `θ = [G(Δ) − G(Δ*)] / [G(0) − G(Δ*)]`, with `Δ*`
/// from [`exact_local_solve`]. Returns 0 when the subproblem is already
/// solved at `Δ = 0`.
pub fn measure_theta<T: Scalar>(
    columns: &SparseColumnMatrix<T>,
    problem: &LocalProblem<'_, T>,
    delta_alpha: &[T],
    tolerance: T,
) -> Result<T> {
    let (_, optimum) = exact_local_solve(columns, problem, tolerance, 100_000)?;
    let at_zero = problem.value(&vec![T::zero(); columns.n_cols()], &vec![T::zero(); columns.n_rows()]);
    let at_result = problem.evaluate(columns, delta_alpha)?;
    let denom = at_zero - optimum;
    if denom <= T::zero() {
        return Ok(T::zero());
    }
    Ok(((at_result - optimum) / denom).max(T::zero()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ridge_1x1() -> (Objective<f64>, ResidentColumns<f64>) {
        let a = SparseColumnMatrix::from_dense_rows(&[vec![1.0]]).unwrap();
        (Objective::ridge(1.0, 1, vec![1.0]).unwrap(), ResidentColumns::new(a))
    }

    #[test]
    fn ridge_single_update_is_exact() {
        let (obj, data) = ridge_1x1();
        // w = ∇f(0) = −b, s = β = 1.
        let w = [-1.0];
        let base = [0.0];
        let problem = LocalProblem { objective: &obj, linear: &w, curvature: 1.0, base: &base };
        let mut damping = DampingState::default();
        let r = damped_solve(&data, &problem, &mut damping, 1, 3, &SolverOptions::default()).unwrap();
        assert_eq!(r.delta_alpha, vec![0.5]);
        assert_eq!(r.delta_v, vec![0.5]);
        assert_eq!(r.damping, 1.0);
    }

    #[test]
    fn theta_endpoints() {
        let (obj, data) = ridge_1x1();
        let w = [-1.0];
        let base = [0.0];
        let problem = LocalProblem { objective: &obj, linear: &w, curvature: 1.0, base: &base };
        let cols = data.columns();
        assert_eq!(measure_theta(cols, &problem, &[0.0], 1e-12).unwrap(), 1.0);
        assert!(measure_theta(cols, &problem, &[0.5], 1e-12).unwrap() < 1e-12);
    }

    #[test]
    fn zero_epochs_rejected() {
        let (obj, data) = ridge_1x1();
        let w = [-1.0];
        let base = [0.0];
        let problem = LocalProblem { objective: &obj, linear: &w, curvature: 1.0, base: &base };
        let mut damping = DampingState::default();
        assert!(damped_solve(&data, &problem, &mut damping, 0, 1, &SolverOptions::default()).is_err());
    }

    #[test]
    fn damping_halves() {
        let mut d = DampingState::<f64>::default();
        d.halve();
        d.halve();
        assert_eq!(d.delta, 0.25);
    }
}
