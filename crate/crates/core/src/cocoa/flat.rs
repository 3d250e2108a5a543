use std::ops::Range;
use std::sync::Arc;

use crate::comm::canonical_sum;
use crate::error::Result;
use crate::objective::Objective;
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::solver::{damped_solve, DampingState, LocalProblem, ResidentColumns, SolverOptions};
use crate::sparse::{partition_columns, PartitionStrategy, SparseColumnMatrix};

/// Single-level CoCoA with `P` workers, run sequentially. Worker `p` draws
/// the same seeds as device `p` of the hierarchical engine, which makes
/// the two directly comparable.
pub struct FlatCocoa<T: Scalar> {
    objective: Objective<T>,
    workers: Vec<(Range<usize>, ResidentColumns<T>)>,
    sigma: T,
    epochs: usize,
    seed: u64,
    solver: SolverOptions,
    alpha: Vec<T>,
    v: Vec<T>,
    round: usize,
}

impl<T: Scalar> FlatCocoa<T> {
    pub fn new(
        matrix: Arc<SparseColumnMatrix<T>>,
        objective: Objective<T>,
        workers: usize,
        sigma: f64,
        epochs: usize,
        seed: u64,
        solver: SolverOptions,
    ) -> Result<Self> {
        let parts = partition_columns(matrix.n_cols(), workers, 1, PartitionStrategy::Contiguous)?;
        let workers = parts
            .iter()
            .map(|p| {
                let r = p.coords[0]..p.coords[p.coords.len() - 1] + 1;
                (r.clone(), ResidentColumns::new(matrix.column_range(r.start, r.end)))
            })
            .collect();
        let alpha = objective.initial_alpha(matrix.n_cols());
        let v = matrix.matvec(&alpha)?;
        Ok(Self { objective, workers, sigma: T::lit(sigma), epochs, seed, solver, alpha, v, round: 0 })
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn shared(&self) -> &[T] {
        &self.v
    }

    pub fn round(&mut self) -> Result<()> {
        let grad = self.objective.grad_f(&self.v);
        let curvature = self.sigma * self.objective.beta();
        let mut updates = Vec::with_capacity(self.workers.len());
        for (p, (range, data)) in self.workers.iter().enumerate() {
            let problem = LocalProblem { objective: &self.objective, linear: &grad, curvature, base: &self.alpha[range.clone()] };
            let seed = derive_seed(self.seed, &[p as u64, self.round as u64, 0]);
            let mut damping = DampingState::default();
            updates.push(damped_solve(data, &problem, &mut damping, self.epochs, seed, &self.solver)?);
        }
        let dv: Vec<Vec<f64>> = updates.iter().map(|u| u.delta_v.iter().map(|x| x.as_f64()).collect()).collect();
        let refs: Vec<&[f64]> = dv.iter().map(Vec::as_slice).collect();
        let total = canonical_sum(&refs)?;
        for (vi, t) in self.v.iter_mut().zip(total) {
            *vi += T::lit(t);
        }
        for ((range, _), u) in self.workers.iter().zip(updates) {
            for (a, d) in self.alpha[range.clone()].iter_mut().zip(u.delta_alpha) {
                *a += d;
            }
        }
        self.round += 1;
        Ok(())
    }

    pub fn objective_value(&self) -> f64 {
        self.objective.objective_at(&self.v, &self.alpha).as_f64()
    }
}
