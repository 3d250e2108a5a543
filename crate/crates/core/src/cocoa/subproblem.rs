//! Quadratic upper-bound subproblems for one node and for one device.

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::scalar::{dot, norm_sq, Scalar};
use crate::solver::LocalProblem;
use crate::sparse::SparseColumnMatrix;

/// Node subproblem
/// `F(Δ) = (1/K) f(v) + ∇f(v)ᵀAΔ + (σβ/2)‖AΔ‖² + Σ gᵢ(αᵢ + Δᵢ)`.
#[derive(Debug, Clone)]
pub struct OuterSubproblem<'a, T> {
    objective: &'a Objective<T>,
    columns: &'a SparseColumnMatrix<T>,
    alpha: &'a [T],
    gradient: Vec<T>,
    f_v: T,
    sigma: T,
    nodes: usize,
}

impl<'a, T: Scalar> OuterSubproblem<'a, T> {
    pub fn new(
        objective: &'a Objective<T>,
        v: &[T],
        columns: &'a SparseColumnMatrix<T>,
        alpha: &'a [T],
        sigma: T,
        nodes: usize,
    ) -> Result<Self> {
        if v.len() != columns.n_rows() {
            return Err(Error::Dimension { expected: columns.n_rows(), got: v.len() });
        }
        if alpha.len() != columns.n_cols() {
            return Err(Error::Dimension { expected: columns.n_cols(), got: alpha.len() });
        }
        if nodes == 0 || !(sigma >= T::one()) {
            return Err(Error::invalid("need K ≥ 1 and σ ≥ 1"));
        }
        Ok(Self { objective, columns, alpha, gradient: objective.grad_f(v), f_v: objective.f(v), sigma, nodes })
    }

    pub fn gradient(&self) -> &[T] {
        &self.gradient
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// `σβ/2`.
    pub fn quadratic_coefficient(&self) -> T {
        self.sigma * self.objective.beta() / T::lit(2.0)
    }

    pub fn evaluate(&self, delta: &[T]) -> Result<T> {
        if delta.len() != self.alpha.len() {
            return Err(Error::Dimension { expected: self.alpha.len(), got: delta.len() });
        }
        let u = self.columns.matvec(delta)?;
        let g: T = self.alpha.iter().zip(delta).map(|(&a, &d)| self.objective.g(a + d)).sum();
        Ok(self.f_v / T::from_usize(self.nodes).unwrap()
            + dot(&self.gradient, &u)
            + self.quadratic_coefficient() * norm_sq(&u)
            + g)
    }

    /// Device subproblem for the coordinates `device_columns` (whose current
    /// values, including the node correction `d`, are `device_base`) given
    /// the node correction `v̄ = B·d`.
    pub fn inner(
        &self,
        vbar: &[T],
        device_columns: &'a SparseColumnMatrix<T>,
        device_base: &'a [T],
        sigma_bar: T,
        devices: usize,
    ) -> Result<InnerSubproblem<'a, T>> {
        if vbar.len() != self.gradient.len() {
            return Err(Error::Dimension { expected: self.gradient.len(), got: vbar.len() });
        }
        if device_columns.n_rows() != self.gradient.len() {
            return Err(Error::Dimension { expected: self.gradient.len(), got: device_columns.n_rows() });
        }
        if device_base.len() != device_columns.n_cols() {
            return Err(Error::Dimension { expected: device_columns.n_cols(), got: device_base.len() });
        }
        if devices == 0 || !(sigma_bar >= T::one()) {
            return Err(Error::invalid("need L ≥ 1 and σ̄ ≥ 1"));
        }
        let beta_bar = self.sigma * self.objective.beta();
        let linear = inner_linear_term(&self.gradient, vbar, beta_bar);
        let k = T::from_usize(self.nodes).unwrap();
        let l = T::from_usize(devices).unwrap();
        let constant = (self.f_v / k + dot(&self.gradient, vbar) + beta_bar / T::lit(2.0) * norm_sq(vbar)) / l;
        Ok(InnerSubproblem {
            objective: self.objective,
            columns: device_columns,
            base: device_base,
            linear,
            curvature: sigma_bar * self.sigma * self.objective.beta(),
            constant,
        })
    }
}

/// `∇f(v) + β̄·v̄`, exactly `∇f(v)` when `v̄ = 0`.
pub(crate) fn inner_linear_term<T: Scalar>(gradient: &[T], vbar: &[T], beta_bar: T) -> Vec<T> {
    gradient.iter().zip(vbar).map(|(&g, &x)| if x == T::zero() { g } else { g + beta_bar * x }).collect()
}

/// Device subproblem
/// `G(Δ) = c + [∇f(v) + βσ v̄]ᵀBΔ + (σ̄σβ/2)‖BΔ‖² + Σ gᵢ(xᵢ + Δᵢ)`.
#[derive(Debug, Clone)]
pub struct InnerSubproblem<'a, T> {
    objective: &'a Objective<T>,
    columns: &'a SparseColumnMatrix<T>,
    base: &'a [T],
    linear: Vec<T>,
    curvature: T,
    constant: T,
}

impl<T: Scalar> InnerSubproblem<'_, T> {
    pub fn linear_term(&self) -> &[T] {
        &self.linear
    }

    /// `σ̄σβ`.
    pub fn curvature(&self) -> T {
        self.curvature
    }

    pub fn constant(&self) -> T {
        self.constant
    }

    pub fn local_problem(&self) -> LocalProblem<'_, T> {
        LocalProblem { objective: self.objective, linear: &self.linear, curvature: self.curvature, base: self.base }
    }

    pub fn evaluate(&self, delta: &[T]) -> Result<T> {
        if delta.len() != self.base.len() {
            return Err(Error::Dimension { expected: self.base.len(), got: delta.len() });
        }
        Ok(self.constant + self.local_problem().evaluate(self.columns, delta)?)
    }
}
