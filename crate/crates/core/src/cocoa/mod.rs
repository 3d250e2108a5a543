//! Two-level CoCoA: K nodes exchange the shared vector over the network
//! once per outer round; within a node, L devices synchronize `t2` times per
//! outer round.

mod engine;
mod flat;
mod subproblem;
mod trace;

pub(crate) use engine::load_chunk;
pub use engine::{Engine, RoundInfo, RoundStats, TrainFailure, TrainReport};
pub use flat::FlatCocoa;
pub use subproblem::{InnerSubproblem, OuterSubproblem};
pub use trace::{ConvergenceTrace, TraceRow};

use std::time::Duration;

use crate::analysis::CostModel;
use crate::error::{Error, Result};
use crate::solver::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PartitionKind {
    #[default]
    Contiguous,
    BalancedByNnz,
}

#[derive(Debug, Clone)]
pub struct HierarchyConfig {
    /// `K`.
    pub nodes: usize,
    /// `L`, devices per node.
    pub devices: usize,
    /// `t1`, the maximum number of outer rounds.
    pub outer_rounds: usize,
    /// `t2`, inner rounds per outer round.
    pub inner_rounds: usize,
    /// Defaults to `K`.
    pub sigma: Option<f64>,
    /// Defaults to `L`.
    pub sigma_bar: Option<f64>,
    /// Accepted solver epochs per device per inner round.
    pub local_epochs: usize,
    pub seed: u64,
    pub solver: SolverOptions,
    pub partition: PartitionKind,
    /// Measure each device's θ against an exact local solve (slow).
    pub measure_theta: bool,
    pub theta_tolerance: f64,
    pub cost: CostModel,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            nodes: 1,
            devices: 1,
            outer_rounds: 100,
            inner_rounds: 1,
            sigma: None,
            sigma_bar: None,
            local_epochs: 1,
            seed: 42,
            solver: SolverOptions::default(),
            partition: PartitionKind::Contiguous,
            measure_theta: false,
            theta_tolerance: 1e-10,
            cost: CostModel::default(),
        }
    }
}

impl HierarchyConfig {
    pub fn new(nodes: usize, devices: usize) -> Self {
        Self { nodes, devices, ..Self::default() }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.nodes as f64)
    }

    pub fn sigma_bar(&self) -> f64 {
        self.sigma_bar.unwrap_or(self.devices as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.devices == 0 {
            return Err(Error::invalid("nodes and devices must be at least 1"));
        }
        if self.inner_rounds == 0 {
            return Err(Error::invalid("t2 must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.solver.threads == 0 {
            return Err(Error::invalid("threads per device must be at least 1"));
        }
        for (name, v) in [("sigma", self.sigma()), ("sigma-bar", self.sigma_bar())] {
            if !(v >= 1.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be a finite value ≥ 1, got {v}")));
            }
        }
        Ok(())
    }

    /// `KL`, the number of device partitions.
    pub fn workers(&self) -> usize {
        self.nodes * self.devices
    }
}

#[derive(Debug, Clone, Default)]
pub struct StopCriteria {
    /// Stop once `F − optimum ≤ target` (needs `optimum`).
    pub target_suboptimality: Option<f64>,
    pub optimum: Option<f64>,
    pub target_gap: Option<f64>,
    pub time_budget: Option<Duration>,
}

impl StopCriteria {
    pub fn max_rounds_only() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_suboptimality.is_some() && self.optimum.is_none() {
            return Err(Error::invalid("a suboptimality target needs the optimal value"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxRounds,
    TargetSuboptimality,
    TargetGap,
    TimeBudget,
}
