//! Convergence-rate bounds and communication-budget scheduling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest inner or outer round count the schedule search considers.
pub const MAX_ROUNDS: usize = 10_000;

/// Problem and hierarchy constants entering the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams<T> {
    /// Bound `R` on the support of the `gᵢ*` (only used by the general rate).
    pub radius: T,
    pub beta: T,
    /// Strong-convexity modulus of the `gᵢ`; zero for the general rate.
    pub mu: T,
    /// Spectral bound `c_A ≥ ‖A‖²`.
    pub c_a: T,
    /// Approximation quality of the device solver.
    pub theta_bar: T,
    pub sigma: T,
    pub sigma_bar: T,
}

impl<T: Scalar> RateParams<T> {
    /// Safe defaults `σ = K`, `σ̄ = L`.
    pub fn new(radius: T, beta: T, mu: T, c_a: T, theta_bar: T, nodes: usize, devices: usize) -> Result<Self> {
        let p = Self {
            radius,
            beta,
            mu,
            c_a,
            theta_bar,
            sigma: T::from_usize(nodes).unwrap(),
            sigma_bar: T::from_usize(devices).unwrap(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.beta > T::zero()) {
            return bad("β must be positive");
        }
        if !(self.mu >= T::zero()) {
            return bad("μ must be non-negative");
        }
        if !(self.c_a > T::zero()) || !self.c_a.is_finite() {
            return bad("c_A must be positive and finite");
        }
        if !(self.theta_bar >= T::zero() && self.theta_bar <= T::one()) {
            return bad("θ̄ must lie in [0, 1]");
        }
        if !(self.sigma >= T::one()) || !(self.sigma_bar >= T::one()) {
            return bad("σ and σ̄ must be at least 1");
        }
        Ok(())
    }

    /// Per-inner-round contraction `1 − (1−θ̄)(βσc_A + μ)/(σ̄σβc_A + μ)`.
    pub fn inner_contraction(&self) -> T {
        let bsc = self.beta * self.sigma * self.c_a;
        T::one() - (T::one() - self.theta_bar) * (bsc + self.mu) / (self.sigma_bar * bsc + self.mu)
    }

    /// Node-level approximation quality after `t2` inner rounds.
    pub fn theta_from_inner(&self, t2: usize) -> T {
        self.inner_contraction().powi(t2.min(i32::MAX as usize) as i32)
    }

    /// As [`RateParams::theta_from_inner`] with `μ` taken as zero.
    fn theta_general(&self, t2: usize) -> T {
        let c = T::one() - (T::one() - self.theta_bar) / self.sigma_bar;
        c.powi(t2.min(i32::MAX as usize) as i32)
    }

    /// Expected suboptimality bound for general convex `gᵢ` after `t1`
    /// outer and `t2` inner rounds: `4R²c_Aσβ / ((1 − θ)·t1)`.
    /// Infinite when `θ̄ = 1` or `t2 = 0`.
    pub fn rate_bound_general(&self, t1: usize, t2: usize) -> T {
        let theta = self.theta_general(t2);
        let denom = (T::one() - theta) * T::from_usize(t1).unwrap();
        if !(denom > T::zero()) {
            return T::infinity();
        }
        T::lit(4.0) * self.radius * self.radius * self.c_a * self.sigma * self.beta / denom
    }

    /// Suboptimality bound for `μ`-strongly convex `gᵢ`:
    /// `(1 − (1 − θ)·μ/(μ + σβc_A))^t1 · ε0`.
    pub fn rate_bound_strongly_convex(&self, t1: usize, t2: usize, eps0: T) -> T {
        let theta = self.theta_from_inner(t2);
        let rho = T::one() - (T::one() - theta) * self.mu / (self.mu + self.sigma * self.beta * self.c_a);
        rho.powi(t1.min(i32::MAX as usize) as i32) * eps0
    }
}

/// Costs of one computation step, one outer and one inner communication
/// round, and the total budget.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostModel {
    pub c1: f64,
    pub c2: f64,
    pub c_comp: f64,
    pub budget: f64,
}

impl CostModel {
    pub fn new(c1: f64, c2: f64, c_comp: f64, budget: f64) -> Result<Self> {
        let m = Self { c1, c2, c_comp, budget };
        for (name, v) in [("c1", c1), ("c2", c2), ("c_comp", c_comp), ("budget", budget)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(m)
    }

    /// Cost of one outer round with `t2` inner rounds.
    pub fn round_cost(&self, t2: usize) -> f64 {
        self.c1 + t2 as f64 * (self.c2 + self.c_comp)
    }

    /// `t1·c1 + t1·t2·(c2 + c_comp)`.
    pub fn simulated_time(&self, t1: usize, t2: usize) -> f64 {
        t1 as f64 * self.round_cost(t2)
    }

    pub fn feasible(&self, t1: usize, t2: usize) -> bool {
        self.simulated_time(t1, t2) <= self.budget * (1.0 + 1e-12)
    }

    /// Most outer rounds that fit in the budget for a given `t2`.
    pub fn max_outer_rounds(&self, t2: usize) -> usize {
        let per = self.round_cost(t2);
        if per <= 0.0 {
            return MAX_ROUNDS;
        }
        let mut t1 = ((self.budget / per).floor() as usize).min(MAX_ROUNDS);
        while t1 < MAX_ROUNDS && self.feasible(t1 + 1, t2) {
            t1 += 1;
        }
        t1
    }
}

/// Which bound the schedule search minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundKind<T> {
    General,
    StronglyConvex { eps0: T },
}

impl<T: Scalar> BoundKind<T> {
    /// The strongly convex rate when `μ > 0`, the general rate otherwise.
    pub fn for_params(params: &RateParams<T>, eps0: T) -> Self {
        if params.mu > T::zero() {
            BoundKind::StronglyConvex { eps0 }
        } else {
            BoundKind::General
        }
    }

    pub fn evaluate(&self, params: &RateParams<T>, t1: usize, t2: usize) -> T {
        match *self {
            BoundKind::General => params.rate_bound_general(t1, t2),
            BoundKind::StronglyConvex { eps0 } => params.rate_bound_strongly_convex(t1, t2, eps0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule<T> {
    pub t1: usize,
    pub t2: usize,
    pub bound: T,
    pub cost: f64,
}

/// Minimizes the bound over `t1, t2 ∈ [1, 10⁴]` subject to the budget.
/// Ties go to the smaller `t2`.
pub fn optimize_schedule<T: Scalar>(params: &RateParams<T>, cost: &CostModel, kind: BoundKind<T>) -> Result<Schedule<T>> {
    params.validate()?;
    if !(cost.budget > 0.0) || !cost.feasible(1, 1) {
        return Err(Error::Infeasible(format!(
            "budget {} is below the cost of a single round ({})",
            cost.budget,
            cost.round_cost(1)
        )));
    }
    let mut best: Option<Schedule<T>> = None;
    for t2 in 1..=MAX_ROUNDS {
        let t1 = cost.max_outer_rounds(t2);
        if t1 == 0 {
            break;
        }
        // Every bound is non-increasing in t1, so the largest feasible t1 wins.
        let bound = kind.evaluate(params, t1, t2);
        if best.as_ref().is_none_or(|b| bound < b.bound) {
            best = Some(Schedule { t1, t2, bound, cost: cost.simulated_time(t1, t2) });
        }
    }
    Ok(best.expect("(1, 1) is feasible"))
}

/// First round at which `objective − f_star ≤ eps`, with its simulated time.
pub fn time_to_target(objectives: &[f64], f_star: f64, eps: f64, cost: &CostModel, t2: usize) -> Option<(usize, f64)> {
    objectives
        .iter()
        .position(|&f| f - f_star <= eps)
        .map(|round| (round, cost.simulated_time(round, t2)))
}
