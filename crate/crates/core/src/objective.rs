//! Objectives of the form `F(α) = f(Aα) + Σᵢ gᵢ(αᵢ)`.
//!
//! | kind           | f(v)            | gᵢ(α)                        | β    | μ | R   |
//! |----------------|-----------------|------------------------------|------|---|-----|
//! | dual logistic  | ‖v‖²/(2λ)       | α log α + (1−α) log(1−α)     | 1/λ  | 4 | ∞   |
//! | dual SVM       | ‖v‖²/(2λ)       | −α + 𝟙[0,1](α)               | 1/λ  | 0 | √n  |
//! | ridge (primal) | ½‖v − b‖²       | (λ/2) α²                     | 1    | λ | ∞   |
//! | lasso (primal) | ½‖v − b‖²       | λ |α|                        | 1    | 0 | ∞   |
//!
//! For the dual kinds column `i` of `A` is `yᵢxᵢ` and the primal weights are
//! `w = v/λ`. For the primal kinds the columns of `A` are features and `b`
//! holds the targets.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::{dot, norm_sq, Scalar};
use crate::sparse::SparseColumnMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    DualLogistic,
    DualSvm,
    RidgePrimal,
    LassoPrimal,
}

impl ObjectiveKind {
    pub fn is_dual(self) -> bool {
        matches!(self, Self::DualLogistic | Self::DualSvm)
    }

    pub fn code(self) -> u32 {
        match self {
            Self::DualLogistic => 1,
            Self::DualSvm => 2,
            Self::RidgePrimal => 3,
            Self::LassoPrimal => 4,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            1 => Self::DualLogistic,
            2 => Self::DualSvm,
            3 => Self::RidgePrimal,
            4 => Self::LassoPrimal,
            _ => return Err(Error::format(format!("unknown objective code {code}"))),
        })
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DualLogistic => "logistic",
            Self::DualSvm => "svm",
            Self::RidgePrimal => "ridge",
            Self::LassoPrimal => "lasso",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "dual_l2_logistic" => Ok(Self::DualLogistic),
            "svm" | "dual_l2_svm" => Ok(Self::DualSvm),
            "ridge" | "ridge_primal" => Ok(Self::RidgePrimal),
            "lasso" | "lasso_primal" => Ok(Self::LassoPrimal),
            _ => Err(Error::invalid(format!("unknown objective {s:?}"))),
        }
    }
}

/// Smallest distance kept from the boundary of the entropy domain.
pub fn logistic_margin<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(4.0))
}

#[inline]
fn softplus<T: Scalar>(u: T) -> T {
    if u > T::zero() {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

#[inline]
fn entropy<T: Scalar>(a: T) -> T {
    let xlogx = |x: T| if x == T::zero() { T::zero() } else { x * x.ln() };
    xlogx(a) + xlogx(T::one() - a)
}

/// A fully specified instance: kind, regularization and (for primal kinds)
/// the target vector `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective<T> {
    kind: ObjectiveKind,
    lambda: T,
    target: Vec<T>,
    n_coords: usize,
}

impl<T: Scalar> Objective<T> {
    pub fn new(kind: ObjectiveKind, lambda: T, n_coords: usize, target: Vec<T>) -> Result<Self> {
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        if kind.is_dual() && !target.is_empty() {
            return Err(Error::invalid("dual objectives take no target vector"));
        }
        Ok(Self { kind, lambda, target, n_coords })
    }

    pub fn dual_logistic(lambda: T, n_examples: usize) -> Result<Self> {
        Self::new(ObjectiveKind::DualLogistic, lambda, n_examples, Vec::new())
    }

    pub fn dual_svm(lambda: T, n_examples: usize) -> Result<Self> {
        Self::new(ObjectiveKind::DualSvm, lambda, n_examples, Vec::new())
    }

    pub fn ridge(lambda: T, n_features: usize, target: Vec<T>) -> Result<Self> {
        Self::new(ObjectiveKind::RidgePrimal, lambda, n_features, target)
    }

    pub fn lasso(lambda: T, n_features: usize, target: Vec<T>) -> Result<Self> {
        Self::new(ObjectiveKind::LassoPrimal, lambda, n_features, target)
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn target(&self) -> &[T] {
        &self.target
    }

    pub fn n_coords(&self) -> usize {
        self.n_coords
    }

    /// Smoothness constant of `f`.
    pub fn beta(&self) -> T {
        match self.kind {
            ObjectiveKind::DualLogistic | ObjectiveKind::DualSvm => T::one() / self.lambda,
            _ => T::one(),
        }
    }

    /// Strong convexity of every `gᵢ`.
    pub fn mu(&self) -> T {
        match self.kind {
            ObjectiveKind::DualLogistic => T::lit(4.0),
            ObjectiveKind::RidgePrimal => self.lambda,
            _ => T::zero(),
        }
    }

    /// Bound on `‖α‖` over iterates; infinite where no bounded support is
    /// used for rate evaluation.
    pub fn radius(&self) -> T {
        match self.kind {
            ObjectiveKind::DualSvm => T::lit(self.n_coords as f64).sqrt(),
            _ => T::infinity(),
        }
    }

    fn check_len(&self, v: &[T], d: usize) -> Result<()> {
        if v.len() != d {
            return Err(Error::Dimension { expected: d, got: v.len() });
        }
        Ok(())
    }

    pub fn f(&self, v: &[T]) -> T {
        match self.kind {
            ObjectiveKind::DualLogistic | ObjectiveKind::DualSvm => norm_sq(v) / (T::lit(2.0) * self.lambda),
            _ => {
                debug_assert_eq!(v.len(), self.target.len());
                v.iter().zip(&self.target).fold(T::zero(), |s, (&vi, &bi)| s + (vi - bi) * (vi - bi)) / T::lit(2.0)
            }
        }
    }

    pub fn grad_f(&self, v: &[T]) -> Vec<T> {
        match self.kind {
            ObjectiveKind::DualLogistic | ObjectiveKind::DualSvm => v.iter().map(|&x| x / self.lambda).collect(),
            _ => v.iter().zip(&self.target).map(|(&vi, &bi)| vi - bi).collect(),
        }
    }

    /// Fenchel conjugate `f*(w)`.
    pub fn f_conj(&self, w: &[T]) -> T {
        match self.kind {
            ObjectiveKind::DualLogistic | ObjectiveKind::DualSvm => self.lambda * norm_sq(w) / T::lit(2.0),
            _ => norm_sq(w) / T::lit(2.0) + dot(w, &self.target),
        }
    }

    /// `gᵢ(α)`; `+∞` outside the domain.
    pub fn g(&self, a: T) -> T {
        match self.kind {
            ObjectiveKind::DualLogistic => {
                if a < T::zero() || a > T::one() {
                    T::infinity()
                } else {
                    entropy(a)
                }
            }
            ObjectiveKind::DualSvm => {
                if a < T::zero() || a > T::one() {
                    T::infinity()
                } else {
                    -a
                }
            }
            ObjectiveKind::RidgePrimal => self.lambda * a * a / T::lit(2.0),
            ObjectiveKind::LassoPrimal => self.lambda * a.abs(),
        }
    }

    pub fn g_sum(&self, alpha: &[T]) -> T {
        alpha.iter().fold(T::zero(), |s, &a| s + self.g(a))
    }

    /// Derivative (subgradient `λ·sign(α)` for lasso). Errors where the
    /// derivative is unbounded or `α` lies outside the domain.
    pub fn g_deriv(&self, a: T) -> Result<T> {
        match self.kind {
            ObjectiveKind::DualLogistic => {
                if a <= T::zero() || a >= T::one() {
                    Err(Error::NonFinite(format!("entropy derivative unbounded at {a}")))
                } else {
                    Ok((a / (T::one() - a)).ln())
                }
            }
            ObjectiveKind::DualSvm => {
                if a < T::zero() || a > T::one() {
                    Err(Error::invalid(format!("{a} outside [0, 1]")))
                } else {
                    Ok(-T::one())
                }
            }
            ObjectiveKind::RidgePrimal => Ok(self.lambda * a),
            ObjectiveKind::LassoPrimal => Ok(if a == T::zero() { T::zero() } else { self.lambda * a.signum() }),
        }
    }

    /// Conjugate `gᵢ*(u)`; lasso has none usable for a gap.
    pub fn g_conj(&self, u: T) -> Result<T> {
        match self.kind {
            ObjectiveKind::DualLogistic => Ok(softplus(u)),
            ObjectiveKind::DualSvm => Ok((u + T::one()).max(T::zero())),
            ObjectiveKind::RidgePrimal => Ok(u * u / (T::lit(2.0) * self.lambda)),
            ObjectiveKind::LassoPrimal => Err(Error::Unsupported("duality gap for lasso".into())),
        }
    }

    /// Domain-appropriate starting point.
    pub fn initial_alpha(&self, n: usize) -> Vec<T> {
        let start = match self.kind {
            ObjectiveKind::DualLogistic => T::lit(0.5),
            _ => T::zero(),
        };
        vec![start; n]
    }

    /// Checks the domain invariants of a model.
    pub fn check_domain(&self, alpha: &[T]) -> Result<()> {
        for (i, &a) in alpha.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("alpha[{i}] = {a}")));
            }
            let ok = match self.kind {
                ObjectiveKind::DualLogistic => a > T::zero() && a < T::one(),
                ObjectiveKind::DualSvm => a >= T::zero() && a <= T::one(),
                _ => true,
            };
            if !ok {
                return Err(Error::invalid(format!("alpha[{i}] = {a} outside the domain of {}", self.kind)));
            }
        }
        Ok(())
    }

    /// One coordinate step for `min_δ c·δ + (q/2)·δ² + gᵢ(x + δ)`, where `q`
    /// is the data curvature (without `gᵢ`). Closed form for ridge, lasso and
    /// SVM; a single Newton step clipped to the open domain for logistic.
    pub fn coordinate_update(&self, x: T, c: T, q: T) -> Result<T> {
        let delta = match self.kind {
            ObjectiveKind::RidgePrimal => -(c + self.lambda * x) / (q + self.lambda),
            ObjectiveKind::LassoPrimal => {
                if q == T::zero() {
                    if c.abs() <= self.lambda {
                        -x
                    } else {
                        return Err(Error::NonFinite(format!("unbounded lasso coordinate (c = {c})")));
                    }
                } else {
                    let r = q * x - c;
                    let z = r.signum() * (r.abs() - self.lambda).max(T::zero()) / q;
                    z - x
                }
            }
            ObjectiveKind::DualSvm => {
                let z = if q == T::zero() {
                    if c < T::one() {
                        T::one()
                    } else if c > T::one() {
                        T::zero()
                    } else {
                        x
                    }
                } else {
                    (x - (c - T::one()) / q).max(T::zero()).min(T::one())
                };
                z - x
            }
            ObjectiveKind::DualLogistic => {
                let eps = logistic_margin::<T>();
                let xc = x.max(eps).min(T::one() - eps);
                let g1 = (xc / (T::one() - xc)).ln();
                let g2 = T::one() / (xc * (T::one() - xc));
                let step = -(c + g1) / (q + g2);
                let z = (xc + step).max(eps).min(T::one() - eps);
                z - x
            }
        };
        if !delta.is_finite() {
            return Err(Error::NonFinite(format!("coordinate step (x = {x}, c = {c}, q = {q})")));
        }
        Ok(delta)
    }

    /// Exact minimizer of the same one-dimensional problem (safeguarded
    /// Newton on the derivative for logistic).
    pub fn exact_coordinate_min(&self, x: T, c: T, q: T) -> Result<T> {
        if self.kind != ObjectiveKind::DualLogistic {
            return self.coordinate_update(x, c, q);
        }
        let eps = logistic_margin::<T>();
        // h(z) = c + q (z − x) + log(z/(1−z)) is increasing on (0, 1).
        let h = |z: T| c + q * (z - x) + (z / (T::one() - z)).ln();
        let (mut lo, mut hi) = (eps, T::one() - eps);
        if h(lo) >= T::zero() {
            return Ok(lo - x);
        }
        if h(hi) <= T::zero() {
            return Ok(hi - x);
        }
        let mut z = x.max(lo).min(hi);
        for _ in 0..200 {
            let hz = h(z);
            if hz == T::zero() {
                break;
            }
            if hz > T::zero() {
                hi = z;
            } else {
                lo = z;
            }
            let newton = z - hz / (q + T::one() / (z * (T::one() - z)));
            let next = if newton > lo && newton < hi { newton } else { (lo + hi) / T::lit(2.0) };
            if (next - z).abs() <= T::epsilon() * z.max(T::lit(1e-300)) || hi - lo <= T::epsilon() * hi {
                z = next;
                break;
            }
            z = next;
        }
        Ok(z - x)
    }

    /// `F(α) = f(Aα) + Σ gᵢ(αᵢ)`.
    pub fn primal_objective(&self, a: &SparseColumnMatrix<T>, alpha: &[T]) -> Result<T> {
        self.check_len(alpha, a.n_cols())?;
        let v = a.matvec(alpha)?;
        Ok(self.objective_at(&v, alpha))
    }

    /// `F` from a precomputed `v = Aα`.
    pub fn objective_at(&self, v: &[T], alpha: &[T]) -> T {
        self.f(v) + self.g_sum(alpha)
    }

    /// The part of the duality gap that does not depend on the data:
    /// `f(v) + f*(w) − wᵀv` with `w = ∇f(v)` (zero up to rounding).
    pub fn gap_shared_term(&self, v: &[T]) -> T {
        let w = self.grad_f(v);
        self.f(v) + self.f_conj(&w) - dot(&w, v)
    }

    /// Per-coordinate gap term `gᵢ(αᵢ) + gᵢ*(−mᵢ) + αᵢmᵢ` with `mᵢ = aᵢᵀw`;
    /// non-negative by Fenchel–Young.
    pub fn gap_coordinate_term(&self, alpha_i: T, margin: T) -> Result<T> {
        Ok(self.g(alpha_i) + self.g_conj(-margin)? + alpha_i * margin)
    }

    /// Duality gap `f(v) + f*(w) + Σᵢ [gᵢ(αᵢ) + gᵢ*(−aᵢᵀw)]`, `w = ∇f(v)`.
    pub fn duality_gap(&self, a: &SparseColumnMatrix<T>, alpha: &[T], v: &[T]) -> Result<T> {
        if self.kind == ObjectiveKind::LassoPrimal {
            return Err(Error::Unsupported("duality gap for lasso".into()));
        }
        self.check_len(alpha, a.n_cols())?;
        self.check_len(v, a.n_rows())?;
        let w = self.grad_f(v);
        let mut gap = self.gap_shared_term(v);
        for (j, &aj) in alpha.iter().enumerate() {
            gap += self.gap_coordinate_term(aj, a.column_dot(j, &w))?;
        }
        Ok(gap)
    }

    /// Primal weights recovered from the shared vector (dual kinds) or the
    /// model itself (primal kinds).
    pub fn primal_weights(&self, v: &[T], alpha: &[T]) -> Vec<T> {
        if self.kind.is_dual() {
            v.iter().map(|&x| x / self.lambda).collect()
        } else {
            alpha.to_vec()
        }
    }

    /// High-accuracy reference solve: cyclic coordinate descent with exact
    /// one-dimensional minimization, until the duality gap (or, for lasso,
    /// the per-sweep objective decrease) falls below `tolerance`.
    pub fn reference_optimum(
        &self,
        a: &SparseColumnMatrix<T>,
        tolerance: T,
        max_sweeps: usize,
    ) -> Result<ReferenceSolution<T>> {
        let n = a.n_cols();
        let mut alpha = self.initial_alpha(n);
        let mut v = a.matvec(&alpha)?;
        let norms = a.col_sq_norms();
        let beta = self.beta();
        let mut prev = self.objective_at(&v, &alpha);
        let mut last_gap = T::infinity();
        for sweep in 1..=max_sweeps {
            for j in 0..n {
                let c = match self.kind {
                    ObjectiveKind::DualLogistic | ObjectiveKind::DualSvm => a.column_dot(j, &v) / self.lambda,
                    _ => {
                        let (rows, vals) = a.column(j);
                        rows.iter()
                            .zip(vals)
                            .fold(T::zero(), |s, (&r, &x)| s + x * (v[r as usize] - self.target[r as usize]))
                    }
                };
                let delta = self.exact_coordinate_min(alpha[j], c, beta * norms[j])?;
                if delta != T::zero() {
                    alpha[j] += delta;
                    a.axpy_column(j, delta, &mut v);
                }
            }
            let obj = self.objective_at(&v, &alpha);
            let done = if self.kind == ObjectiveKind::LassoPrimal {
                last_gap = prev - obj;
                last_gap < tolerance
            } else {
                // Refresh v to shed accumulated rounding before certifying.
                if sweep % 50 == 0 {
                    v = a.matvec(&alpha)?;
                }
                last_gap = self.duality_gap(a, &alpha, &v)?;
                last_gap < tolerance
            };
            prev = obj;
            if done {
                let objective = self.primal_objective(a, &alpha)?;
                return Ok(ReferenceSolution { alpha, v, objective, gap: last_gap, sweeps: sweep });
            }
        }
        Err(Error::MaxIterations { iterations: max_sweeps, gap: last_gap.as_f64(), best: prev.as_f64() })
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution<T> {
    pub alpha: Vec<T>,
    pub v: Vec<T>,
    pub objective: T,
    /// Gap (or final objective decrease for lasso) at termination.
    pub gap: T,
    pub sweeps: usize,
}

/// Maps parsed example-major data onto the layout `kind` expects.
///
/// Dual kinds: labels are mapped to ±1 (`0` and negatives → −1) and folded
/// into the columns. Primal kinds: the matrix is transposed so columns are
/// features, and the labels become the target `b`.
pub fn prepare_problem<T: Scalar>(
    kind: ObjectiveKind,
    lambda: T,
    examples: &SparseColumnMatrix<T>,
    labels: &[T],
) -> Result<(Objective<T>, SparseColumnMatrix<T>)> {
    if labels.len() != examples.n_cols() {
        return Err(Error::Dimension { expected: examples.n_cols(), got: labels.len() });
    }
    if kind.is_dual() {
        let signs = binary_labels(labels)?;
        let a = examples.clone().with_labels(signs)?.fold_labels()?;
        Ok((Objective::new(kind, lambda, a.n_cols(), Vec::new())?, a))
    } else {
        let a = examples.transpose();
        Ok((Objective::new(kind, lambda, a.n_cols(), labels.to_vec())?, a))
    }
}

/// Normalizes {−1, +1} or {0, 1} labels to ±1.
pub fn binary_labels<T: Scalar>(labels: &[T]) -> Result<Vec<T>> {
    labels
        .iter()
        .map(|&y| {
            if y == T::one() {
                Ok(T::one())
            } else if y == -T::one() || y == T::zero() {
                Ok(-T::one())
            } else {
                Err(Error::invalid(format!("label {y} is not binary (expected ±1 or 0/1)")))
            }
        })
        .collect()
}
