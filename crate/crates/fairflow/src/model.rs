//! Fluid model of the two-stage queueing system: per-class demand queues
//! feeding a shared service queue through a uniform price and admission rate.
//!
//! Everything here is a pure function of its arguments; the simulator and the
//! controller both build on these evaluations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Tolerance for the simplex check in [`aggregate_derivative`].
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("proportion vector is off the simplex (sum = {sum})")]
    SimplexViolation { sum: f64 },
    #[error("invalid parameter {key}: {message}")]
    InvalidParam { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ModelError {
    ModelError::InvalidParam {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Per-class dropout coefficients: the dropout rate at price `p` is
/// `clip(r1 * p + r2, 0, 1)` per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams<R> {
    /// Price sensitivity (dropout fraction per unit price per unit time).
    pub r1: R,
    /// Baseline dropout tendency independent of price.
    pub r2: R,
}

impl<R: Real> ClassParams<R> {
    pub fn new(r1: R, r2: R) -> Result<Self, ModelError> {
        let c = Self { r1, r2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.r1.is_finite() && self.r1 >= R::zero()) {
            return Err(invalid(
                "r1",
                format!("must be finite and >= 0, got {}", self.r1),
            ));
        }
        if !(self.r2.is_finite() && self.r2 >= R::zero()) {
            return Err(invalid(
                "r2",
                format!("must be finite and >= 0, got {}", self.r2),
            ));
        }
        Ok(())
    }

    /// Dropout fraction per unit time at price `p`, clipped to `[0, 1]` so the
    /// evaluation is total even for unnormalized coefficients.
    pub fn dropout_rate(&self, p: R) -> R {
        (self.r1 * p + self.r2).clamp01()
    }
}

/// Plant and controller parameters shared across the system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams<R> {
    /// Maximum service rate (users/time).
    pub mu_star: R,
    /// Critical service-queue length where the service rate saturates.
    pub q_c: R,
    /// Service queue capacity the controller must respect.
    pub q_max: R,
    pub p_min: R,
    pub p_max: R,
    /// Bound on |nu|, the admission-rate derivative.
    pub nu_max: R,
    /// First-order class-K gain in the barrier condition.
    pub lambda1: R,
    /// Second-order class-K gain in the barrier condition.
    pub lambda2: R,
    /// Unfairness threshold in [0, 1].
    pub theta_d: R,
    /// Decision window: controls recomputed every `t_d` and held constant.
    pub t_d: R,
    /// Fairness averaging window.
    pub t_i: R,
    /// Integration step.
    pub dt: R,
}

impl<R: Real> Default for SystemParams<R> {
    fn default() -> Self {
        Self {
            mu_star: R::of(5.0),
            q_c: R::of(10.0),
            q_max: R::of(15.0),
            p_min: R::zero(),
            p_max: R::of(10.0),
            nu_max: R::of(10.0),
            lambda1: R::one(),
            lambda2: R::one(),
            theta_d: R::of(0.4),
            t_d: R::of(0.1),
            t_i: R::of(10.0),
            dt: R::of(0.01),
        }
    }
}

impl<R: Real> SystemParams<R> {
    pub fn validate(&self) -> Result<(), ModelError> {
        let pos = |key: &str, v: R| -> Result<(), ModelError> {
            if v.is_finite() && v > R::zero() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be finite and > 0, got {v}")))
            }
        };
        pos("system.mu_star", self.mu_star)?;
        pos("system.q_c", self.q_c)?;
        pos("system.q_max", self.q_max)?;
        pos("system.nu_max", self.nu_max)?;
        pos("system.lambda1", self.lambda1)?;
        pos("system.lambda2", self.lambda2)?;
        pos("system.t_d", self.t_d)?;
        pos("system.dt", self.dt)?;
        if !(self.p_min.is_finite() && self.p_max.is_finite() && self.p_min < self.p_max) {
            return Err(invalid(
                "system.p_min",
                format!(
                    "price bounds must satisfy p_min < p_max, got [{}, {}]",
                    self.p_min, self.p_max
                ),
            ));
        }
        if self.p_min < R::zero() {
            return Err(invalid("system.p_min", "must be >= 0"));
        }
        if !(self.theta_d >= R::zero() && self.theta_d <= R::one()) {
            return Err(invalid(
                "system.theta_d",
                format!("out of [0,1], got {}", self.theta_d),
            ));
        }
        if self.dt > self.t_d {
            return Err(invalid(
                "system.dt",
                format!("must be <= t_d, got dt={} t_d={}", self.dt, self.t_d),
            ));
        }
        if self.t_i < self.t_d {
            return Err(invalid(
                "system.t_i",
                format!("must be >= t_d, got t_i={} t_d={}", self.t_i, self.t_d),
            ));
        }
        Ok(())
    }

    /// Service rate: linear in `q` up to `q_c`, saturated at `mu_star` beyond.
    pub fn service_rate(&self, q: R) -> R {
        if q <= self.q_c {
            self.mu_star / self.q_c * q
        } else {
            self.mu_star
        }
    }

    /// Derivative of the service rate in `q`. At the kink `q == q_c` this
    /// returns the saturated-side value 0, which removes the stabilizing
    /// slope credit from the barrier condition right at the corner.
    pub fn service_rate_slope(&self, q: R) -> R {
        if q < self.q_c {
            self.mu_star / self.q_c
        } else {
            R::zero()
        }
    }
}

/// Ground truth inside the simulator: per-class demand queues, the service
/// queue, and the admission rate. The controller never sees `x` directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenState<R> {
    /// Per-class demand queue lengths.
    pub x: Vec<R>,
    /// Service queue length.
    pub q: R,
    /// Admission rate in [0, 1].
    pub alpha: R,
}

impl<R: Real> HiddenState<R> {
    pub fn new(x: Vec<R>, q: R, alpha: R) -> Self {
        Self { x, q, alpha }
    }

    /// Aggregate demand queue length.
    pub fn z(&self) -> R {
        self.x.iter().copied().sum()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (i, &xi) in self.x.iter().enumerate() {
            if !(xi.is_finite() && xi >= R::zero()) {
                return Err(invalid(
                    &format!("sim.x0.{}", i + 1),
                    format!("must be finite and >= 0, got {xi}"),
                ));
            }
        }
        if !(self.q.is_finite() && self.q >= R::zero()) {
            return Err(invalid(
                "sim.q0",
                format!("must be finite and >= 0, got {}", self.q),
            ));
        }
        if !(self.alpha.is_finite() && self.alpha >= R::zero() && self.alpha <= R::one()) {
            return Err(invalid(
                "sim.alpha0",
                format!("must be in [0,1], got {}", self.alpha),
            ));
        }
        Ok(())
    }

    /// Clamp queues to `[0, inf)` and the admission rate to `[0, 1]`.
    pub fn clamped(mut self) -> Self {
        for xi in &mut self.x {
            *xi = xi.max(R::zero());
        }
        self.q = self.q.max(R::zero());
        self.alpha = self.alpha.clamp01();
        self
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite()) && self.q.is_finite() && self.alpha.is_finite()
    }
}

/// The controller's sensor view at a decision epoch. Only aggregates are
/// observable; the per-class composition behind `z` and `d` is not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation<R> {
    /// Aggregate demand queue length.
    pub z: R,
    /// Service queue length.
    pub q: R,
    /// Current admission rate.
    pub alpha: R,
    /// Aggregate arrival rate.
    pub k: R,
    /// Aggregate instantaneous dropout rate, measured under `p_applied`.
    pub d: R,
    /// Price in force when `d` was measured.
    pub p_applied: R,
    /// Timestamp.
    pub t: R,
}

/// One control action: a price and an admission-rate derivative, held
/// constant over a decision window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control<R> {
    pub p: R,
    pub nu: R,
}

/// Time derivative of a [`HiddenState`].
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenDerivative<R> {
    pub x_dot: Vec<R>,
    pub q_dot: R,
    pub alpha_dot: R,
}

/// Right-hand side of the ground-truth dynamics:
/// `x_i' = K_i - f_i(p) x_i - alpha x_i`, `q' = alpha z - mu(q)`, `alpha' = nu`.
pub fn hidden_derivative<R: Real>(
    state: &HiddenState<R>,
    ctrl: Control<R>,
    arrivals: &[R],
    sp: &SystemParams<R>,
    classes: &[ClassParams<R>],
) -> Result<HiddenDerivative<R>, ModelError> {
    let n = state.x.len();
    if classes.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "classes",
            expected: n,
            got: classes.len(),
        });
    }
    if arrivals.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "arrivals",
            expected: n,
            got: arrivals.len(),
        });
    }
    let x_dot = (0..n)
        .map(|i| arrivals[i] - (classes[i].dropout_rate(ctrl.p) + state.alpha) * state.x[i])
        .collect();
    let q_dot = state.alpha * state.z() - sp.service_rate(state.q);
    Ok(HiddenDerivative {
        x_dot,
        q_dot,
        alpha_dot: ctrl.nu,
    })
}

/// Aggregate demand-queue derivative `z' = K - z * sum_i f_i(p) w_i - alpha z`
/// for a given type-proportion vector `w` on the unit simplex.
///
/// When `w_i = x_i / z` this equals the sum of the per-class derivatives from
/// [`hidden_derivative`].
pub fn aggregate_derivative<R: Real>(
    z: R,
    alpha: R,
    w: &[R],
    ctrl: Control<R>,
    k: R,
    classes: &[ClassParams<R>],
) -> Result<R, ModelError> {
    if w.len() != classes.len() {
        return Err(ModelError::DimensionMismatch {
            what: "w",
            expected: classes.len(),
            got: w.len(),
        });
    }
    let sum: R = w.iter().copied().sum();
    if (sum - R::one()).abs() > R::of(SIMPLEX_TOL) || w.iter().any(|&wi| wi < -R::of(SIMPLEX_TOL)) {
        return Err(ModelError::SimplexViolation { sum: sum.as_f64() });
    }
    let phi: R = w
        .iter()
        .zip(classes)
        .map(|(&wi, c)| wi * c.dropout_rate(ctrl.p))
        .sum();
    Ok(k - z * phi - alpha * z)
}

/// Aggregate dropout rate `sum_i f_i(p) x_i` of a hidden state at price `p`.
pub fn aggregate_dropout<R: Real>(x: &[R], p: R, classes: &[ClassParams<R>]) -> R {
    x.iter()
        .zip(classes)
        .map(|(&xi, c)| c.dropout_rate(p) * xi)
        .sum()
}
