//! Second-order control-barrier machinery for the service-queue capacity
//! bound `b = q_max - q`.
//!
//! The admission rate is driven through an integrator (`alpha' = nu`) so that
//! both the price and the admission control reach the constraint at relative
//! degree two; the margin assembled in [`capacity_margin`] is affine in the
//! control pair, which is what makes the worst-case layer in [`crate::robust`]
//! a small linear program.

use serde::{Deserialize, Serialize};

use crate::model::{ClassParams, Control, Observation, SystemParams};
use crate::scalar::Real;

/// The aggregate state visible to the controller: service queue, aggregate
/// demand queue, and the admission rate treated as a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtendedState<R> {
    pub q: R,
    pub z: R,
    pub alpha: R,
}

impl<R: Real> ExtendedState<R> {
    pub fn new(q: R, z: R, alpha: R) -> Self {
        Self { q, z, alpha }
    }

    pub fn from_observation(obs: &Observation<R>) -> Self {
        Self {
            q: obs.q,
            z: obs.z,
            alpha: obs.alpha,
        }
    }

    fn clamped(mut self) -> Self {
        self.q = self.q.max(R::zero());
        self.z = self.z.max(R::zero());
        self.alpha = self.alpha.clamp01();
        self
    }
}

/// Lie derivatives of the barrier `b = q_max - q` along the extended
/// dynamics, for a fixed type-proportion vector `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LieDerivatives<R> {
    /// Barrier value `q_max - q`.
    pub b: R,
    /// First derivative along the drift: `mu(q) - alpha z`.
    pub lf_b: R,
    /// Second derivative along the drift:
    /// `(alpha z - mu) mu'(q) - alpha (K - z w'r2 - alpha z)`.
    pub lf2_b: R,
    /// Price coefficient in the second derivative: `alpha z (w'r1)`.
    pub lgp_lf_b: R,
    /// Admission-derivative coefficient: `-z`.
    pub lgnu_lf_b: R,
}

impl<R: Real> LieDerivatives<R> {
    /// Assemble the second-order barrier margin for a candidate control,
    /// with linear class-K gains `lambda1`, `lambda2`. The first-order input
    /// terms vanish because neither input enters `b` directly.
    pub fn margin(&self, ctrl: Control<R>, sp: &SystemParams<R>) -> R {
        self.lf2_b
            + self.lgp_lf_b * ctrl.p
            + self.lgnu_lf_b * ctrl.nu
            + sp.lambda2 * (self.lf_b + sp.lambda1 * self.b)
    }
}

/// Evaluate all Lie derivatives of the capacity barrier at `state`.
pub fn lie_derivatives<R: Real>(
    state: &ExtendedState<R>,
    w: &[R],
    k: R,
    sp: &SystemParams<R>,
    classes: &[ClassParams<R>],
) -> LieDerivatives<R> {
    debug_assert_eq!(w.len(), classes.len());
    let wr1: R = w.iter().zip(classes).map(|(&wi, c)| wi * c.r1).sum();
    let wr2: R = w.iter().zip(classes).map(|(&wi, c)| wi * c.r2).sum();
    let mu = sp.service_rate(state.q);
    let slope = sp.service_rate_slope(state.q);
    let az = state.alpha * state.z;
    LieDerivatives {
        b: sp.q_max - state.q,
        lf_b: mu - az,
        lf2_b: (az - mu) * slope - state.alpha * (k - state.z * wr2 - az),
        lgp_lf_b: az * wr1,
        lgnu_lf_b: -state.z,
    }
}

/// Capacity margin: nonnegativity keeps the service queue below `q_max`
/// along the extended dynamics. Affine in `(p, nu)` for fixed state and `w`.
pub fn capacity_margin<R: Real>(
    state: &ExtendedState<R>,
    ctrl: Control<R>,
    w: &[R],
    k: R,
    sp: &SystemParams<R>,
    classes: &[ClassParams<R>],
) -> R {
    lie_derivatives(state, w, k, sp, classes).margin(ctrl, sp)
}

/// Fairness margin: slack of the predicted unfairness index against the
/// threshold. Negative values flag an infeasible candidate, not an error.
pub fn fairness_margin<R: Real>(predicted_index: R, theta_d: R) -> R {
    theta_d - predicted_index
}

/// Outcome of propagating the aggregate dynamics over one horizon under
/// constant controls and a fixed type-proportion vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<R> {
    /// State at the end of the horizon.
    pub state: ExtendedState<R>,
    /// Time average of the dropout/arrival ratio over the horizon, the input
    /// to [`crate::metrics::FairnessWindow::predict_index`].
    pub mean_ratio: R,
}

/// Propagate `(q, z, alpha)` over `horizon` with fixed-step RK4 at `sp.dt`,
/// holding `(p, nu)`, `w`, and the arrival rate `k` constant. Queues are
/// clamped to `[0, inf)` and alpha to `[0, 1]` after each step. A horizon
/// that is not an integer multiple of `dt` gets a shortened final step; a
/// non-positive horizon returns the state unchanged with the instantaneous
/// ratio.
pub fn predict_state<R: Real>(
    state: &ExtendedState<R>,
    ctrl: Control<R>,
    w: &[R],
    k: R,
    sp: &SystemParams<R>,
    classes: &[ClassParams<R>],
    horizon: R,
) -> Prediction<R> {
    // Aggregate dropout coefficient: constant along the horizon because both
    // the price and the composition are held fixed.
    let phi: R = w
        .iter()
        .zip(classes)
        .map(|(&wi, c)| wi * c.dropout_rate(ctrl.p))
        .sum();

    if horizon <= R::zero() {
        let ratio = if k > R::zero() {
            phi * state.z / k
        } else {
            R::zero()
        };
        return Prediction {
            state: *state,
            mean_ratio: ratio,
        };
    }

    // Augmented state (q, z, alpha, s) with s' = z, so the integral of z over
    // the horizon comes out of the same RK4 pass.
    let deriv = |q: R, z: R, alpha: R| -> [R; 4] {
        [
            alpha * z - sp.service_rate(q),
            k - z * phi - alpha * z,
            ctrl.nu,
            z,
        ]
    };

    let mut cur = *state;
    let mut z_integral = R::zero();
    let mut remaining = horizon;
    let two = R::of(2.0);
    let six = R::of(6.0);
    while remaining > R::zero() {
        let h = remaining.min(sp.dt);
        let half = h / two;
        let k1 = deriv(cur.q, cur.z, cur.alpha);
        let k2 = deriv(
            cur.q + half * k1[0],
            cur.z + half * k1[1],
            cur.alpha + half * k1[2],
        );
        let k3 = deriv(
            cur.q + half * k2[0],
            cur.z + half * k2[1],
            cur.alpha + half * k2[2],
        );
        let k4 = deriv(cur.q + h * k3[0], cur.z + h * k3[1], cur.alpha + h * k3[2]);
        let weight = |i: usize| (k1[i] + two * k2[i] + two * k3[i] + k4[i]) / six;
        cur = ExtendedState {
            q: cur.q + h * weight(0),
            z: cur.z + h * weight(1),
            alpha: cur.alpha + h * weight(2),
        }
        .clamped();
        z_integral = z_integral + h * weight(3);
        remaining = remaining - h;
    }

    let mean_ratio = if k > R::zero() {
        (phi * z_integral / (k * horizon)).max(R::zero())
    } else {
        R::zero()
    };
    Prediction {
        state: cur,
        mean_ratio,
    }
}
