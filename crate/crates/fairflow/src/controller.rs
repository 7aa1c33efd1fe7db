//! Receding-horizon decision makers: the robust fair controller (exhaustive
//! grid search over the control box with worst-case margins as constraints)
//! and the monotone surge-pricing baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cbf::{self, ExtendedState};
use crate::metrics::FairnessWindow;
use crate::model::{ClassParams, Control, ModelError, Observation, SystemParams};
use crate::robust::{self, ConsistencySet, EmptyConsistencySet};
use crate::scalar::Real;

/// Grid sizes small enough to stay serial; beyond this the candidate
/// evaluation fans out over rayon.
const PARALLEL_GRID_THRESHOLD: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    RobustFair,
    Surge,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::RobustFair => "robust_fair",
            Policy::Surge => "surge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "robust_fair" => Some(Policy::RobustFair),
            "surge" => Some(Policy::Surge),
            _ => None,
        }
    }
}

/// Which window the revenue objective prices: the predicted end-of-window
/// state (default) or the state observed at the decision instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveForm {
    EndOfWindow,
    StartOfWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig<R> {
    /// Number of price candidates over `[p_min, p_max]`.
    pub p_grid_size: usize,
    /// Number of admission-derivative candidates over `[-nu_max, nu_max]`.
    pub nu_grid_size: usize,
    pub policy: Policy,
    pub objective: ObjectiveForm,
    /// Feasibility guard on the fairness margin, as a fraction of `theta_d`.
    /// The one-window index prediction holds the composition fixed, so it
    /// trails the per-class plant by O(t_d^2) during transients; candidates
    /// must clear the threshold by this much for the realized index to stay
    /// below it.
    pub fairness_guard: R,
    /// Surge baseline admission shape coefficients.
    pub b1: R,
    pub b2: R,
    pub b3: R,
}

impl<R: Real> Default for ControllerConfig<R> {
    fn default() -> Self {
        Self {
            p_grid_size: 101,
            nu_grid_size: 21,
            policy: Policy::RobustFair,
            objective: ObjectiveForm::EndOfWindow,
            fairness_guard: R::of(1e-3),
            b1: R::of(-0.129),
            b2: R::of(-0.967),
            b3: R::of(-0.096),
        }
    }
}

impl<R: Real> ControllerConfig<R> {
    pub fn validate(&self) -> Result<(), ModelError> {
        let check = |key: &str, n: usize| {
            if n >= 2 {
                Ok(())
            } else {
                Err(ModelError::InvalidParam {
                    key: key.to_string(),
                    message: format!("grid size must be >= 2, got {n}"),
                })
            }
        };
        check("controller.p_grid_size", self.p_grid_size)?;
        check("controller.nu_grid_size", self.nu_grid_size)?;
        for (key, v) in [
            ("controller.b1", self.b1),
            ("controller.b2", self.b2),
            ("controller.b3", self.b3),
        ] {
            if !v.is_finite() {
                return Err(ModelError::InvalidParam {
                    key: key.to_string(),
                    message: "must be finite".to_string(),
                });
            }
        }
        if !(self.fairness_guard.is_finite()
            && self.fairness_guard >= R::zero()
            && self.fairness_guard < R::one())
        {
            return Err(ModelError::InvalidParam {
                key: "controller.fairness_guard".to_string(),
                message: format!("must be in [0, 1), got {}", self.fairness_guard),
            });
        }
        Ok(())
    }
}

/// One chosen control together with its reported margins and the predicted
/// window revenue. Margins are absent for the surge baseline, which does not
/// evaluate constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision<R> {
    pub p: R,
    pub nu: R,
    /// Admission rate reached by the end of the window under this `nu`.
    pub alpha_applied: R,
    pub feasible: bool,
    pub capacity_margin: Option<R>,
    pub fairness_margin: Option<R>,
    /// Predicted revenue over the decision window.
    pub objective: Option<R>,
}

/// Worst-case margins of one grid candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridEval<R> {
    pub p: R,
    pub nu: R,
    pub capacity_margin: R,
    pub fairness_margin: R,
}

impl<R: Real> GridEval<R> {
    /// Candidate acceptance: the capacity margin must be nonnegative and the
    /// fairness margin must clear the numerical guard.
    pub fn feasible(&self, fairness_floor: R) -> bool {
        self.capacity_margin >= R::zero() && self.fairness_margin >= fairness_floor
    }

    /// Size of the worst constraint violation (zero when feasible).
    pub fn violation(&self) -> R {
        (-self.capacity_margin)
            .max(-self.fairness_margin)
            .max(R::zero())
    }
}

/// Inclusive, evenly spaced grid with exact endpoints.
pub fn linspace<R: Real>(lo: R, hi: R, n: usize) -> Vec<R> {
    assert!(n >= 2, "grid needs at least two points");
    let last = n - 1;
    (0..n)
        .map(|i| {
            if i == last {
                hi
            } else {
                lo + (hi - lo) * R::of(i as f64) / R::of(last as f64)
            }
        })
        .collect()
}

/// Solve the robust decision problem at one epoch by exhaustive search over
/// the `(p, nu)` grid.
///
/// Every candidate is scored by its worst-case capacity and fairness margins
/// over the consistency set (each vertex propagated one window ahead). Among
/// feasible candidates the predicted window revenue under the vertex-mean
/// composition is maximized, with ties broken toward lower price, then
/// smaller |nu|. If no candidate is feasible the least-violating one is
/// returned with `feasible = false`.
pub fn robust_fair_decide<R: Real>(
    obs: &Observation<R>,
    window: &FairnessWindow<R>,
    k_est: R,
    sp: &SystemParams<R>,
    classes: &[ClassParams<R>],
    cfg: &ControllerConfig<R>,
) -> Result<Decision<R>, EmptyConsistencySet> {
    let state = ExtendedState::from_observation(obs);
    let cs = ConsistencySet::from_observation(obs, classes);
    let vertices = cs.vertices()?;
    let w_mean = ConsistencySet::vertex_mean(&vertices);
    let index_coeffs = window.prediction_coeffs(obs.t, sp.t_d);
    let fairness_floor = cfg.fairness_guard * sp.theta_d;

    let p_grid = linspace(sp.p_min, sp.p_max, cfg.p_grid_size);
    let nu_grid = linspace(-sp.nu_max, sp.nu_max, cfg.nu_grid_size);
    let total = p_grid.len() * nu_grid.len();

    let nominal_objective = |ctrl: Control<R>| -> (R, R) {
        let pred = cbf::predict_state(&state, ctrl, &w_mean, k_est, sp, classes, sp.t_d);
        let j = match cfg.objective {
            ObjectiveForm::EndOfWindow => sp.t_d * ctrl.p * pred.state.alpha * pred.state.z,
            ObjectiveForm::StartOfWindow => sp.t_d * ctrl.p * obs.alpha * obs.z,
        };
        (j, pred.state.alpha)
    };

    let evaluate = |idx: usize| -> (GridEval<R>, Option<R>) {
        let ctrl = Control {
            p: p_grid[idx / nu_grid.len()],
            nu: nu_grid[idx % nu_grid.len()],
        };
        let wc = robust::worst_case_margins(
            &state,
            ctrl,
            &vertices,
            index_coeffs,
            k_est,
            sp,
            classes,
            sp.t_d,
        );
        let eval = GridEval {
            p: ctrl.p,
            nu: ctrl.nu,
            capacity_margin: wc.capacity,
            fairness_margin: wc.fairness,
        };
        let objective = eval
            .feasible(fairness_floor)
            .then(|| nominal_objective(ctrl).0);
        (eval, objective)
    };

    // Collected in grid order so the serial selection below is deterministic
    // whether or not the evaluation ran in parallel.
    let evals: Vec<(GridEval<R>, Option<R>)> = if total >= PARALLEL_GRID_THRESHOLD {
        (0..total).into_par_iter().map(evaluate).collect()
    } else {
        (0..total).map(evaluate).collect()
    };

    let best_feasible = evals
        .iter()
        .filter_map(|(eval, obj)| obj.map(|j| (eval, j)))
        .reduce(|best, cand| {
            let (be, bj) = best;
            let (ce, cj) = cand;
            if cj > bj {
                cand
            } else if cj < bj {
                best
            } else if ce.p != be.p {
                if ce.p < be.p {
                    cand
                } else {
                    best
                }
            } else {
                let (ca, ba) = (ce.nu.abs(), be.nu.abs());
                if ca < ba || (ca == ba && ce.nu < be.nu) {
                    cand
                } else {
                    best
                }
            }
        });

    let (chosen, feasible) = match best_feasible {
        Some((eval, _)) => (*eval, true),
        None => (fallback(evals.iter().map(|(e, _)| *e)), false),
    };

    let ctrl = Control {
        p: chosen.p,
        nu: chosen.nu,
    };
    let (objective, alpha_end) = nominal_objective(ctrl);
    Ok(Decision {
        p: chosen.p,
        nu: chosen.nu,
        alpha_applied: alpha_end,
        feasible,
        capacity_margin: Some(chosen.capacity_margin),
        fairness_margin: Some(chosen.fairness_margin),
        objective: Some(objective),
    })
}

/// Pick the least-violating candidate when nothing on the grid is feasible:
/// smallest worst violation, ties toward higher capacity margin, then lower
/// price, then smaller |nu|.
pub fn fallback<R: Real>(evals: impl IntoIterator<Item = GridEval<R>>) -> GridEval<R> {
    evals
        .into_iter()
        .reduce(|best, cand| {
            let (bv, cv) = (best.violation(), cand.violation());
            if cv < bv {
                cand
            } else if cv > bv {
                best
            } else if cand.capacity_margin != best.capacity_margin {
                if cand.capacity_margin > best.capacity_margin {
                    cand
                } else {
                    best
                }
            } else if cand.p != best.p {
                if cand.p < best.p {
                    cand
                } else {
                    best
                }
            } else {
                let (ca, ba) = (cand.nu.abs(), best.nu.abs());
                if ca < ba || (ca == ba && cand.nu < best.nu) {
                    cand
                } else {
                    best
                }
            }
        })
        .expect("fallback requires at least one candidate")
}

/// Surge-pricing baseline: price rises and the admission target falls
/// monotonically with the normalized congestion `rho = min(1, q / q_max)`;
/// `nu` tracks the admission target through the same integrator the robust
/// controller drives, so both policies steer the identical plant.
pub fn surge_decide<R: Real>(
    obs: &Observation<R>,
    sp: &SystemParams<R>,
    cfg: &ControllerConfig<R>,
) -> Decision<R> {
    let rho = (obs.q / sp.q_max).min(R::one());
    let rho2 = rho * rho;
    let rho3 = rho2 * rho;
    let p_raw = R::one() + R::of(9.0) * (R::of(3.0) * rho2 - R::of(2.0) * rho3);
    let p = p_raw.clamp_to(sp.p_min, sp.p_max);
    // Horner form of 1 + b1 rho + b2 rho^2 - b3 rho^3
    let alpha_target = (R::one() + rho * (cfg.b1 + rho * (cfg.b2 - rho * cfg.b3))).clamp01();
    let nu = ((alpha_target - obs.alpha) / sp.t_d).clamp_to(-sp.nu_max, sp.nu_max);
    Decision {
        p,
        nu,
        alpha_applied: (obs.alpha + nu * sp.t_d).clamp01(),
        feasible: true,
        capacity_margin: None,
        fairness_margin: None,
        objective: None,
    }
}
