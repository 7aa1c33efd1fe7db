//! Closed-loop scenario engine: demand generation, ground-truth integration
//! of the hidden per-class dynamics, sensor synthesis for the controller,
//! metric recording, and the preset scenario catalogue.
//!
//! One run advances in decision windows of length `t_d`. At each epoch the
//! simulator synthesizes the aggregate observation from the hidden state
//! (lossless aggregation), asks the configured policy for `(p, nu)`, then
//! integrates the hidden dynamics at step `dt` while recording metrics from
//! truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{self, ControllerConfig, Policy};
use crate::metrics::{FairnessWindow, RevenueAccumulator};
use crate::model::{
    aggregate_dropout, hidden_derivative, ClassParams, Control, HiddenState, ModelError,
    Observation, SystemParams,
};
use crate::robust::{state_bounds, ConsistencySet, EmptyConsistencySet, StateBounds};
use crate::scalar::Real;

/// Exogenous arrival-rate generator for one user class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DemandProfile<R> {
    /// Deterministic constant rate.
    Constant { mean: R },
    /// Gaussian draw clipped at zero so arrival rates stay bounded below.
    ClippedGaussian { mean: R, std: R },
    /// Linear interpolation of `(time, mean)` breakpoints, with optional
    /// clipped Gaussian noise on top.
    Piecewise { breakpoints: Vec<(R, R)>, std: R },
}

impl<R: Real> DemandProfile<R> {
    pub fn validate(&self, key: &str) -> Result<(), ModelError> {
        let bad = |message: String| ModelError::InvalidParam {
            key: key.to_string(),
            message,
        };
        match self {
            DemandProfile::Constant { mean } => {
                if !(mean.is_finite() && *mean >= R::zero()) {
                    return Err(bad(format!("mean must be finite and >= 0, got {mean}")));
                }
            }
            DemandProfile::ClippedGaussian { mean, std } => {
                if !(mean.is_finite() && *mean >= R::zero()) {
                    return Err(bad(format!("mean must be finite and >= 0, got {mean}")));
                }
                if !(std.is_finite() && *std >= R::zero()) {
                    return Err(bad(format!("std must be finite and >= 0, got {std}")));
                }
            }
            DemandProfile::Piecewise { breakpoints, std } => {
                if breakpoints.is_empty() {
                    return Err(bad("breakpoints must be non-empty".to_string()));
                }
                if !(std.is_finite() && *std >= R::zero()) {
                    return Err(bad(format!("std must be finite and >= 0, got {std}")));
                }
                let mut last = R::neg_infinity();
                for &(t, m) in breakpoints {
                    if t <= last {
                        return Err(bad(
                            "breakpoint times must be strictly increasing".to_string()
                        ));
                    }
                    if !(m.is_finite() && m >= R::zero()) {
                        return Err(bad(format!(
                            "breakpoint mean must be finite and >= 0, got {m}"
                        )));
                    }
                    last = t;
                }
            }
        }
        Ok(())
    }

    /// Deterministic mean arrival rate at time `t`.
    pub fn mean_at(&self, t: R) -> R {
        match self {
            DemandProfile::Constant { mean } | DemandProfile::ClippedGaussian { mean, .. } => *mean,
            DemandProfile::Piecewise { breakpoints, .. } => {
                let first = breakpoints[0];
                if t <= first.0 {
                    return first.1;
                }
                for pair in breakpoints.windows(2) {
                    let (t0, m0) = pair[0];
                    let (t1, m1) = pair[1];
                    if t <= t1 {
                        return m0 + (m1 - m0) * (t - t0) / (t1 - t0);
                    }
                }
                breakpoints.last().unwrap().1
            }
        }
    }

    /// Draw the arrival rate for the window starting at `t`.
    pub fn sample(&self, t: R, rng: &mut impl Rng) -> R {
        match self {
            DemandProfile::Constant { mean } => *mean,
            DemandProfile::ClippedGaussian { mean, std } => {
                let noise = R::standard_normal(rng);
                (*mean + *std * noise).max(R::zero())
            }
            DemandProfile::Piecewise { std, .. } => {
                let noise = R::standard_normal(rng);
                (self.mean_at(t) + *std * noise).max(R::zero())
            }
        }
    }
}

/// A complete closed-loop experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario<R> {
    pub name: String,
    pub classes: Vec<ClassParams<R>>,
    pub profiles: Vec<DemandProfile<R>>,
    pub sp: SystemParams<R>,
    pub cfg: ControllerConfig<R>,
    pub t_end: R,
    pub seed: u64,
    pub initial: HiddenState<R>,
}

impl<R: Real> Scenario<R> {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.classes.is_empty() {
            return Err(ModelError::InvalidParam {
                key: "classes".to_string(),
                message: "at least one class is required".to_string(),
            });
        }
        for c in &self.classes {
            c.validate()?;
        }
        if self.profiles.len() != self.classes.len() {
            return Err(ModelError::DimensionMismatch {
                what: "profiles",
                expected: self.classes.len(),
                got: self.profiles.len(),
            });
        }
        for (i, p) in self.profiles.iter().enumerate() {
            p.validate(&format!("profile.{}", i + 1))?;
        }
        self.sp.validate()?;
        self.cfg.validate()?;
        if self.initial.x.len() != self.classes.len() {
            return Err(ModelError::DimensionMismatch {
                what: "sim.x0",
                expected: self.classes.len(),
                got: self.initial.x.len(),
            });
        }
        self.initial.validate()?;
        if !(self.t_end.is_finite() && self.t_end > R::zero()) {
            return Err(ModelError::InvalidParam {
                key: "sim.t_end".to_string(),
                message: format!("must be finite and > 0, got {}", self.t_end),
            });
        }
        // wide enough for f32 round-off while still catching genuine
        // misconfiguration at f64
        let rel_tol = R::of(1e-9).max(R::epsilon() * R::of(256.0));
        let epochs = (self.t_end / self.sp.t_d).round();
        if (epochs * self.sp.t_d - self.t_end).abs() > rel_tol * self.t_end.max(R::one()) {
            return Err(ModelError::InvalidParam {
                key: "sim.t_end".to_string(),
                message: format!("must be an integer multiple of t_d = {}", self.sp.t_d),
            });
        }
        let steps = (self.sp.t_d / self.sp.dt).round();
        if (steps * self.sp.dt - self.sp.t_d).abs() > rel_tol * self.sp.t_d {
            return Err(ModelError::InvalidParam {
                key: "system.dt".to_string(),
                message: format!(
                    "t_d = {} must be an integer multiple of dt = {}",
                    self.sp.t_d, self.sp.dt
                ),
            });
        }
        Ok(())
    }

    /// Copy of this scenario with a different policy selected.
    pub fn with_policy(&self, policy: Policy) -> Self {
        let mut scn = self.clone();
        scn.cfg.policy = policy;
        scn
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut scn = self.clone();
        scn.seed = seed;
        scn
    }

    /// Number of integration steps per decision window.
    pub fn steps_per_epoch(&self) -> usize {
        (self.sp.t_d / self.sp.dt).round().as_f64() as usize
    }

    pub fn epochs(&self) -> usize {
        (self.t_end / self.sp.t_d).round().as_f64() as usize
    }

    /// Run the closed loop with the configured policy.
    pub fn run(&self) -> Result<RunResult<R>, SimError<R>> {
        self.validate()?;
        let n = self.classes.len();
        let steps_per = self.steps_per_epoch();
        let epochs = self.epochs();
        let sp = &self.sp;

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut state = self.initial.clone();
        let mut window = FairnessWindow::new(sp.t_i);
        let mut revenue = RevenueAccumulator::default();
        let mut prev_price = sp.p_min;

        let mut trace: Vec<TraceRow<R>> = Vec::with_capacity(epochs * steps_per);
        let mut epoch_records: Vec<EpochRecord<R>> = Vec::with_capacity(epochs);

        for k in 0..epochs {
            let t_k = sp.t_d * R::of(k as f64);
            let arrivals: Vec<R> = self
                .profiles
                .iter()
                .map(|p| p.sample(t_k, &mut rng))
                .collect();
            let k_total: R = arrivals.iter().copied().sum();
            let z = state.z();
            let obs = Observation {
                z,
                q: state.q,
                alpha: state.alpha,
                k: k_total,
                d: aggregate_dropout(&state.x, prev_price, &self.classes),
                p_applied: prev_price,
                t: t_k,
            };
            let w_true: Vec<R> = if z > R::zero() {
                state.x.iter().map(|&xi| xi / z).collect()
            } else {
                vec![R::one() / R::of(n as f64); n]
            };
            let bounds = if n > 2 {
                state_bounds(&ConsistencySet::from_observation(&obs, &self.classes)).ok()
            } else {
                None
            };

            let decision = match self.cfg.policy {
                Policy::RobustFair => {
                    match controller::robust_fair_decide(
                        &obs,
                        &window,
                        k_total,
                        sp,
                        &self.classes,
                        &self.cfg,
                    ) {
                        Ok(d) => d,
                        Err(source) => {
                            return Err(SimError::ControllerFault {
                                t: t_k.as_f64(),
                                source,
                                partial: Box::new(RunResult {
                                    trace,
                                    epochs: epoch_records,
                                    steps_per_epoch: steps_per,
                                }),
                            });
                        }
                    }
                }
                Policy::Surge => controller::surge_decide(&obs, sp, &self.cfg),
            };
            let ctrl = Control {
                p: decision.p,
                nu: decision.nu,
            };
            epoch_records.push(EpochRecord {
                t: t_k,
                observation: obs,
                w_true,
                decision,
                bounds: bounds.clone(),
                index_coeffs: window.prediction_coeffs(t_k, sp.t_d),
            });

            for j in 1..=steps_per {
                let (next, dropout_volume) =
                    rk4_hidden_step(&state, ctrl, &arrivals, sp, &self.classes, sp.dt)
                        .map_err(SimError::Invalid)?;
                let t = t_k + sp.dt * R::of(j as f64);
                // checked before clamping: max(NaN, 0) would otherwise
                // silently turn an exploded component into zero
                if !next.is_finite() {
                    return Err(SimError::NonFinite {
                        t: t.as_f64(),
                        partial: Box::new(RunResult {
                            trace,
                            epochs: epoch_records,
                            steps_per_epoch: steps_per,
                        }),
                    });
                }
                state = next.clamped();
                // The recorded ratio is the step-average dropout rate over
                // the step, so the window integral reproduces the continuous
                // one up to integrator accuracy.
                window
                    .record_sample(t, dropout_volume / sp.dt, k_total)
                    .expect("simulation timestamps are strictly increasing");
                let z_now = state.z();
                revenue.step(ctrl.p, state.alpha, z_now, sp.dt);
                trace.push(TraceRow {
                    t,
                    arrivals: arrivals.clone(),
                    x: state.x.clone(),
                    z: z_now,
                    q: state.q,
                    alpha: state.alpha,
                    p: ctrl.p,
                    nu: ctrl.nu,
                    mu: sp.service_rate(state.q),
                    dropout: aggregate_dropout(&state.x, ctrl.p, &self.classes),
                    unfairness: window.unfairness_index(t),
                    revenue_rate: revenue.last_rate,
                    revenue_total: revenue.total,
                    capacity_margin: decision.capacity_margin,
                    fairness_margin: decision.fairness_margin,
                    feasible: decision.feasible,
                    bounds: bounds.clone(),
                });
            }
            prev_price = ctrl.p;
        }

        Ok(RunResult {
            trace,
            epochs: epoch_records,
            steps_per_epoch: steps_per,
        })
    }
}

/// One RK4 step of the hidden dynamics, also integrating the aggregate
/// dropout volume shed over the step.
fn rk4_hidden_step<R: Real>(
    state: &HiddenState<R>,
    ctrl: Control<R>,
    arrivals: &[R],
    sp: &SystemParams<R>,
    classes: &[ClassParams<R>],
    dt: R,
) -> Result<(HiddenState<R>, R), ModelError> {
    let two = R::of(2.0);
    let six = R::of(6.0);
    let half = dt / two;

    let eval = |s: &HiddenState<R>| -> Result<(crate::model::HiddenDerivative<R>, R), ModelError> {
        let d = hidden_derivative(s, ctrl, arrivals, sp, classes)?;
        let shed = aggregate_dropout(&s.x, ctrl.p, classes);
        Ok((d, shed))
    };
    let advance = |s: &HiddenState<R>, d: &crate::model::HiddenDerivative<R>, h: R| HiddenState {
        x: s.x
            .iter()
            .zip(&d.x_dot)
            .map(|(&xi, &dx)| xi + h * dx)
            .collect(),
        q: s.q + h * d.q_dot,
        alpha: s.alpha + h * d.alpha_dot,
    };

    let (k1, v1) = eval(state)?;
    let s2 = advance(state, &k1, half);
    let (k2, v2) = eval(&s2)?;
    let s3 = advance(state, &k2, half);
    let (k3, v3) = eval(&s3)?;
    let s4 = advance(state, &k3, dt);
    let (k4, v4) = eval(&s4)?;

    let n = state.x.len();
    let x = (0..n)
        .map(|i| {
            state.x[i]
                + dt * (k1.x_dot[i] + two * k2.x_dot[i] + two * k3.x_dot[i] + k4.x_dot[i]) / six
        })
        .collect();
    let q = state.q + dt * (k1.q_dot + two * k2.q_dot + two * k3.q_dot + k4.q_dot) / six;
    let alpha = state.alpha
        + dt * (k1.alpha_dot + two * k2.alpha_dot + two * k3.alpha_dot + k4.alpha_dot) / six;
    let volume = dt * (v1 + two * v2 + two * v3 + v4) / six;
    Ok((HiddenState { x, q, alpha }, volume.max(R::zero())))
}

/// One RK4 step of the hidden dynamics followed by the state clamps.
pub fn integrate_step<R: Real>(
    state: &HiddenState<R>,
    ctrl: Control<R>,
    arrivals: &[R],
    sp: &SystemParams<R>,
    classes: &[ClassParams<R>],
    dt: R,
) -> Result<HiddenState<R>, ModelError> {
    let (next, _) = rk4_hidden_step(state, ctrl, arrivals, sp, classes, dt)?;
    Ok(next.clamped())
}

/// Everything recorded at one integration step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow<R> {
    pub t: R,
    /// Per-class arrival rates in force over the surrounding window.
    pub arrivals: Vec<R>,
    /// True per-class demand queue lengths.
    pub x: Vec<R>,
    pub z: R,
    pub q: R,
    pub alpha: R,
    pub p: R,
    pub nu: R,
    pub mu: R,
    /// Aggregate instantaneous dropout rate at the current price.
    pub dropout: R,
    pub unfairness: R,
    pub revenue_rate: R,
    pub revenue_total: R,
    pub capacity_margin: Option<R>,
    pub fairness_margin: Option<R>,
    pub feasible: bool,
    /// Worst-case per-class queue estimates, recorded when the composition
    /// is not identifiable (more than two classes).
    pub bounds: Option<Vec<StateBounds<R>>>,
}

/// Decision-epoch diagnostics kept alongside the step-level trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord<R> {
    pub t: R,
    pub observation: Observation<R>,
    /// True composition x / z (uniform when the demand queue is empty).
    pub w_true: Vec<R>,
    pub decision: crate::controller::Decision<R>,
    pub bounds: Option<Vec<StateBounds<R>>>,
    /// Fairness-window prediction coefficients at this epoch, as consumed by
    /// the controller (see [`FairnessWindow::prediction_coeffs`]).
    pub index_coeffs: (R, R),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult<R> {
    pub trace: Vec<TraceRow<R>>,
    pub epochs: Vec<EpochRecord<R>>,
    pub steps_per_epoch: usize,
}

impl<R: Real> RunResult<R> {
    /// Number of epochs where the robust controller had to fall back to the
    /// least-violating candidate.
    pub fn fallback_count(&self) -> usize {
        self.epochs.iter().filter(|e| !e.decision.feasible).count()
    }
}

#[derive(Debug, Error)]
pub enum SimError<R: Real> {
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("controller fault at t = {t}: {source}")]
    ControllerFault {
        t: f64,
        source: EmptyConsistencySet,
        partial: Box<RunResult<R>>,
    },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64, partial: Box<RunResult<R>> },
}

// ---------------------------------------------------------------------------
// Preset catalogue
// ---------------------------------------------------------------------------

/// A named experiment: either a single scenario or a one-parameter sweep.
#[derive(Debug, Clone)]
pub enum PresetEntry<R> {
    Single {
        name: &'static str,
        description: &'static str,
        scenario: Scenario<R>,
    },
    Sweep {
        name: &'static str,
        description: &'static str,
        param: &'static str,
        points: Vec<(R, Scenario<R>)>,
    },
}

impl<R: Real> PresetEntry<R> {
    pub fn name(&self) -> &'static str {
        match self {
            PresetEntry::Single { name, .. } | PresetEntry::Sweep { name, .. } => name,
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            PresetEntry::Single { description, .. } | PresetEntry::Sweep { description, .. } => {
                description
            }
        }
    }
}

pub const DEFAULT_SEED: u64 = 42;

fn elastic_inelastic<R: Real>() -> Vec<ClassParams<R>> {
    vec![
        ClassParams {
            r1: R::of(0.05),
            r2: R::zero(),
        },
        ClassParams {
            r1: R::zero(),
            r2: R::zero(),
        },
    ]
}

fn base_scenario<R: Real>(
    name: &str,
    classes: Vec<ClassParams<R>>,
    profiles: Vec<DemandProfile<R>>,
    t_end: f64,
) -> Scenario<R> {
    let n = classes.len();
    Scenario {
        name: name.to_string(),
        classes,
        profiles,
        sp: SystemParams::default(),
        cfg: ControllerConfig::default(),
        t_end: R::of(t_end),
        seed: DEFAULT_SEED,
        initial: HiddenState::new(vec![R::zero(); n], R::zero(), R::one()),
    }
}

// Demand variability: a quarter of the mean keeps the light regime genuinely
// light (neither policy pressed against the fairness bound) while the heavy
// regime still stresses both constraints.
fn gaussian<R: Real>(mean: f64) -> DemandProfile<R> {
    DemandProfile::ClippedGaussian {
        mean: R::of(mean),
        std: R::of(0.25 * mean),
    }
}

fn piecewise<R: Real>(points: &[(f64, f64)], std: f64) -> DemandProfile<R> {
    DemandProfile::Piecewise {
        breakpoints: points.iter().map(|&(t, m)| (R::of(t), R::of(m))).collect(),
        std: R::of(std),
    }
}

fn light<R: Real>() -> Scenario<R> {
    base_scenario(
        "light",
        elastic_inelastic(),
        vec![gaussian(4.0), gaussian(2.0)],
        250.0,
    )
}

fn heavy<R: Real>() -> Scenario<R> {
    base_scenario(
        "heavy",
        elastic_inelastic(),
        vec![gaussian(7.0), gaussian(4.0)],
        250.0,
    )
}

fn dynamic<R: Real>() -> Scenario<R> {
    base_scenario(
        "dynamic",
        elastic_inelastic(),
        vec![
            piecewise(
                &[
                    (0.0, 4.0),
                    (59.5, 4.0),
                    (60.0, 7.0),
                    (179.5, 7.0),
                    (180.0, 4.0),
                ],
                0.5,
            ),
            piecewise(
                &[
                    (0.0, 2.0),
                    (59.5, 2.0),
                    (60.0, 8.0),
                    (100.0, 8.0),
                    (140.0, 2.0),
                ],
                0.5,
            ),
        ],
        250.0,
    )
}

fn three_group<R: Real>() -> Scenario<R> {
    base_scenario(
        "three_group",
        vec![
            ClassParams {
                r1: R::of(0.05),
                r2: R::zero(),
            },
            ClassParams {
                r1: R::of(0.02),
                r2: R::zero(),
            },
            ClassParams {
                r1: R::zero(),
                r2: R::zero(),
            },
        ],
        vec![
            gaussian(4.0),
            piecewise(
                &[
                    (0.0, 2.0),
                    (59.5, 2.0),
                    (60.0, 8.0),
                    (195.0, 8.0),
                    (205.0, 2.0),
                ],
                0.5,
            ),
            piecewise(
                &[
                    (0.0, 2.0),
                    (149.5, 2.0),
                    (150.0, 8.0),
                    (195.0, 8.0),
                    (205.0, 2.0),
                ],
                0.5,
            ),
        ],
        250.0,
    )
}

fn theta_sweep<R: Real>() -> Vec<(R, Scenario<R>)> {
    [0.2, 0.4, 0.6]
        .into_iter()
        .map(|theta| {
            let mut scn = heavy::<R>();
            scn.name = format!("theta_sweep@theta_d={theta}");
            scn.sp.theta_d = R::of(theta);
            (R::of(theta), scn)
        })
        .collect()
}

fn k1_sweep<R: Real>() -> Vec<(R, Scenario<R>)> {
    (3..=10)
        .map(|k1| {
            let mut scn = base_scenario(
                "k1_sweep",
                elastic_inelastic(),
                vec![
                    DemandProfile::Constant {
                        mean: R::of(k1 as f64),
                    },
                    DemandProfile::Constant { mean: R::of(2.0) },
                ],
                100.0,
            );
            scn.name = format!("k1_sweep@k1={k1}");
            (R::of(k1 as f64), scn)
        })
        .collect()
}

/// The scenario catalogue mirroring the experiment families: light, heavy,
/// and time-varying two-group demand, the fairness-threshold and elastic-
/// demand sweeps, and the three-group setting with unidentifiable
/// composition.
pub fn presets<R: Real>() -> Vec<PresetEntry<R>> {
    vec![
        PresetEntry::Single {
            name: "light",
            description: "two groups, light Gaussian demand (means 4 and 2)",
            scenario: light(),
        },
        PresetEntry::Single {
            name: "heavy",
            description: "two groups, heavy Gaussian demand (means 7 and 4)",
            scenario: heavy(),
        },
        PresetEntry::Single {
            name: "dynamic",
            description: "two groups with a demand surge at t=60 and slow decay",
            scenario: dynamic(),
        },
        PresetEntry::Sweep {
            name: "theta_sweep",
            description: "heavy demand across unfairness thresholds 0.2 / 0.4 / 0.6",
            param: "theta_d",
            points: theta_sweep(),
        },
        PresetEntry::Sweep {
            name: "k1_sweep",
            description: "elastic demand swept from 3 to 10 with inelastic demand fixed at 2",
            param: "k1",
            points: k1_sweep(),
        },
        PresetEntry::Single {
            name: "three_group",
            description: "three groups with unobservable composition and staggered surges",
            scenario: three_group(),
        },
    ]
}

pub fn find_preset<R: Real>(name: &str) -> Option<PresetEntry<R>> {
    presets().into_iter().find(|p| p.name() == name)
}
