//! Closed-loop simulator and controllers for fairness-constrained dynamic
//! pricing and admission control of a congestible two-stage queueing system.
//!
//! A population of user classes with heterogeneous price sensitivity waits in
//! per-class demand queues, drops out at a price-dependent rate, and is
//! admitted into a shared service queue with a saturating service rate. The
//! crate provides:
//!
//! - the fluid model evaluations ([`model`]),
//! - sliding-window unfairness and revenue metrics ([`metrics`]),
//! - the second-order control-barrier machinery that turns the service-queue
//!   capacity bound into a control-affine constraint ([`cbf`]),
//! - worst-case margins over every demand composition consistent with the
//!   aggregate observations ([`robust`]),
//! - the receding-horizon robust controller and a surge-pricing baseline
//!   ([`controller`]),
//! - a scenario engine with presets ([`sim`]) and a config/CLI layer
//!   ([`config`], [`cli`]).
//!
//! All numerics are generic over the scalar type via [`scalar::Real`];
//! the `*64` aliases below fix `f64`, which is what the `fairflow` binary
//! uses.

pub mod cbf;
pub mod cli;
pub mod config;
pub mod controller;
pub mod metrics;
pub mod model;
pub mod robust;
pub mod scalar;
pub mod sim;

pub use scalar::Real;

/// `f64` instantiations of the main entry types.
pub type ClassParams64 = model::ClassParams<f64>;
pub type SystemParams64 = model::SystemParams<f64>;
pub type HiddenState64 = model::HiddenState<f64>;
pub type Observation64 = model::Observation<f64>;
pub type Control64 = model::Control<f64>;
pub type FairnessWindow64 = metrics::FairnessWindow<f64>;
pub type ExtendedState64 = cbf::ExtendedState<f64>;
pub type ConsistencySet64 = robust::ConsistencySet<f64>;
pub type ControllerConfig64 = controller::ControllerConfig<f64>;
pub type Decision64 = controller::Decision<f64>;
pub type Scenario64 = sim::Scenario<f64>;
pub type TraceRow64 = sim::TraceRow<f64>;
pub type RunSummary64 = cli::RunSummary<f64>;
