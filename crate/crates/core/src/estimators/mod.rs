//! State observers driven by the homodyne measurement record.
//!
//! Three families are provided: the quantum filter ([`qf`]), the
//! decorrelated extended Kalman filter ([`ekf`]), and the multiple-model
//! adaptive estimator ([`mmae`]) which runs a bank of either. All of them
//! implement [`Estimator`] and are registered by name in [`REGISTRY`];
//! the harness selects one at runtime from configuration.

pub mod ekf;
pub mod mmae;
pub mod qf;

use thiserror::Error;

use crate::config::{ConfigError, EstimatorConfig};
use crate::model::ModelParams;
use crate::qubit::{BlochVector, DensityMatrix};
use crate::sde::DriftScheme;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("estimate became non-finite at step {0}")]
    NonFinite(usize),
}

/// Snapshot of an observer's current estimate.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub xhat: BlochVector,
    pub rho_hat: DensityMatrix,
    /// Model weights, multiple-model estimators only.
    pub weights: Option<Vec<f64>>,
    /// Trace of the error covariance, Kalman filters only.
    pub trace_p: Option<f64>,
}

impl FilterOutput {
    pub fn from_xhat(xhat: BlochVector) -> Self {
        let rho_hat = DensityMatrix::from_bloch(&xhat)
            .expect("estimator outputs stay inside the Bloch ball");
        Self {
            xhat,
            rho_hat,
            weights: None,
            trace_p: None,
        }
    }
}

/// A causal observer advanced one measurement increment at a time.
pub trait Estimator: Send {
    /// Consume the measurement increment `dy` taken over `[t, t + dt)`
    /// under the control value `omega` that was applied on that interval.
    fn step(&mut self, dy: f64, omega: f64, dt: f64) -> Result<(), EstimatorError>;

    /// Current estimate (valid before the first step: the initial guess).
    fn output(&self) -> FilterOutput;

    /// How often the ball clamp fired on this observer so far.
    fn clamp_count(&self) -> usize {
        0
    }
}

type BuildFn = fn(&EstimatorConfig, &ModelParams, DriftScheme) -> Box<dyn Estimator>;

/// Registry entry: an estimator variant selectable by name.
pub struct EstimatorEntry {
    pub name: &'static str,
    pub summary: &'static str,
    build: BuildFn,
}

/// All estimator variants, keyed by the names accepted in configuration
/// files and on the command line.
pub static REGISTRY: &[EstimatorEntry] = &[
    EstimatorEntry {
        name: "qf",
        summary: "quantum filter on the Bloch-vector dynamics",
        build: |cfg, model, scheme| {
            Box::new(qf::QuantumFilter::new(model.clone(), cfg.xhat0.into(), scheme))
        },
    },
    EstimatorEntry {
        name: "ekf",
        summary: "extended Kalman filter with noise decorrelation and ball projection",
        build: |cfg, model, scheme| {
            Box::new(ekf::ExtendedKalmanFilter::new(
                model.clone(),
                cfg.xhat0.into(),
                ekf::EkfOptions::from_config(cfg),
                scheme,
            ))
        },
    },
    EstimatorEntry {
        name: "mmae-qf",
        summary: "multiple-model adaptive estimator over a quantum-filter bank",
        build: |cfg, model, scheme| {
            Box::new(mmae::MultiModelEstimator::new(
                model,
                cfg,
                mmae::MemberKind::QuantumFilter,
                scheme,
            ))
        },
    },
    EstimatorEntry {
        name: "mmae-ekf",
        summary: "multiple-model adaptive estimator over a Kalman-filter bank",
        build: |cfg, model, scheme| {
            Box::new(mmae::MultiModelEstimator::new(
                model,
                cfg,
                mmae::MemberKind::Kalman,
                scheme,
            ))
        },
    },
];

pub fn names() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.name).collect()
}

/// Build the estimator selected by `cfg.kind`; `"none"` yields `None`.
pub fn build(
    cfg: &EstimatorConfig,
    model: &ModelParams,
    scheme: DriftScheme,
) -> Result<Option<Box<dyn Estimator>>, ConfigError> {
    if cfg.kind == "none" {
        return Ok(None);
    }
    REGISTRY
        .iter()
        .find(|e| e.name == cfg.kind)
        .map(|e| Some((e.build)(cfg, model, scheme)))
        .ok_or_else(|| ConfigError::UnknownEstimator {
            name: cfg.kind.clone(),
            available: names().join(", "),
        })
}
