//! Quantum filter: the measurement-conditioned state equation itself,
//! driven by the innovation dy - h(xhat) dt in place of the Wiener
//! increment.

use crate::model::ModelParams;
use crate::qubit::{bloch_project, BlochVector};
use crate::sde::{drift_advance, DriftScheme};

use super::{Estimator, EstimatorError, FilterOutput};

/// One filter step: xhat' = clamp(xhat + f dt + g(xhat) (dy - h(xhat) dt)).
///
/// The clamp is the ball projection and fires only when the discretized
/// step leaves the ball; the continuous filter never does. Returns the new
/// estimate and whether the clamp was active.
pub fn qf_step(
    p: &ModelParams,
    xhat: &BlochVector,
    dy: f64,
    omega: f64,
    dt: f64,
    scheme: DriftScheme,
) -> Result<(BlochVector, bool), crate::qubit::StateError> {
    let innovation = dy - p.output(xhat) * dt;
    let proposed = drift_advance(p, xhat, omega, dt, scheme) + p.diffusion(xhat) * innovation;
    let projected = bloch_project(&proposed)?;
    Ok((projected, proposed.norm() > 1.0))
}

pub struct QuantumFilter {
    model: ModelParams,
    xhat: BlochVector,
    scheme: DriftScheme,
    clamps: usize,
    steps: usize,
}

impl QuantumFilter {
    pub fn new(model: ModelParams, xhat0: BlochVector, scheme: DriftScheme) -> Self {
        Self {
            model,
            xhat: xhat0,
            scheme,
            clamps: 0,
            steps: 0,
        }
    }

    pub fn estimate(&self) -> &BlochVector {
        &self.xhat
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }
}

impl Estimator for QuantumFilter {
    fn step(&mut self, dy: f64, omega: f64, dt: f64) -> Result<(), EstimatorError> {
        let (next, clamped) = qf_step(&self.model, &self.xhat, dy, omega, dt, self.scheme)
            .map_err(|_| EstimatorError::NonFinite(self.steps))?;
        if clamped {
            self.clamps += 1;
            log::debug!("quantum filter clamp at step {}", self.steps);
        }
        self.xhat = next;
        self.steps += 1;
        Ok(())
    }

    fn output(&self) -> FilterOutput {
        FilterOutput::from_xhat(self.xhat)
    }

    fn clamp_count(&self) -> usize {
        self.clamps
    }
}
