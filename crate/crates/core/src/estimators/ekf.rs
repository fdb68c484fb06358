//! Extended Kalman filter for the monitored qubit.
//!
//! The raw dynamics share their Wiener process with the output equation,
//! so the filter runs on the decorrelated form: the drift is replaced by
//! fbar = f + sigma_bar g (dy/dt - h), whose remaining process noise
//! dWbar = dW - sigma_bar dV is uncorrelated with the measurement noise.
//! Propagation integrates fbar and the covariance Riccati equation;
//! the update applies the Kalman gain and projects the estimate back onto
//! the Bloch ball.
//!
//! Two documented model readings are switchable:
//! * `paper_literal_qw`: effective process-noise variance 1 + sigma_bar
//!   instead of the value 1 - sigma_bar that follows from the definition
//!   of dWbar.
//! * `paper_literal_g`: covariance diffusion built from the Jacobian of g
//!   instead of the outer product g g^T.

use nalgebra::{Matrix3, Vector3};

use crate::config::EstimatorConfig;
use crate::model::ModelParams;
use crate::qubit::{bloch_project, BlochVector};
use crate::sde::{drift_advance, DriftScheme};

use super::{Estimator, EstimatorError, FilterOutput};

/// Filter configuration knobs.
#[derive(Debug, Clone, Copy)]
pub struct EkfOptions {
    /// Initial covariance P(0) = p0_scale * I.
    pub p0_scale: f64,
    pub paper_literal_qw: bool,
    pub paper_literal_g: bool,
}

impl Default for EkfOptions {
    fn default() -> Self {
        Self {
            p0_scale: 1.0,
            paper_literal_qw: false,
            paper_literal_g: false,
        }
    }
}

impl EkfOptions {
    pub fn from_config(cfg: &EstimatorConfig) -> Self {
        Self {
            p0_scale: cfg.p0_scale,
            paper_literal_qw: cfg.paper_literal_qw,
            paper_literal_g: cfg.paper_literal_g,
        }
    }
}

/// Estimate and error covariance.
#[derive(Debug, Clone, Copy)]
pub struct EkfState {
    pub xhat: BlochVector,
    pub cov: Matrix3<f64>,
}

impl EkfState {
    pub fn new(xhat0: BlochVector, p0_scale: f64) -> Self {
        Self {
            xhat: xhat0,
            cov: Matrix3::identity() * p0_scale,
        }
    }

    pub fn trace_p(&self) -> f64 {
        self.cov.trace()
    }
}

/// Effective process-noise variance rate of dWbar.
///
/// Direct computation gives E[dWbar^2] = (1 - sigma_bar) dt; the literal
/// flag restores the stated 1 + sigma_bar.
pub fn process_noise_variance(p: &ModelParams, paper_literal_qw: bool) -> f64 {
    if paper_literal_qw {
        1.0 + p.sigma_bar()
    } else {
        1.0 - p.sigma_bar()
    }
}

/// Decorrelated drift increment fbar dt = f dt + sigma_bar g (dy - h dt),
/// with the deterministic part advanced under `scheme`.
pub fn decorrelated_drift(
    p: &ModelParams,
    x: &BlochVector,
    omega: f64,
    dy: f64,
    dt: f64,
    scheme: DriftScheme,
) -> Vector3<f64> {
    let flow = match scheme {
        DriftScheme::Euler => p.drift(x, omega) * dt,
        DriftScheme::SplitRk4 => drift_advance(p, x, omega, dt, scheme) - x,
    };
    flow + p.sigma_bar() * (dy - p.output(x) * dt) * p.diffusion(x)
}

/// Rate form of the decorrelated drift with the measured rate ydot frozen:
/// fbar(x) = f(x, omega) + sigma_bar (ydot - h(x)) g(x). This is the field
/// the covariance linearization differentiates.
pub fn decorrelated_field(
    p: &ModelParams,
    x: &BlochVector,
    omega: f64,
    ydot: f64,
) -> Vector3<f64> {
    p.drift(x, omega) + p.sigma_bar() * (ydot - p.output(x)) * p.diffusion(x)
}

/// Analytic Jacobian of [`decorrelated_field`] in x:
///   A = df/dx + sigma_bar (ydot - h) dg/dx - sigma_bar g grad(h)^T.
pub fn jacobian(p: &ModelParams, x: &BlochVector, omega: f64, ydot: f64) -> Matrix3<f64> {
    let sigma_bar = p.sigma_bar();
    let g = p.diffusion(x);
    let c = p.output_matrix();
    p.drift_jacobian(omega) + sigma_bar * (ydot - p.output(x)) * p.diffusion_jacobian(x)
        - sigma_bar * g * c.transpose()
}

/// Propagation: a-priori estimate through the decorrelated dynamics and
/// covariance through the linearized Riccati term
/// P- = P + (A P + P A^T + Q_eff) dt, symmetrized.
pub fn ekf_propagate(
    p: &ModelParams,
    opts: &EkfOptions,
    state: &EkfState,
    dy: f64,
    omega: f64,
    dt: f64,
    scheme: DriftScheme,
) -> EkfState {
    let xhat_minus = state.xhat + decorrelated_drift(p, &state.xhat, omega, dy, dt, scheme);

    let a = jacobian(p, &state.xhat, omega, dy / dt);
    let qw = process_noise_variance(p, opts.paper_literal_qw);
    let q_eff = if opts.paper_literal_g {
        let jg = p.diffusion_jacobian(&state.xhat);
        qw * jg * jg.transpose()
    } else {
        let g = p.diffusion(&state.xhat);
        qw * g * g.transpose()
    };
    let cov = state.cov + (a * state.cov + state.cov * a.transpose() + q_eff) * dt;
    EkfState {
        xhat: xhat_minus,
        cov: symmetrize(&cov),
    }
}

/// Update: Kalman gain K = P- C / sigma_v^2, estimate correction through
/// the ball projection, and covariance contraction
/// P = P- - (P- C C^T P- / sigma_v^2) dt, symmetrized and clipped to PSD.
/// Returns the posterior state and whether the projection was active.
pub fn ekf_update(
    p: &ModelParams,
    state: &EkfState,
    dy: f64,
    dt: f64,
) -> Result<(EkfState, bool), crate::qubit::StateError> {
    let c = p.output_matrix();
    let sigma_v2 = p.sigma_v2();
    let gain = state.cov * c / sigma_v2;
    let innovation = dy - p.output(&state.xhat) * dt;
    let proposed = state.xhat + gain * innovation;
    let xhat = bloch_project(&proposed)?;
    let pc = state.cov * c;
    let cov = state.cov - (pc * pc.transpose() / sigma_v2) * dt;
    Ok((
        EkfState {
            xhat,
            cov: clip_psd(&symmetrize(&cov)),
        },
        proposed.norm() > 1.0,
    ))
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Zero out negative eigenvalues (discretization can push the update
/// slightly below PSD).
fn clip_psd(m: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return *m;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    eig.eigenvectors * Matrix3::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

pub struct ExtendedKalmanFilter {
    model: ModelParams,
    opts: EkfOptions,
    state: EkfState,
    scheme: DriftScheme,
    clamps: usize,
    steps: usize,
}

impl ExtendedKalmanFilter {
    pub fn new(
        model: ModelParams,
        xhat0: BlochVector,
        opts: EkfOptions,
        scheme: DriftScheme,
    ) -> Self {
        let state = EkfState::new(xhat0, opts.p0_scale);
        Self {
            model,
            opts,
            state,
            scheme,
            clamps: 0,
            steps: 0,
        }
    }

    pub fn state(&self) -> &EkfState {
        &self.state
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }
}

impl Estimator for ExtendedKalmanFilter {
    fn step(&mut self, dy: f64, omega: f64, dt: f64) -> Result<(), EstimatorError> {
        let prior = ekf_propagate(
            &self.model,
            &self.opts,
            &self.state,
            dy,
            omega,
            dt,
            self.scheme,
        );
        let (posterior, clamped) = ekf_update(&self.model, &prior, dy, dt)
            .map_err(|_| EstimatorError::NonFinite(self.steps))?;
        if !posterior.cov.iter().all(|v| v.is_finite()) {
            return Err(EstimatorError::NonFinite(self.steps));
        }
        if clamped {
            self.clamps += 1;
        }
        self.state = posterior;
        self.steps += 1;
        Ok(())
    }

    fn output(&self) -> FilterOutput {
        let mut out = FilterOutput::from_xhat(self.state.xhat);
        out.trace_p = Some(self.state.trace_p());
        out
    }

    fn clamp_count(&self) -> usize {
        self.clamps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn reference_model() -> ModelParams {
        ModelParams::leaky_cavity(10.0, 1.0, 0.8, 0.1, 50.0).unwrap()
    }

    fn ball_vec(rng: &mut StdRng) -> BlochVector {
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() <= 1.0 {
                return v;
            }
        }
    }

    #[test]
    fn decorrelated_drift_limits() {
        let p = reference_model();
        let x = Vector3::new(0.2, -0.1, 0.4);
        let dt = 1e-3;

        // dy = h dt cancels the correction exactly.
        let dy = p.output(&x) * dt;
        let d = decorrelated_drift(&p, &x, 3.0, dy, dt, DriftScheme::Euler);
        let f_dt = p.drift(&x, 3.0) * dt;
        assert!((d - f_dt).norm() < 1e-18);

        // Huge analyzer noise drives sigma_bar to zero.
        let deaf = ModelParams::leaky_cavity(10.0, 1.0, 0.8, 1e12, 50.0).unwrap();
        let d = decorrelated_drift(&deaf, &x, 3.0, 0.5, dt, DriftScheme::Euler);
        let f_dt = deaf.drift(&x, 3.0) * dt;
        assert!((d - f_dt).norm() < 1e-9);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = reference_model();
        let mut rng = StdRng::seed_from_u64(17);
        let h = 1e-6;
        for _ in 0..100 {
            let x = ball_vec(&mut rng).scale(0.9);
            let omega = rng.gen_range(-60.0..60.0);
            let ydot = rng.gen_range(-30.0..30.0);
            let a = jacobian(&p, &x, omega, ydot);
            for j in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let col = (decorrelated_field(&p, &xp, omega, ydot)
                    - decorrelated_field(&p, &xm, omega, ydot))
                    / (2.0 * h);
                for i in 0..3 {
                    let diff = (a[(i, j)] - col[i]).abs();
                    assert!(
                        diff <= 1e-6 * (1.0 + a[(i, j)].abs()),
                        "entry ({i},{j}): analytic {} fd {}",
                        a[(i, j)],
                        col[i]
                    );
                }
            }
        }
    }

    #[test]
    fn jacobian_without_backaction_is_constant_larmor_generator() {
        // No dissipation and no measurement: the field is the bare Larmor
        // rotation and its Jacobian is the constant skew generator.
        let p = ModelParams::leaky_cavity(0.0, 0.0, 0.0, 0.1, 50.0).unwrap();
        let a = jacobian(&p, &Vector3::new(0.3, -0.2, 0.5), 0.0, 12.0);
        let b = jacobian(&p, &Vector3::zeros(), 0.0, -4.0);
        assert!((a - b).norm() < 1e-14);
        let expected = Matrix3::new(0.0, -50.0, 0.0, 50.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!((a - expected).norm() < 1e-12);
    }

    #[test]
    fn skew_generator_preserves_covariance_trace() {
        // No dissipation, no backaction: A is skew, Q vanishes, and one
        // propagation step leaves Tr P unchanged.
        let p = ModelParams::leaky_cavity(0.0, 0.0, 0.0, 0.1, 50.0).unwrap();
        let opts = EkfOptions::default();
        let state = EkfState::new(Vector3::new(0.4, 0.1, 0.2), 1.0);
        let next = ekf_propagate(&p, &opts, &state, 0.0, 0.0, 1e-3, DriftScheme::Euler);
        assert_abs_diff_eq!(next.trace_p(), state.trace_p(), epsilon = 1e-12);
    }

    #[test]
    fn update_with_zero_innovation_keeps_state_contracts_covariance() {
        let p = reference_model();
        let state = EkfState::new(Vector3::new(0.1, 0.2, 0.3), 1.0);
        let dt = 1e-3;
        let dy = p.output(&state.xhat) * dt;
        let (next, clamped) = ekf_update(&p, &state, dy, dt).unwrap();
        assert!(!clamped);
        assert_eq!(next.xhat, state.xhat);
        assert!(next.trace_p() < state.trace_p());
    }

    #[test]
    fn measurement_row_reference_value() {
        let p = ModelParams::leaky_cavity(10.0, 1.0, 0.8, 0.0, 50.0).unwrap();
        let c = p.output_matrix();
        assert_abs_diff_eq!(c[0], 0.8f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn oversized_correction_is_projected_to_ball() {
        let p = reference_model();
        let mut state = EkfState::new(Vector3::new(0.0, 0.0, 0.5), 1.0);
        // Inflate the covariance so the gain produces a huge correction.
        state.cov = Matrix3::identity() * 1e4;
        let (next, clamped) = ekf_update(&p, &state, 5.0, 1e-3).unwrap();
        assert!(clamped);
        assert_abs_diff_eq!(next.xhat.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn covariance_stays_symmetric_and_near_psd() {
        let p = reference_model();
        let mut filter = ExtendedKalmanFilter::new(
            p.clone(),
            Vector3::new(1.0, 0.0, 0.0),
            EkfOptions::default(),
            DriftScheme::SplitRk4,
        );
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..2000 {
            let dy = rng.gen_range(-0.1..0.1);
            filter.step(dy, 30.0, 1e-3).unwrap();
            let cov = filter.state().cov;
            assert!((cov - cov.transpose()).norm() < 1e-14);
            let min_eig = cov.symmetric_eigen().eigenvalues.min();
            assert!(min_eig >= -1e-10, "min eigenvalue {min_eig}");
            assert!(filter.state().trace_p().is_finite());
        }
    }

    #[test]
    fn process_noise_variance_modes() {
        let p = reference_model(); // sigma_z^2 = 0.1, sigma_bar = 1/1.1
        let sb = p.sigma_bar();
        assert_abs_diff_eq!(process_noise_variance(&p, false), 1.0 - sb, epsilon = 1e-15);
        assert_abs_diff_eq!(process_noise_variance(&p, true), 1.0 + sb, epsilon = 1e-15);
    }

    #[test]
    fn literal_model_readings_still_track() {
        use crate::sde::{simulate_trajectory, NoiseSpec};
        let p = reference_model();
        let spec = NoiseSpec::new(12, 1e-3, 1.0).unwrap();
        let truth = simulate_trajectory(
            &p,
            &spec,
            &Vector3::new(0.0, 1.0, 0.0),
            DriftScheme::SplitRk4,
            |_, _| 30.0,
        )
        .unwrap();
        for (qw, g) in [(true, false), (false, true), (true, true)] {
            let opts = EkfOptions {
                p0_scale: 1.0,
                paper_literal_qw: qw,
                paper_literal_g: g,
            };
            let mut filter = ExtendedKalmanFilter::new(
                p.clone(),
                Vector3::new(1.0, 0.0, 0.0),
                opts,
                DriftScheme::SplitRk4,
            );
            for (i, &dy) in truth.measurements.iter().enumerate() {
                filter.step(dy, truth.controls[i], spec.dt).unwrap();
            }
            let xhat = filter.state().xhat;
            assert!(xhat.norm() <= 1.0 + 1e-12);
            let err = (xhat - truth.states[1000]).norm();
            assert!(err < 0.5, "literal mode (qw={qw}, g={g}) diverged: {err}");
            assert!(filter.state().trace_p().is_finite());
        }
    }

    #[test]
    fn trace_p_decreases_from_identity_in_reference_run() {
        use crate::sde::{simulate_trajectory, NoiseSpec};
        let p = reference_model();
        let spec = NoiseSpec::new(31, 1e-3, 1.0).unwrap();
        let truth = simulate_trajectory(
            &p,
            &spec,
            &Vector3::new(0.0, 1.0, 0.0),
            DriftScheme::SplitRk4,
            |_, _| 30.0,
        )
        .unwrap();
        let mut filter = ExtendedKalmanFilter::new(
            p.clone(),
            Vector3::new(1.0, 0.0, 0.0),
            EkfOptions::default(),
            DriftScheme::SplitRk4,
        );
        assert_abs_diff_eq!(filter.state().trace_p(), 3.0, epsilon = 1e-15);
        for (i, &dy) in truth.measurements.iter().enumerate() {
            filter.step(dy, truth.controls[i], spec.dt).unwrap();
        }
        assert!(filter.state().trace_p() < 3.0);
        assert!(filter.state().trace_p() > 0.0);
    }
}
