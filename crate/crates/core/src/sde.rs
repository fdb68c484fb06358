//! Stochastic trajectory integration and deterministic references.
//!
//! The truth trajectory follows dx = f(x, omega) dt + g(x) dW with
//! measurement record dy = h(x) dt + dW + dZ. Two drift discretizations
//! are available:
//!
//! * [`DriftScheme::SplitRk4`] (default): the deterministic flow is
//!   advanced with one classical Runge-Kutta step and the noise is added
//!   Euler-Maruyama style at the pre-step state. Same strong/weak order
//!   as plain Euler-Maruyama, but the ensemble mean then reproduces the
//!   deterministic reference without the O(omega^2 dt) anti-damping that
//!   Euler exhibits at the stiff rotation rates of the reference model.
//! * [`DriftScheme::Euler`]: literal Euler-Maruyama.
//!
//! Per-trajectory noise comes from a counter-style stream keyed by
//! (master seed, trajectory index); each step consumes exactly one
//! Box-Muller pair, so records are reproducible under any scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::ModelParams;
use crate::qubit::{bloch_project, BlochVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("noise spec invalid: {0}")]
    BadNoiseSpec(String),
    #[error("control policy returned a non-finite value at step {step} (t = {t})")]
    NonFiniteControl { step: usize, t: f64 },
    #[error("state became non-finite at step {step} (t = {t})")]
    NonFiniteState { step: usize, t: f64 },
}

/// Drift discretization used by the stochastic stepper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum DriftScheme {
    #[serde(rename = "euler")]
    Euler,
    #[default]
    #[serde(rename = "rk4-split")]
    SplitRk4,
}

/// Time grid and noise seed for one simulation: uniform step `dt` up to
/// horizon `t_final`. The same seed always yields the same dW, dZ streams.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub seed: u64,
    pub dt: f64,
    pub t_final: f64,
}

impl NoiseSpec {
    pub fn new(seed: u64, dt: f64, t_final: f64) -> Result<Self, SimError> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(SimError::BadNoiseSpec(format!("dt = {dt} must be > 0")));
        }
        if !t_final.is_finite() || t_final < dt {
            return Err(SimError::BadNoiseSpec(format!(
                "t_final = {t_final} must be >= dt = {dt}"
            )));
        }
        Ok(Self { seed, dt, t_final })
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// One standard-normal pair from two raw 64-bit draws (Box-Muller).
/// Fixed consumption per call keeps the stream position a pure function
/// of the step index.
pub fn gaussian_pair(rng: &mut impl RngCore) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * SCALE; // in (0, 1]
    let u2 = (rng.next_u64() >> 11) as f64 * SCALE; // in [0, 1)
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Per-trajectory Wiener increment source: dW ~ N(0, dt) for the
/// backaction and dZ ~ N(0, sigma_z^2 dt) for the analyzer noise.
pub struct TrajectoryNoise {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
    sigma_z: f64,
}

impl TrajectoryNoise {
    pub fn new(master_seed: u64, trajectory_index: u64, dt: f64, analyzer_variance: f64) -> Self {
        let seed = splitmix64(master_seed ^ splitmix64(trajectory_index.wrapping_add(1)));
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            sqrt_dt: dt.sqrt(),
            sigma_z: analyzer_variance.sqrt(),
        }
    }

    /// Next (dW, dZ) pair.
    pub fn next_pair(&mut self) -> (f64, f64) {
        let (z1, z2) = gaussian_pair(&mut self.rng);
        (z1 * self.sqrt_dt, z2 * self.sigma_z * self.sqrt_dt)
    }
}

/// One classical RK4 step of the deterministic field f(., omega), with the
/// control held constant across the step.
pub fn rk4_advance(p: &ModelParams, x: &BlochVector, omega: f64, dt: f64) -> BlochVector {
    let k1 = p.drift(x, omega);
    let k2 = p.drift(&(x + 0.5 * dt * k1), omega);
    let k3 = p.drift(&(x + 0.5 * dt * k2), omega);
    let k4 = p.drift(&(x + dt * k3), omega);
    x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Deterministic part of one step under the given scheme.
pub fn drift_advance(
    p: &ModelParams,
    x: &BlochVector,
    omega: f64,
    dt: f64,
    scheme: DriftScheme,
) -> BlochVector {
    match scheme {
        DriftScheme::Euler => x + p.drift(x, omega) * dt,
        DriftScheme::SplitRk4 => rk4_advance(p, x, omega, dt),
    }
}

/// Literal Euler-Maruyama step with Bloch-ball projection:
/// Proj(x + f dt + g dW). Returns the new state and whether the
/// projection was active.
pub fn em_step(
    p: &ModelParams,
    x: &BlochVector,
    omega: f64,
    dw: f64,
    dt: f64,
) -> Result<(BlochVector, bool), crate::qubit::StateError> {
    sde_step(p, x, omega, dw, dt, DriftScheme::Euler)
}

/// Scheme-aware stochastic step: drift advance plus g(x) dW, projected.
pub fn sde_step(
    p: &ModelParams,
    x: &BlochVector,
    omega: f64,
    dw: f64,
    dt: f64,
    scheme: DriftScheme,
) -> Result<(BlochVector, bool), crate::qubit::StateError> {
    let proposed = drift_advance(p, x, omega, dt, scheme) + p.diffusion(x) * dw;
    let projected = bloch_project(&proposed)?;
    Ok((projected, proposed.norm() > 1.0))
}

/// Full synchronized record of one stochastic trajectory: states on the
/// uniform grid, per-step measurement increments and raw noises (kept for
/// oracle replay), and the control evaluated at every grid point.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub dt: f64,
    /// States x(t_i), length N + 1.
    pub states: Vec<BlochVector>,
    /// Measurement increments dy over [t_i, t_{i+1}), length N.
    pub measurements: Vec<f64>,
    /// Control evaluated at each grid point, length N + 1; entry i is
    /// applied over [t_i, t_{i+1}).
    pub controls: Vec<f64>,
    /// Raw backaction noise increments dW, length N.
    pub noise_w: Vec<f64>,
    /// Raw analyzer noise increments dZ, length N.
    pub noise_z: Vec<f64>,
    /// Number of steps on which the ball projection was active.
    pub projection_count: usize,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.measurements.len()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Grid index closest to time t.
    pub fn index_at(&self, t: f64) -> usize {
        ((t / self.dt).round() as usize).min(self.states.len() - 1)
    }
}

/// Integrate one stochastic trajectory from `x0`, driving the control from
/// the supplied policy (state, time) -> omega. Pass `|_, _| 0.0` for the
/// undriven system.
pub fn simulate_trajectory(
    p: &ModelParams,
    noise: &NoiseSpec,
    x0: &BlochVector,
    scheme: DriftScheme,
    mut policy: impl FnMut(&BlochVector, f64) -> f64,
) -> Result<TrajectoryRecord, SimError> {
    let n = noise.steps();
    let dt = noise.dt;
    let mut source = TrajectoryNoise::new(noise.seed, 0, dt, p.analyzer_variance);
    simulate_with_noise(p, x0, dt, n, scheme, &mut source, &mut policy)
}

/// Same as [`simulate_trajectory`] but with an externally constructed
/// noise source (the ensemble runner derives one per trajectory index).
pub fn simulate_with_noise(
    p: &ModelParams,
    x0: &BlochVector,
    dt: f64,
    n_steps: usize,
    scheme: DriftScheme,
    source: &mut TrajectoryNoise,
    policy: &mut impl FnMut(&BlochVector, f64) -> f64,
) -> Result<TrajectoryRecord, SimError> {
    let mut rec = TrajectoryRecord {
        dt,
        states: Vec::with_capacity(n_steps + 1),
        measurements: Vec::with_capacity(n_steps),
        controls: Vec::with_capacity(n_steps + 1),
        noise_w: Vec::with_capacity(n_steps),
        noise_z: Vec::with_capacity(n_steps),
        projection_count: 0,
    };
    let mut x = *x0;
    rec.states.push(x);
    for i in 0..=n_steps {
        let t = i as f64 * dt;
        let omega = policy(&x, t);
        if !omega.is_finite() {
            return Err(SimError::NonFiniteControl { step: i, t });
        }
        rec.controls.push(omega);
        if i == n_steps {
            break;
        }
        let (dw, dz) = source.next_pair();
        let dy = p.output(&x) * dt + dw + dz;
        let (next, projected) = sde_step(p, &x, omega, dw, dt, scheme)
            .map_err(|_| SimError::NonFiniteState { step: i, t })?;
        if projected {
            rec.projection_count += 1;
            log::debug!("ball projection active at step {i} (t = {t:.4})");
        }
        x = next;
        rec.states.push(x);
        rec.measurements.push(dy);
        rec.noise_w.push(dw);
        rec.noise_z.push(dz);
    }
    Ok(rec)
}

/// Deterministic reference: fixed-step RK4 integration of the drift field
/// (the master equation with the noise term dropped), with a
/// piecewise-constant control signal sampled at the grid points.
pub fn lindblad_reference(
    p: &ModelParams,
    x0: &BlochVector,
    dt: f64,
    n_steps: usize,
    omega_at: impl Fn(f64) -> f64,
) -> Vec<BlochVector> {
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut x = *x0;
    out.push(x);
    for i in 0..n_steps {
        let t = i as f64 * dt;
        x = rk4_advance(p, &x, omega_at(t), dt);
        out.push(x);
    }
    out
}
