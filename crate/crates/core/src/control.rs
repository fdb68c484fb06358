//! Switching Lyapunov control.
//!
//! The controller drives V(rho) = Tr(Pi rho), Pi = I - rho_f, down at rate
//! alpha by applying omega = -Upsilon_0 / upsilon_1 while the
//! controllability indicator |upsilon_1| stays above a threshold, and
//! idles otherwise; dwell times bound the switching rate. The same law
//! runs on the true state or, certainty-equivalence style, on the
//! observer output - selected by name from the controller registry.

use thiserror::Error;

use crate::config::{ConfigError, ControllerConfig, TargetChoice};
use crate::model::ModelParams;
use crate::qubit::{commutator, dissipator, trace_inner, BlochVector, CMat2, DensityMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("target does not commute with the drift Hamiltonian (residual {0:.3e})")]
    TargetNotStationary(f64),
    #[error("invalid controller parameter: {0}")]
    BadParameter(String),
}

/// Stationary target: a state rho_f commuting with the drift Hamiltonian,
/// and the associated Lyapunov weight Pi = I - rho_f.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    rho_f: DensityMatrix,
    pi: CMat2,
}

impl TargetSpec {
    pub fn new(rho_f: DensityMatrix, hamiltonian_drift: &CMat2) -> Result<Self, ControlError> {
        let residual = commutator(rho_f.matrix(), hamiltonian_drift).max_norm();
        if residual > 1e-10 {
            return Err(ControlError::TargetNotStationary(residual));
        }
        let pi = CMat2::identity() - *rho_f.matrix();
        debug_assert!(commutator(rho_f.matrix(), &pi).max_norm() < 1e-12);
        Ok(Self { rho_f, pi })
    }

    pub fn from_choice(
        choice: &TargetChoice,
        hamiltonian_drift: &CMat2,
    ) -> Result<Self, ControlError> {
        let rho_f = match choice {
            TargetChoice::Named(name) => match name.as_str() {
                "ground" => DensityMatrix::ground(),
                "excited" => DensityMatrix::excited(),
                other => {
                    return Err(ControlError::BadParameter(format!(
                        "unknown target '{other}' (expected \"ground\", \"excited\", or {{\"diag\": p}})"
                    )))
                }
            },
            TargetChoice::Diag { diag } => {
                if !(0.0..=1.0).contains(diag) {
                    return Err(ControlError::BadParameter(format!(
                        "diagonal target population {diag} outside [0, 1]"
                    )));
                }
                DensityMatrix::from_bloch(&BlochVector::new(0.0, 0.0, 2.0 * diag - 1.0))
                    .expect("diagonal state is inside the ball")
            }
        };
        Self::new(rho_f, hamiltonian_drift)
    }

    pub fn rho_f(&self) -> &DensityMatrix {
        &self.rho_f
    }

    pub fn pi(&self) -> &CMat2 {
        &self.pi
    }
}

/// Switching-law parameters: Lyapunov rate alpha, threshold epsilon on
/// |upsilon_1| (optionally a higher re-entry threshold for hysteresis),
/// dwell times for leaving the active and idle phases, and the saturation
/// bound on the drive.
#[derive(Debug, Clone, Copy)]
pub struct ControllerParams {
    pub alpha: f64,
    pub epsilon: f64,
    /// Idle -> Active threshold; defaults to `epsilon` (no hysteresis).
    pub epsilon_high: Option<f64>,
    pub dwell_active: f64,
    pub dwell_idle: f64,
    pub omega_max: f64,
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        let all = [
            ("alpha", self.alpha),
            ("epsilon", self.epsilon),
            ("dwell_active", self.dwell_active),
            ("dwell_idle", self.dwell_idle),
            ("omega_max", self.omega_max),
        ];
        for (name, v) in all {
            if !v.is_finite() || v <= 0.0 {
                return Err(ControlError::BadParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if let Some(high) = self.epsilon_high {
            if !high.is_finite() || high < self.epsilon {
                return Err(ControlError::BadParameter(format!(
                    "epsilon_high = {high} must be >= epsilon = {}",
                    self.epsilon
                )));
            }
        }
        Ok(())
    }

    fn reentry_threshold(&self) -> f64 {
        self.epsilon_high.unwrap_or(self.epsilon)
    }
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            epsilon: 0.01,
            epsilon_high: None,
            dwell_active: 0.01,
            dwell_idle: 0.01,
            omega_max: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Active,
    Idle,
}

/// Switching state machine: current phase, time of the last switch, and a
/// switch counter (phase parity alternates with it).
#[derive(Debug, Clone, Copy)]
pub struct ControllerState {
    pub phase: Phase,
    pub last_switch: f64,
    pub switches: usize,
}

impl ControllerState {
    /// Initial state: active from t0.
    pub fn start(t0: f64) -> Self {
        Self {
            phase: Phase::Active,
            last_switch: t0,
            switches: 0,
        }
    }
}

/// Lyapunov function V(rho) = Tr(Pi rho).
pub fn lyapunov_v(rho: &DensityMatrix, target: &TargetSpec) -> f64 {
    let v = trace_inner(target.pi(), rho.matrix());
    debug_assert!(v.im.abs() < 1e-12);
    v.re
}

/// The two trace functionals of the switching law:
///   Upsilon_0 = Gamma Tr(Pi D[c_d] rho) + M Tr(Pi D[c_m] rho) + alpha Tr(Pi rho)
///   Upsilon_1 = Tr(Pi [H_c, rho]), purely imaginary; returned as its
///   imaginary part so the control ratio is manifestly real.
pub fn upsilons(
    rho: &DensityMatrix,
    target: &TargetSpec,
    p: &ModelParams,
    alpha: f64,
) -> (f64, f64) {
    let pi = target.pi();
    let d_decay = trace_inner(pi, &dissipator(&p.channel_decay, rho.matrix()));
    let d_meas = trace_inner(pi, &dissipator(&p.channel_meas, rho.matrix()));
    let v = trace_inner(pi, rho.matrix());
    let u0 = p.decay_rate * d_decay.re + p.meas_strength * d_meas.re + alpha * v.re;
    let u1c = trace_inner(pi, &commutator(&p.hamiltonian_control, rho.matrix()));
    debug_assert!(u1c.re.abs() < 1e-10, "upsilon_1 real residue {:.3e}", u1c.re);
    (u0, u1c.im)
}

/// Active-phase drive from the trace functionals, saturated at omega_max.
/// A vanishing upsilon_1 (excluded by the switching logic up to the dwell
/// window) yields zero drive.
pub fn active_drive(upsilon0: f64, upsilon1: f64, omega_max: f64) -> f64 {
    if upsilon1 == 0.0 {
        log::warn!("active phase with vanishing upsilon_1; forcing zero drive");
        return 0.0;
    }
    (-upsilon0 / upsilon1).clamp(-omega_max, omega_max)
}

/// Control value for the current phase: -Upsilon_0 / upsilon_1 (saturated)
/// while active, zero while idle.
pub fn control_value(
    rho: &DensityMatrix,
    target: &TargetSpec,
    p: &ModelParams,
    cp: &ControllerParams,
    cs: &ControllerState,
) -> f64 {
    match cs.phase {
        Phase::Idle => 0.0,
        Phase::Active => {
            let (u0, u1) = upsilons(rho, target, p, cp.alpha);
            active_drive(u0, u1, cp.omega_max)
        }
    }
}

/// Event logic: leave the active phase when |upsilon_1| falls to the
/// threshold (after the active dwell), re-enter when it recovers (after
/// the idle dwell). Monotone time assumed.
pub fn switch_logic(
    cs: &ControllerState,
    upsilon1: f64,
    t: f64,
    cp: &ControllerParams,
) -> ControllerState {
    let mag = upsilon1.abs();
    match cs.phase {
        Phase::Active if mag <= cp.epsilon && t - cs.last_switch >= cp.dwell_active => {
            ControllerState {
                phase: Phase::Idle,
                last_switch: t,
                switches: cs.switches + 1,
            }
        }
        Phase::Idle if mag >= cp.reentry_threshold() && t - cs.last_switch >= cp.dwell_idle => {
            ControllerState {
                phase: Phase::Active,
                last_switch: t,
                switches: cs.switches + 1,
            }
        }
        _ => *cs,
    }
}

/// Drift of the Lyapunov function under the generator of the diffusion:
/// L(V) = omega * upsilon_1 + Gamma Tr(Pi D[c_d] rho) + M Tr(Pi D[c_m] rho).
/// Diagnostic; with the exact-state active drive it equals -alpha V(rho).
pub fn generator_lv(
    rho: &DensityMatrix,
    omega: f64,
    target: &TargetSpec,
    p: &ModelParams,
) -> f64 {
    let pi = target.pi();
    let d_decay = trace_inner(pi, &dissipator(&p.channel_decay, rho.matrix()));
    let d_meas = trace_inner(pi, &dissipator(&p.channel_meas, rho.matrix()));
    let u1 = trace_inner(pi, &commutator(&p.hamiltonian_control, rho.matrix())).im;
    omega * u1 + p.decay_rate * d_decay.re + p.meas_strength * d_meas.re
}

/// Which state the harness feeds to a controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlFeed {
    Truth,
    Estimate,
}

/// A drive policy evaluated once per grid point on the fed state.
pub trait Controller: Send {
    fn control(&mut self, rho: &DensityMatrix, t: f64) -> f64;
    fn feed(&self) -> ControlFeed;
    fn target(&self) -> Option<&TargetSpec> {
        None
    }
    fn switch_count(&self) -> usize {
        0
    }
}

/// No drive at all.
pub struct NoDrive;

impl Controller for NoDrive {
    fn control(&mut self, _rho: &DensityMatrix, _t: f64) -> f64 {
        0.0
    }
    fn feed(&self) -> ControlFeed {
        ControlFeed::Truth
    }
}

/// Constant drive amplitude.
pub struct ConstantDrive(pub f64);

impl Controller for ConstantDrive {
    fn control(&mut self, _rho: &DensityMatrix, _t: f64) -> f64 {
        self.0
    }
    fn feed(&self) -> ControlFeed {
        ControlFeed::Truth
    }
}

/// The switching law of this module, fed with either the true state or the
/// observer estimate.
pub struct LyapunovSwitchingController {
    model: ModelParams,
    target: TargetSpec,
    params: ControllerParams,
    state: ControllerState,
    feed: ControlFeed,
}

impl LyapunovSwitchingController {
    pub fn new(
        model: ModelParams,
        target: TargetSpec,
        params: ControllerParams,
        feed: ControlFeed,
    ) -> Result<Self, ControlError> {
        params.validate()?;
        Ok(Self {
            model,
            target,
            params,
            state: ControllerState::start(0.0),
            feed,
        })
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }
}

impl Controller for LyapunovSwitchingController {
    fn control(&mut self, rho: &DensityMatrix, t: f64) -> f64 {
        let (u0, u1) = upsilons(rho, &self.target, &self.model, self.params.alpha);
        self.state = switch_logic(&self.state, u1, t, &self.params);
        match self.state.phase {
            Phase::Idle => 0.0,
            Phase::Active => active_drive(u0, u1, self.params.omega_max),
        }
    }

    fn feed(&self) -> ControlFeed {
        self.feed
    }

    fn target(&self) -> Option<&TargetSpec> {
        Some(&self.target)
    }

    fn switch_count(&self) -> usize {
        self.state.switches
    }
}

type BuildFn = fn(&ControllerConfig, &ModelParams) -> Result<Box<dyn Controller>, ConfigError>;

/// Registry entry: a drive policy selectable by name.
pub struct ControllerEntry {
    pub name: &'static str,
    pub summary: &'static str,
    build: BuildFn,
}

fn build_lyapunov(
    cfg: &ControllerConfig,
    model: &ModelParams,
    feed: ControlFeed,
) -> Result<Box<dyn Controller>, ConfigError> {
    let target = TargetSpec::from_choice(&cfg.target, &model.hamiltonian_drift)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let params = ControllerParams {
        alpha: cfg.alpha,
        epsilon: cfg.epsilon,
        epsilon_high: cfg.epsilon_high,
        dwell_active: cfg.dwell_active,
        dwell_idle: cfg.dwell_idle,
        omega_max: cfg.omega_max,
    };
    let ctl = LyapunovSwitchingController::new(model.clone(), target, params, feed)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(Box::new(ctl))
}

/// All controller variants, keyed by the names accepted in configuration
/// files and on the command line.
pub static REGISTRY: &[ControllerEntry] = &[
    ControllerEntry {
        name: "off",
        summary: "no drive",
        build: |_, _| Ok(Box::new(NoDrive)),
    },
    ControllerEntry {
        name: "constant",
        summary: "constant drive amplitude",
        build: |cfg, _| {
            if !cfg.constant_omega.is_finite() {
                return Err(ConfigError::Invalid(
                    "constant_omega must be finite".into(),
                ));
            }
            Ok(Box::new(ConstantDrive(cfg.constant_omega)))
        },
    },
    ControllerEntry {
        name: "lyapunov-true-state",
        summary: "switching Lyapunov law on the true state",
        build: |cfg, model| build_lyapunov(cfg, model, ControlFeed::Truth),
    },
    ControllerEntry {
        name: "lyapunov-estimated",
        summary: "switching Lyapunov law on the observer estimate",
        build: |cfg, model| build_lyapunov(cfg, model, ControlFeed::Estimate),
    },
];

pub fn names() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.name).collect()
}

pub fn build(cfg: &ControllerConfig, model: &ModelParams) -> Result<Box<dyn Controller>, ConfigError> {
    REGISTRY
        .iter()
        .find(|e| e.name == cfg.kind)
        .map(|e| (e.build)(cfg, model))
        .ok_or_else(|| ConfigError::UnknownController {
            name: cfg.kind.clone(),
            available: names().join(", "),
        })?
}
