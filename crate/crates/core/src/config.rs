//! Experiment configuration: a single JSON document validated against the
//! physical bounds of the model, with unknown keys rejected. Command-line
//! flags override file values field by field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ModelParams;
use crate::sde::DriftScheme;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown estimator '{name}'; available: none, {available}")]
    UnknownEstimator { name: String, available: String },
    #[error("unknown controller '{name}'; available: {available}")]
    UnknownController { name: String, available: String },
    #[error("unknown recipe '{name}'; available: {available}")]
    UnknownRecipe { name: String, available: String },
}

/// Physical model parameters (scalar form of the standard leaky-cavity
/// model; the library API also accepts arbitrary operator content).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Decay rate Gamma, 1/s.
    pub gamma: f64,
    /// Measurement interaction strength M, 1/s.
    pub meas_strength: f64,
    /// Detector efficiency eta in [0, 1].
    pub eta: f64,
    /// Spectrum-analyzer noise variance sigma_z^2.
    pub sigma_z2: f64,
    /// Drift (level-splitting) frequency omega_r, rad/s.
    pub omega_r: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            meas_strength: 1.0,
            eta: 0.8,
            sigma_z2: 0.1,
            omega_r: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Integration step, s.
    pub dt: f64,
    /// Horizon, s.
    pub t_final: f64,
    /// Initial Bloch vector of the true state.
    pub x0: [f64; 3],
    /// Drift discretization of the stochastic stepper.
    pub drift_scheme: DriftScheme,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 1.0,
            x0: [0.0, 1.0, 0.0],
            drift_scheme: DriftScheme::SplitRk4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmaeConfig {
    /// Drift-frequency multipliers defining the model bank.
    pub multipliers: Vec<f64>,
    /// Per-model weighting constants; defaults to all ones.
    pub betas: Option<Vec<f64>>,
    /// Steps between weight updates.
    pub cadence: usize,
    /// Optional lower bound on the weights (0 disables).
    pub weight_floor: f64,
}

impl Default for MmaeConfig {
    fn default() -> Self {
        Self {
            multipliers: vec![0.8, 0.9, 1.0, 1.1, 1.2],
            betas: None,
            cadence: 10,
            weight_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// One of: none, qf, ekf, mmae-qf, mmae-ekf.
    pub kind: String,
    /// Initial estimate.
    pub xhat0: [f64; 3],
    /// Initial covariance scale, P(0) = p0_scale * I (Kalman variants).
    pub p0_scale: f64,
    /// Use the stated process-noise variance 1 + sigma_bar instead of the
    /// derived 1 - sigma_bar.
    pub paper_literal_qw: bool,
    /// Build the covariance diffusion from the Jacobian of g instead of
    /// the outer product g g^T.
    pub paper_literal_g: bool,
    pub mmae: MmaeConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: "none".into(),
            xhat0: [1.0, 0.0, 0.0],
            p0_scale: 1.0,
            paper_literal_qw: false,
            paper_literal_g: false,
            mmae: MmaeConfig::default(),
        }
    }
}

/// Stabilization target, either by name or as a diagonal mixture
/// `{"diag": p}` with ground population p.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetChoice {
    Named(String),
    Diag { diag: f64 },
}

impl Default for TargetChoice {
    fn default() -> Self {
        TargetChoice::Named("ground".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// One of: off, constant, lyapunov-true-state, lyapunov-estimated.
    pub kind: String,
    /// Drive amplitude for the constant controller, rad/s.
    pub constant_omega: f64,
    /// Lyapunov decay rate, 1/s.
    pub alpha: f64,
    /// Switching threshold on |upsilon_1|.
    pub epsilon: f64,
    /// Optional higher re-entry threshold (hysteresis); off by default.
    pub epsilon_high: Option<f64>,
    /// Minimum active-phase duration, s.
    pub dwell_active: f64,
    /// Minimum idle-phase duration, s.
    pub dwell_idle: f64,
    /// Saturation bound on the drive, rad/s.
    pub omega_max: f64,
    pub target: TargetChoice,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kind: "off".into(),
            constant_omega: 30.0,
            alpha: 1.0,
            epsilon: 0.01,
            epsilon_high: None,
            dwell_active: 0.01,
            dwell_idle: 0.01,
            omega_max: 100.0,
            target: TargetChoice::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub realizations: usize,
    pub master_seed: u64,
    /// Output directory; omit to keep results in memory only.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for the ensemble (0 = library default).
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            realizations: 100,
            master_seed: 42,
            out_dir: None,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub sim: SimConfig,
    pub estimator: EstimatorConfig,
    pub controller: ControllerConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Build the validated physical model.
    pub fn build_model(&self) -> Result<ModelParams, ConfigError> {
        ModelParams::leaky_cavity(
            self.model.gamma,
            self.model.meas_strength,
            self.model.eta,
            self.model.sigma_z2,
            self.model.omega_r,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build_model()?;

        let s = &self.sim;
        if !s.dt.is_finite() || s.dt <= 0.0 {
            return Err(ConfigError::Invalid(format!("sim.dt = {} must be > 0", s.dt)));
        }
        if !s.t_final.is_finite() || s.t_final < s.dt {
            return Err(ConfigError::Invalid(format!(
                "sim.t_final = {} must be >= dt",
                s.t_final
            )));
        }
        let x0 = nalgebra::Vector3::from(s.x0);
        if x0.norm() > 1.0 + 1e-12 {
            return Err(ConfigError::Invalid(format!(
                "sim.x0 norm {} exceeds 1",
                x0.norm()
            )));
        }

        let e = &self.estimator;
        let known_estimator =
            e.kind == "none" || crate::estimators::names().contains(&e.kind.as_str());
        if !known_estimator {
            return Err(ConfigError::UnknownEstimator {
                name: e.kind.clone(),
                available: crate::estimators::names().join(", "),
            });
        }
        let xhat0 = nalgebra::Vector3::from(e.xhat0);
        if xhat0.norm() > 1.0 + 1e-12 {
            return Err(ConfigError::Invalid(format!(
                "estimator.xhat0 norm {} exceeds 1",
                xhat0.norm()
            )));
        }
        if !e.p0_scale.is_finite() || e.p0_scale < 0.0 {
            return Err(ConfigError::Invalid(format!(
                "estimator.p0_scale = {} must be >= 0",
                e.p0_scale
            )));
        }
        if e.kind.starts_with("mmae") {
            let m = &e.mmae;
            if m.multipliers.is_empty() {
                return Err(ConfigError::Invalid("mmae.multipliers is empty".into()));
            }
            if m.multipliers.iter().any(|&v| !v.is_finite() || v <= 0.0) {
                return Err(ConfigError::Invalid(
                    "mmae.multipliers must be positive".into(),
                ));
            }
            if let Some(betas) = &m.betas {
                if betas.len() != m.multipliers.len() {
                    return Err(ConfigError::Invalid(format!(
                        "mmae.betas has {} entries for {} models",
                        betas.len(),
                        m.multipliers.len()
                    )));
                }
                if betas.iter().any(|&b| !b.is_finite() || b <= 0.0) {
                    return Err(ConfigError::Invalid("mmae.betas must be positive".into()));
                }
            }
            if m.cadence == 0 {
                return Err(ConfigError::Invalid("mmae.cadence must be >= 1".into()));
            }
            let n = m.multipliers.len() as f64;
            if !(0.0..1.0 / n).contains(&m.weight_floor) {
                return Err(ConfigError::Invalid(format!(
                    "mmae.weight_floor = {} must lie in [0, 1/{n})",
                    m.weight_floor
                )));
            }
        }

        let c = &self.controller;
        if !crate::control::names().contains(&c.kind.as_str()) {
            return Err(ConfigError::UnknownController {
                name: c.kind.clone(),
                available: crate::control::names().join(", "),
            });
        }
        if c.kind == "lyapunov-estimated" && e.kind == "none" {
            return Err(ConfigError::Invalid(
                "controller 'lyapunov-estimated' requires an estimator".into(),
            ));
        }
        if c.kind.starts_with("lyapunov") {
            let params = crate::control::ControllerParams {
                alpha: c.alpha,
                epsilon: c.epsilon,
                epsilon_high: c.epsilon_high,
                dwell_active: c.dwell_active,
                dwell_idle: c.dwell_idle,
                omega_max: c.omega_max,
            };
            params
                .validate()
                .map_err(|err| ConfigError::Invalid(err.to_string()))?;
            let model = self.build_model()?;
            crate::control::TargetSpec::from_choice(&c.target, &model.hamiltonian_drift)
                .map_err(|err| ConfigError::Invalid(err.to_string()))?;
        }
        if c.kind == "constant" && !c.constant_omega.is_finite() {
            return Err(ConfigError::Invalid(
                "controller.constant_omega must be finite".into(),
            ));
        }

        if self.run.realizations == 0 {
            return Err(ConfigError::Invalid("run.realizations must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical serialized form (field order is fixed by the schema).
    /// Execution-only fields that cannot affect a single output byte
    /// (worker count, output location) are normalized out, so the form
    /// identifies the result, not the run environment.
    pub fn canonical_json(&self) -> String {
        let mut canon = self.clone();
        canon.run.workers = 0;
        canon.run.out_dir = None;
        let mut text = serde_json::to_string_pretty(&canon).expect("config serializes");
        text.push('\n');
        text
    }

    /// Hex SHA-256 of the canonical form; recorded in run metadata.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let ok = r#"{"model": {"gamma": 5.0}, "estimator": {"kind": "qf"}}"#;
        let cfg = ExperimentConfig::from_json(ok).unwrap();
        assert_eq!(cfg.model.gamma, 5.0);
        assert_eq!(cfg.model.eta, 0.8);
        assert_eq!(cfg.estimator.kind, "qf");

        let bad = r#"{"model": {"gamma": 5.0, "typo_key": 1.0}}"#;
        assert!(matches!(
            ExperimentConfig::from_json(bad),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn physical_bounds_enforced() {
        let bad_eta = r#"{"model": {"eta": 1.5}}"#;
        assert!(ExperimentConfig::from_json(bad_eta).is_err());

        let bad_dt = r#"{"sim": {"dt": 0.0}}"#;
        assert!(ExperimentConfig::from_json(bad_dt).is_err());

        let bad_x0 = r#"{"sim": {"x0": [1.0, 1.0, 1.0]}}"#;
        assert!(ExperimentConfig::from_json(bad_x0).is_err());

        let bad_estimator = r#"{"estimator": {"kind": "ukf"}}"#;
        assert!(matches!(
            ExperimentConfig::from_json(bad_estimator),
            Err(ConfigError::UnknownEstimator { .. })
        ));

        let needs_estimator = r#"{"controller": {"kind": "lyapunov-estimated"}}"#;
        assert!(ExperimentConfig::from_json(needs_estimator).is_err());

        let bad_floor =
            r#"{"estimator": {"kind": "mmae-ekf", "mmae": {"weight_floor": 0.5}}}"#;
        assert!(ExperimentConfig::from_json(bad_floor).is_err());
    }

    #[test]
    fn target_choice_forms() {
        let named = r#"{"controller": {"kind": "lyapunov-true-state", "target": "excited"}}"#;
        ExperimentConfig::from_json(named).unwrap();

        let diag = r#"{"controller": {"kind": "lyapunov-true-state", "target": {"diag": 0.9}}}"#;
        ExperimentConfig::from_json(diag).unwrap();

        let bad = r#"{"controller": {"kind": "lyapunov-true-state", "target": "sideways"}}"#;
        assert!(ExperimentConfig::from_json(bad).is_err());
    }

    #[test]
    fn hash_tracks_content_but_not_execution_details() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.run.workers = 8;
        b.run.out_dir = Some("somewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.model.gamma = 11.0;
        assert_ne!(a.hash(), b.hash());
    }
}
