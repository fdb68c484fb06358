//! Physical model of the monitored qubit and the Bloch-coordinate fields
//! of its stochastic dynamics.
//!
//! The density-operator equation of motion is rewritten as an Ito SDE for
//! the Bloch vector, dx = f(x, omega) dt + g(x) dW, with scalar output
//! dy = h(x) dt + dV. The drift is affine in x and in the control, the
//! diffusion is quadratic, and the output is affine, so all three fields
//! are stored as trace coefficients precomputed from the operators once
//! per model. The direct superoperator route stays available through
//! [`crate::qubit`] and is used as an oracle in tests.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::qubit::{commutator, dissipator, pauli, sigma_minus, trace_inner, BlochVector, CMat2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("decay rate must be finite and >= 0, got {0}")]
    BadDecayRate(f64),
    #[error("measurement strength must be finite and >= 0, got {0}")]
    BadMeasStrength(f64),
    #[error("detector efficiency must lie in [0, 1], got {0}")]
    BadEfficiency(f64),
    #[error("analyzer noise variance must be finite and >= 0, got {0}")]
    BadAnalyzerVariance(f64),
    #[error("{0} Hamiltonian is not Hermitian (residual {1:.3e})")]
    NonHermitianHamiltonian(&'static str, f64),
}

/// Physical parameters defining the SDE fields: decay rate Gamma,
/// measurement strength M, detector efficiency eta, spectrum-analyzer
/// noise variance sigma_z^2, drift frequency omega_r, and the operator
/// content (Hamiltonians and channel operators).
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub decay_rate: f64,
    pub meas_strength: f64,
    pub efficiency: f64,
    pub analyzer_variance: f64,
    pub drift_frequency: f64,
    pub hamiltonian_drift: CMat2,
    pub hamiltonian_control: CMat2,
    pub channel_decay: CMat2,
    pub channel_meas: CMat2,
    coeffs: FieldCoefficients,
}

/// Trace coefficients of the Bloch-coordinate fields:
///   f(x, omega) = drift_const + (drift_lin + omega * drift_lin_control) x
///   h(x)        = out_const + out_lin . x
///   g(x)        = diff_const + diff_lin x - h(x) x
#[derive(Debug, Clone)]
struct FieldCoefficients {
    drift_const: Vector3<f64>,
    drift_lin: Matrix3<f64>,
    drift_lin_control: Matrix3<f64>,
    diff_const: Vector3<f64>,
    diff_lin: Matrix3<f64>,
    out_const: f64,
    out_lin: Vector3<f64>,
}

/// Bloch components of a (non-Hermitian-safe) operator: Tr(m sigma_k).
/// Real parts only; the imaginary residues of the maps used here vanish
/// for Hermitian generators.
fn pauli_components(m: &CMat2) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    for k in 1..=3 {
        let t = trace_inner(m, &pauli(k));
        debug_assert!(t.im.abs() < 1e-10, "imaginary residue {:.3e}", t.im);
        v[k - 1] = t.re;
    }
    v
}

/// Split an affine map rho -> op(rho) (in Bloch coordinates) into its
/// constant part (value on I/2) and linear part (columns = value on
/// sigma_j / 2).
fn affine_parts(op: impl Fn(&CMat2) -> CMat2) -> (Vector3<f64>, Matrix3<f64>) {
    let constant = pauli_components(&op(&CMat2::identity().scale(0.5)));
    let mut lin = Matrix3::zeros();
    for j in 1..=3 {
        let col = pauli_components(&op(&pauli(j).scale(0.5)));
        lin.set_column(j - 1, &col);
    }
    (constant, lin)
}

impl ModelParams {
    /// Standard two-level model in a leaky cavity: drift Hamiltonian
    /// (omega_r / 2) sigma_3, control Hamiltonian -sigma_1, and lowering
    /// operator for both the decay and measurement channels.
    pub fn leaky_cavity(
        decay_rate: f64,
        meas_strength: f64,
        efficiency: f64,
        analyzer_variance: f64,
        drift_frequency: f64,
    ) -> Result<Self, ModelError> {
        Self::new(
            decay_rate,
            meas_strength,
            efficiency,
            analyzer_variance,
            drift_frequency,
            pauli(3).scale(0.5 * drift_frequency),
            -pauli(1),
            sigma_minus(),
            sigma_minus(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        decay_rate: f64,
        meas_strength: f64,
        efficiency: f64,
        analyzer_variance: f64,
        drift_frequency: f64,
        hamiltonian_drift: CMat2,
        hamiltonian_control: CMat2,
        channel_decay: CMat2,
        channel_meas: CMat2,
    ) -> Result<Self, ModelError> {
        if !decay_rate.is_finite() || decay_rate < 0.0 {
            return Err(ModelError::BadDecayRate(decay_rate));
        }
        if !meas_strength.is_finite() || meas_strength < 0.0 {
            return Err(ModelError::BadMeasStrength(meas_strength));
        }
        if !efficiency.is_finite() || !(0.0..=1.0).contains(&efficiency) {
            return Err(ModelError::BadEfficiency(efficiency));
        }
        if !analyzer_variance.is_finite() || analyzer_variance < 0.0 {
            return Err(ModelError::BadAnalyzerVariance(analyzer_variance));
        }
        let hd_res = hamiltonian_drift.hermiticity_residual();
        if hd_res > 1e-12 {
            return Err(ModelError::NonHermitianHamiltonian("drift", hd_res));
        }
        let hc_res = hamiltonian_control.hermiticity_residual();
        if hc_res > 1e-12 {
            return Err(ModelError::NonHermitianHamiltonian("control", hc_res));
        }

        let coeffs = FieldCoefficients::build(
            decay_rate,
            meas_strength,
            efficiency,
            &hamiltonian_drift,
            &hamiltonian_control,
            &channel_decay,
            &channel_meas,
        );
        Ok(Self {
            decay_rate,
            meas_strength,
            efficiency,
            analyzer_variance,
            drift_frequency,
            hamiltonian_drift,
            hamiltonian_control,
            channel_decay,
            channel_meas,
            coeffs,
        })
    }

    /// Same model with a different drift frequency (used by the model
    /// banks of the adaptive estimator). Only meaningful for models built
    /// with [`ModelParams::leaky_cavity`]-style sigma_3 drift.
    pub fn with_drift_frequency(&self, drift_frequency: f64) -> Result<Self, ModelError> {
        Self::new(
            self.decay_rate,
            self.meas_strength,
            self.efficiency,
            self.analyzer_variance,
            drift_frequency,
            pauli(3).scale(0.5 * drift_frequency),
            self.hamiltonian_control,
            self.channel_decay,
            self.channel_meas,
        )
    }

    /// Measurement-noise variance rate sigma_v^2 = 1 + sigma_z^2.
    pub fn sigma_v2(&self) -> f64 {
        1.0 + self.analyzer_variance
    }

    /// Decorrelation gain sigma_bar = 1 / (1 + sigma_z^2).
    pub fn sigma_bar(&self) -> f64 {
        1.0 / (1.0 + self.analyzer_variance)
    }

    /// Drift field f(x, omega).
    pub fn drift(&self, x: &BlochVector, omega: f64) -> Vector3<f64> {
        let c = &self.coeffs;
        c.drift_const + c.drift_lin * x + omega * (c.drift_lin_control * x)
    }

    /// Diffusion field g(x) = sqrt(eta M) Tr(H[c_m] rho sigma_k).
    pub fn diffusion(&self, x: &BlochVector) -> Vector3<f64> {
        let c = &self.coeffs;
        c.diff_const + c.diff_lin * x - self.output(x) * x
    }

    /// Output field h(x); the measurement increment is h(x) dt + dV.
    pub fn output(&self, x: &BlochVector) -> f64 {
        let c = &self.coeffs;
        c.out_const + c.out_lin.dot(x)
    }

    /// Gradient of the output field (the measurement row vector).
    pub fn output_matrix(&self) -> Vector3<f64> {
        self.coeffs.out_lin
    }

    /// Jacobian of the drift field, d f / d x (constant in x).
    pub fn drift_jacobian(&self, omega: f64) -> Matrix3<f64> {
        let c = &self.coeffs;
        c.drift_lin + omega * c.drift_lin_control
    }

    /// Jacobian of the diffusion field at x.
    pub fn diffusion_jacobian(&self, x: &BlochVector) -> Matrix3<f64> {
        let c = &self.coeffs;
        c.diff_lin - x * c.out_lin.transpose() - Matrix3::identity() * self.output(x)
    }
}

impl FieldCoefficients {
    fn build(
        decay_rate: f64,
        meas_strength: f64,
        efficiency: f64,
        h_drift: &CMat2,
        h_control: &CMat2,
        c_decay: &CMat2,
        c_meas: &CMat2,
    ) -> Self {
        // Hamiltonian commutators are traceless on I, so only linear parts.
        let (_, ham_lin) = affine_parts(|rho| {
            commutator(h_drift, rho).scale_c(num_complex::Complex64::new(0.0, -1.0))
        });
        let (_, ctl_lin) = affine_parts(|rho| {
            commutator(h_control, rho).scale_c(num_complex::Complex64::new(0.0, -1.0))
        });
        let (diss_const, diss_lin) = affine_parts(|rho| {
            dissipator(c_decay, rho).scale(decay_rate) + dissipator(c_meas, rho).scale(meas_strength)
        });

        let root = (efficiency * meas_strength).sqrt();
        let sum = *c_meas + c_meas.adjoint();
        let out_const = 0.5 * root * sum.trace().re;
        let out_lin = pauli_components(&sum).scale(0.5 * root);

        // Affine part of Tr((c rho + rho c^+) sigma_k).
        let (bk_const, bk_lin) = affine_parts(|rho| *c_meas * *rho + *rho * c_meas.adjoint());
        let diff_const = bk_const.scale(root);
        let diff_lin = bk_lin.scale(root);

        Self {
            drift_const: diss_const,
            drift_lin: ham_lin + diss_lin,
            drift_lin_control: ctl_lin,
            diff_const,
            diff_lin,
            out_const,
            out_lin,
        }
    }
}
