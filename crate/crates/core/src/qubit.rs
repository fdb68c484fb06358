//! Fixed-size 2x2 complex linear algebra and qubit state utilities.
//!
//! Everything downstream (dynamics, filters, controller) works either on
//! density matrices or on their Bloch-vector coordinates; this module owns
//! both representations and the maps between them.
//!
//! Basis convention, fixed repo-wide: |g> = (1,0)^T, |e> = (0,1)^T, so
//! sigma_z = |g><g| - |e><e| = diag(1,-1) and the lowering operator is
//! |g><e|. Ground state has Bloch vector (0,0,1).

use nalgebra::Vector3;
use num_complex::Complex64;
use thiserror::Error;

/// Bloch (coherence) vector of a qubit state; physical states satisfy
/// `norm <= 1`. Containers that persist states assert this.
pub type BlochVector = Vector3<f64>;

/// Tolerance for Hermiticity / trace / eigenvalue checks on density matrices.
pub const STATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("matrix is not Hermitian (residual {0:.3e})")]
    NotHermitian(f64),
    #[error("trace is {0}, expected 1")]
    BadTrace(Complex64),
    #[error("negative eigenvalue {0:.3e}")]
    NegativeEigenvalue(f64),
    #[error("Bloch vector norm {0} exceeds 1")]
    OutsideBall(f64),
    #[error("non-finite input")]
    NonFinite,
}

/// Dense 2x2 complex matrix, row-major. General workhorse for operators
/// (Hamiltonians, channel operators, projectors) and raw density data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CMat2 {
    pub m: [Complex64; 4],
}

const ZERO_C: Complex64 = Complex64::new(0.0, 0.0);
const ONE_C: Complex64 = Complex64::new(1.0, 0.0);

impl CMat2 {
    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        Self { m: [a, b, c, d] }
    }

    pub fn from_real(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::new(
            Complex64::new(a, 0.0),
            Complex64::new(b, 0.0),
            Complex64::new(c, 0.0),
            Complex64::new(d, 0.0),
        )
    }

    pub fn zeros() -> Self {
        Self { m: [ZERO_C; 4] }
    }

    pub fn identity() -> Self {
        Self::new(ONE_C, ZERO_C, ZERO_C, ONE_C)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.m[2 * r + c]
    }

    pub fn adjoint(&self) -> Self {
        Self::new(
            self.m[0].conj(),
            self.m[2].conj(),
            self.m[1].conj(),
            self.m[3].conj(),
        )
    }

    pub fn trace(&self) -> Complex64 {
        self.m[0] + self.m[3]
    }

    pub fn det(&self) -> Complex64 {
        self.m[0] * self.m[3] - self.m[1] * self.m[2]
    }

    pub fn scale(&self, s: f64) -> Self {
        self.scale_c(Complex64::new(s, 0.0))
    }

    pub fn scale_c(&self, s: Complex64) -> Self {
        Self {
            m: [self.m[0] * s, self.m[1] * s, self.m[2] * s, self.m[3] * s],
        }
    }

    /// Largest absolute deviation from Hermiticity.
    pub fn hermiticity_residual(&self) -> f64 {
        let d = *self - self.adjoint();
        d.m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Max-entry absolute magnitude.
    pub fn max_norm(&self) -> f64 {
        self.m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl std::ops::Add for CMat2 {
    type Output = CMat2;
    fn add(self, o: CMat2) -> CMat2 {
        CMat2 {
            m: [
                self.m[0] + o.m[0],
                self.m[1] + o.m[1],
                self.m[2] + o.m[2],
                self.m[3] + o.m[3],
            ],
        }
    }
}

impl std::ops::Sub for CMat2 {
    type Output = CMat2;
    fn sub(self, o: CMat2) -> CMat2 {
        CMat2 {
            m: [
                self.m[0] - o.m[0],
                self.m[1] - o.m[1],
                self.m[2] - o.m[2],
                self.m[3] - o.m[3],
            ],
        }
    }
}

impl std::ops::Mul for CMat2 {
    type Output = CMat2;
    fn mul(self, o: CMat2) -> CMat2 {
        CMat2::new(
            self.m[0] * o.m[0] + self.m[1] * o.m[2],
            self.m[0] * o.m[1] + self.m[1] * o.m[3],
            self.m[2] * o.m[0] + self.m[3] * o.m[2],
            self.m[2] * o.m[1] + self.m[3] * o.m[3],
        )
    }
}

impl std::ops::Neg for CMat2 {
    type Output = CMat2;
    fn neg(self) -> CMat2 {
        self.scale(-1.0)
    }
}

/// Pauli matrix sigma_k for k in 1..=3, with sigma_3 = diag(1,-1).
///
/// Panics on an out-of-range index.
pub fn pauli(k: usize) -> CMat2 {
    match k {
        1 => CMat2::from_real(0.0, 1.0, 1.0, 0.0),
        2 => CMat2::new(
            ZERO_C,
            Complex64::new(0.0, -1.0),
            Complex64::new(0.0, 1.0),
            ZERO_C,
        ),
        3 => CMat2::from_real(1.0, 0.0, 0.0, -1.0),
        _ => panic!("pauli index {k} out of range 1..=3"),
    }
}

/// Lowering operator |g><e|.
pub fn sigma_minus() -> CMat2 {
    CMat2::from_real(0.0, 1.0, 0.0, 0.0)
}

/// Raising operator |e><g|.
pub fn sigma_plus() -> CMat2 {
    CMat2::from_real(0.0, 0.0, 1.0, 0.0)
}

/// Tr(A B).
pub fn trace_inner(a: &CMat2, b: &CMat2) -> Complex64 {
    (*a * *b).trace()
}

/// Commutator [A, B].
pub fn commutator(a: &CMat2, b: &CMat2) -> CMat2 {
    *a * *b - *b * *a
}

/// Lindblad dissipator D[c] rho = c rho c^+ - (c^+ c rho + rho c^+ c)/2.
pub fn dissipator(c: &CMat2, rho: &CMat2) -> CMat2 {
    let cd = c.adjoint();
    let cdc = cd * *c;
    *c * *rho * cd - (cdc * *rho + *rho * cdc).scale(0.5)
}

/// Measurement superoperator H[c] rho = c rho + rho c^+ - <c + c^+> rho.
pub fn meas_superop(c: &CMat2, rho: &CMat2) -> CMat2 {
    let sum = *c + c.adjoint();
    let expect = trace_inner(&sum, rho);
    *c * *rho + *rho * c.adjoint() - rho.scale_c(expect)
}

/// Radial projection onto the closed unit ball: x / max{1, ||x||}.
///
/// Identity on interior points, idempotent, non-expansive. Errors on
/// non-finite input.
pub fn bloch_project(x: &BlochVector) -> Result<BlochVector, StateError> {
    if !(x[0].is_finite() && x[1].is_finite() && x[2].is_finite()) {
        return Err(StateError::NonFinite);
    }
    let n = x.norm();
    if n > 1.0 {
        Ok(x / n)
    } else {
        Ok(*x)
    }
}

/// Validated qubit density matrix: Hermitian, unit trace, PSD (within
/// [`STATE_TOL`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    rho: CMat2,
}

impl DensityMatrix {
    pub fn new(rho: CMat2) -> Result<Self, StateError> {
        if !rho.is_finite() {
            return Err(StateError::NonFinite);
        }
        let herm = rho.hermiticity_residual();
        if herm > STATE_TOL {
            return Err(StateError::NotHermitian(herm));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(StateError::BadTrace(tr));
        }
        // 2x2 Hermitian eigenvalues in closed form.
        let det = rho.det().re;
        let disc = (1.0 - 4.0 * det).max(0.0).sqrt();
        let min_eig = 0.5 * (1.0 - disc);
        if min_eig < -STATE_TOL {
            return Err(StateError::NegativeEigenvalue(min_eig));
        }
        Ok(Self { rho })
    }

    /// rho = (I + sum_k x_k sigma_k) / 2; exact trace and Hermiticity by
    /// construction, PSD because the eigenvalues are (1 +- ||x||)/2.
    ///
    /// Rejects vectors outside the ball beyond 1e-9 (callers project first).
    pub fn from_bloch(x: &BlochVector) -> Result<Self, StateError> {
        if !(x[0].is_finite() && x[1].is_finite() && x[2].is_finite()) {
            return Err(StateError::NonFinite);
        }
        let n = x.norm();
        if n > 1.0 + 1e-9 {
            return Err(StateError::OutsideBall(n));
        }
        // Renormalize the sub-1e-9 overshoot so the result is exactly PSD.
        let x = if n > 1.0 { x / n } else { *x };
        let rho = CMat2::new(
            Complex64::new(0.5 * (1.0 + x[2]), 0.0),
            Complex64::new(0.5 * x[0], -0.5 * x[1]),
            Complex64::new(0.5 * x[0], 0.5 * x[1]),
            Complex64::new(0.5 * (1.0 - x[2]), 0.0),
        );
        Ok(Self { rho })
    }

    /// Ground state |g><g|.
    pub fn ground() -> Self {
        Self::from_bloch(&Vector3::new(0.0, 0.0, 1.0)).unwrap()
    }

    /// Excited state |e><e|.
    pub fn excited() -> Self {
        Self::from_bloch(&Vector3::new(0.0, 0.0, -1.0)).unwrap()
    }

    /// Maximally mixed state I/2.
    pub fn maximally_mixed() -> Self {
        Self::from_bloch(&Vector3::zeros()).unwrap()
    }

    pub fn matrix(&self) -> &CMat2 {
        &self.rho
    }

    /// Bloch coordinates x_k = Tr(rho sigma_k). Imaginary residues are
    /// checked against [`STATE_TOL`] and dropped.
    pub fn bloch_vector(&self) -> BlochVector {
        let mut x = Vector3::zeros();
        for k in 1..=3 {
            let t = trace_inner(&self.rho, &pauli(k));
            debug_assert!(t.im.abs() < STATE_TOL);
            x[k - 1] = t.re;
        }
        x
    }

    /// Uhlmann fidelity, computed with the qubit closed form
    /// F = Tr(rho sigma) + 2 sqrt(det rho * det sigma).
    pub fn fidelity(&self, other: &DensityMatrix) -> f64 {
        let overlap = trace_inner(&self.rho, &other.rho).re;
        let d = (self.rho.det().re * other.rho.det().re).max(0.0);
        (overlap + 2.0 * d.sqrt()).clamp(0.0, 1.0)
    }

    /// Purity Tr(rho^2).
    pub fn purity(&self) -> f64 {
        trace_inner(&self.rho, &self.rho).re
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

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

    fn random_cmat(rng: &mut StdRng) -> CMat2 {
        let mut z = [ZERO_C; 4];
        for e in z.iter_mut() {
            *e = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        CMat2 { m: z }
    }

    /// Random element of U(2) via global phase times axis-angle SU(2).
    fn random_unitary(rng: &mut StdRng) -> CMat2 {
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut axis = Vector3::new(
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if axis.norm() < 1e-6 {
            axis = Vector3::new(0.0, 0.0, 1.0);
        }
        axis /= axis.norm();
        let mut u = CMat2::identity().scale(theta.cos());
        for k in 1..=3 {
            u = u + pauli(k).scale_c(Complex64::new(0.0, theta.sin() * axis[k - 1]));
        }
        u.scale_c(Complex64::from_polar(1.0, phi))
    }

    #[test]
    fn pauli_matrices_match_convention() {
        assert_eq!(pauli(1), CMat2::from_real(0.0, 1.0, 1.0, 0.0));
        assert_eq!(
            pauli(2),
            CMat2::new(
                ZERO_C,
                Complex64::new(0.0, -1.0),
                Complex64::new(0.0, 1.0),
                ZERO_C
            )
        );
        assert_eq!(pauli(3), CMat2::from_real(1.0, 0.0, 0.0, -1.0));
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn pauli_rejects_bad_index() {
        let _ = pauli(4);
    }

    #[test]
    fn bloch_of_mixed_state_is_zero() {
        let x = DensityMatrix::maximally_mixed().bloch_vector();
        assert!(x.norm() < 1e-15);
    }

    #[test]
    fn bloch_of_reference_initial_state() {
        // rho = [[0.5, -0.5i], [0.5i, 0.5]] has Bloch vector (0, 1, 0).
        let rho = DensityMatrix::new(CMat2::new(
            Complex64::new(0.5, 0.0),
            Complex64::new(0.0, -0.5),
            Complex64::new(0.0, 0.5),
            Complex64::new(0.5, 0.0),
        ))
        .unwrap();
        let x = rho.bloch_vector();
        assert_abs_diff_eq!(x[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bloch_of_ground_state() {
        let rho = DensityMatrix::new(CMat2::from_real(1.0, 0.0, 0.0, 0.0)).unwrap();
        let x = rho.bloch_vector();
        assert_abs_diff_eq!(x[2], 1.0, epsilon = 1e-15);
        assert!(x[0].abs() < 1e-15 && x[1].abs() < 1e-15);
    }

    #[test]
    fn from_bloch_reference_values() {
        let rho = DensityMatrix::from_bloch(&Vector3::new(0.0, 1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(rho.matrix().get(0, 1).im, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(rho.matrix().get(1, 0).im, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(rho.matrix().get(0, 0).re, 0.5, epsilon = 1e-15);

        let mixed = DensityMatrix::from_bloch(&Vector3::zeros()).unwrap();
        assert_eq!(mixed.matrix().get(0, 0).re, 0.5);
        assert_eq!(mixed.matrix().get(1, 1).re, 0.5);
        assert_eq!(mixed.matrix().get(0, 1), ZERO_C);
    }

    #[test]
    fn from_bloch_rejects_outside_ball() {
        let err = DensityMatrix::from_bloch(&Vector3::new(0.0, 0.0, 1.1)).unwrap_err();
        assert!(matches!(err, StateError::OutsideBall(_)));
    }

    #[test]
    fn density_validation_errors() {
        let nonherm = CMat2::new(
            Complex64::new(0.5, 0.0),
            Complex64::new(0.3, 0.0),
            Complex64::new(0.1, 0.0),
            Complex64::new(0.5, 0.0),
        );
        assert!(matches!(
            DensityMatrix::new(nonherm),
            Err(StateError::NotHermitian(_))
        ));
        let badtrace = CMat2::from_real(0.6, 0.0, 0.0, 0.6);
        assert!(matches!(
            DensityMatrix::new(badtrace),
            Err(StateError::BadTrace(_))
        ));
        let negative = CMat2::from_real(1.2, 0.0, 0.0, -0.2);
        assert!(matches!(
            DensityMatrix::new(negative),
            Err(StateError::NegativeEigenvalue(_))
        ));
    }

    #[test]
    fn dissipator_reference_values() {
        // sigma_- acting on |e><e| relaxes to the ground state.
        let excited = CMat2::from_real(0.0, 0.0, 0.0, 1.0);
        let d = dissipator(&sigma_minus(), &excited);
        let expected = CMat2::from_real(1.0, 0.0, 0.0, -1.0);
        assert!((d - expected).max_norm() < 1e-15);

        // Zero channel does nothing.
        let any = CMat2::from_real(0.3, 0.1, 0.1, 0.7);
        assert!(dissipator(&CMat2::zeros(), &any).max_norm() == 0.0);

        // Ground state is dark for sigma_-.
        let ground = CMat2::from_real(1.0, 0.0, 0.0, 0.0);
        assert!(dissipator(&sigma_minus(), &ground).max_norm() < 1e-15);
    }

    #[test]
    fn meas_superop_reference_values() {
        let mixed = CMat2::from_real(0.5, 0.0, 0.0, 0.5);
        let h = meas_superop(&sigma_minus(), &mixed);
        let expected = pauli(1).scale(0.5);
        assert!((h - expected).max_norm() < 1e-15);

        let ground = CMat2::from_real(1.0, 0.0, 0.0, 0.0);
        assert!(meas_superop(&sigma_minus(), &ground).max_norm() < 1e-15);
    }

    #[test]
    fn superoperators_are_traceless_on_random_input() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let c = random_cmat(&mut rng);
            let rho = DensityMatrix::from_bloch(&ball_vec(&mut rng)).unwrap();
            assert!(dissipator(&c, rho.matrix()).trace().norm() < 1e-12);
            assert!(meas_superop(&c, rho.matrix()).trace().norm() < 1e-12);
        }
    }

    #[test]
    fn projection_reference_values() {
        let p = bloch_project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_abs_diff_eq!(p[2], 1.0, epsilon = 1e-15);
        let q = bloch_project(&Vector3::new(0.3, 0.0, 0.0)).unwrap();
        assert_eq!(q, Vector3::new(0.3, 0.0, 0.0));
        let r = bloch_project(&Vector3::new(3.0, 4.0, 0.0)).unwrap();
        assert_abs_diff_eq!(r[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1], 0.8, epsilon = 1e-15);
        assert!(bloch_project(&Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn fidelity_reference_values() {
        let g = DensityMatrix::ground();
        let e = DensityMatrix::excited();
        assert_abs_diff_eq!(g.fidelity(&e), 0.0, epsilon = 1e-15);
        let mixed = DensityMatrix::maximally_mixed();
        assert_abs_diff_eq!(mixed.fidelity(&g), 0.5, epsilon = 1e-15);

        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let rho = DensityMatrix::from_bloch(&ball_vec(&mut rng)).unwrap();
            assert_abs_diff_eq!(rho.fidelity(&rho), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn fidelity_symmetry_and_unitary_invariance() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let a = DensityMatrix::from_bloch(&ball_vec(&mut rng)).unwrap();
            let b = DensityMatrix::from_bloch(&ball_vec(&mut rng)).unwrap();
            let f = a.fidelity(&b);
            assert_abs_diff_eq!(f, b.fidelity(&a), epsilon = 1e-12);

            let u = random_unitary(&mut rng);
            let ua = DensityMatrix::new(u * *a.matrix() * u.adjoint()).unwrap();
            let ub = DensityMatrix::new(u * *b.matrix() * u.adjoint()).unwrap();
            assert_abs_diff_eq!(f, ua.fidelity(&ub), epsilon = 1e-10);
        }
    }

    #[test]
    fn trace_inner_reference_values() {
        assert_abs_diff_eq!(trace_inner(&pauli(1), &pauli(1)).re, 2.0, epsilon = 1e-15);
        assert!(trace_inner(&pauli(1), &pauli(2)).norm() < 1e-15);
        let half_i = CMat2::identity().scale(0.5);
        assert!(trace_inner(&pauli(3), &half_i).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn bloch_roundtrip(x1 in -1.0f64..1.0, x2 in -1.0f64..1.0, x3 in -1.0f64..1.0) {
            let v = Vector3::new(x1, x2, x3);
            prop_assume!(v.norm() <= 1.0);
            let rho = DensityMatrix::from_bloch(&v).unwrap();
            let back = rho.bloch_vector();
            prop_assert!((back - v).norm() < 1e-12);
            // Eigenvalues are (1 +- ||x||)/2 >= 0.
            let det = rho.matrix().det().re;
            let expected = 0.25 * (1.0 - v.norm_squared());
            prop_assert!((det - expected).abs() < 1e-12);
        }

        #[test]
        fn projection_idempotent_nonexpansive(
            a1 in -3.0f64..3.0, a2 in -3.0f64..3.0, a3 in -3.0f64..3.0,
            b1 in -3.0f64..3.0, b2 in -3.0f64..3.0, b3 in -3.0f64..3.0,
        ) {
            let a = Vector3::new(a1, a2, a3);
            let b = Vector3::new(b1, b2, b3);
            let pa = bloch_project(&a).unwrap();
            let pb = bloch_project(&b).unwrap();
            prop_assert!(pa.norm() <= 1.0 + 1e-12);
            prop_assert!((bloch_project(&pa).unwrap() - pa).norm() < 1e-12);
            prop_assert!((pa - pb).norm() <= (a - b).norm() + 1e-12);
        }
    }
}
