//! Multiple-model adaptive estimator: a bank of observers, one per
//! candidate drift frequency, blended by exponentially reweighted model
//! probabilities.
//!
//! Weights update every `cadence` steps from the windowed innovation of
//! each member,
//!   w_l = (sum of innovations)^2 / (sigma_v^2 * window * dt),
//! normalized so a matched model scores O(1) regardless of dt, through
//! the recursion p_l <- beta_l exp(-w_l) p_l / sum_j p_j beta_j exp(-w_j).

use crate::config::EstimatorConfig;
use crate::model::ModelParams;
use crate::qubit::BlochVector;
use crate::sde::DriftScheme;

use super::ekf::{EkfOptions, ExtendedKalmanFilter};
use super::qf::QuantumFilter;
use super::{Estimator, EstimatorError, FilterOutput};

/// Which observer family populates the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberKind {
    QuantumFilter,
    Kalman,
}

/// Weight recursion. Inputs: current weights (positive, summing to one),
/// per-model constants beta (positive), and nonnegative error measures.
/// The common exp factor is shifted out before exponentiation, which
/// changes nothing algebraically (it cancels in the normalization) but
/// keeps extreme error values finite.
pub fn mmae_update_weights(weights: &[f64], betas: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(weights.len(), betas.len());
    assert_eq!(weights.len(), w.len());
    let w_min = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let numerators: Vec<f64> = weights
        .iter()
        .zip(betas)
        .zip(w)
        .map(|((&p, &beta), &wl)| p * beta * (-(wl - w_min)).exp())
        .collect();
    let denom: f64 = numerators.iter().sum();
    assert!(denom > 0.0, "weight recursion denominator vanished");
    let mut next: Vec<f64> = numerators.iter().map(|n| n / denom).collect();
    // Keep strict positivity even if a model has been driven to underflow.
    if next.iter().any(|&p| p <= 0.0) {
        for p in next.iter_mut() {
            *p = p.max(1e-300);
        }
        let s: f64 = next.iter().sum();
        for p in next.iter_mut() {
            *p /= s;
        }
    }
    next
}

/// Windowed error measure from an accumulated innovation sum.
pub fn windowed_error_measure(innovation_sum: f64, window: usize, sigma_v2: f64, dt: f64) -> f64 {
    innovation_sum * innovation_sum / (sigma_v2 * window as f64 * dt)
}

enum MemberFilter {
    Qf(QuantumFilter),
    Ekf(ExtendedKalmanFilter),
}

impl MemberFilter {
    fn step(&mut self, dy: f64, omega: f64, dt: f64) -> Result<(), EstimatorError> {
        match self {
            MemberFilter::Qf(f) => f.step(dy, omega, dt),
            MemberFilter::Ekf(f) => f.step(dy, omega, dt),
        }
    }

    fn xhat(&self) -> BlochVector {
        match self {
            MemberFilter::Qf(f) => *f.estimate(),
            MemberFilter::Ekf(f) => f.state().xhat,
        }
    }

    fn predicted_increment(&self, dt: f64) -> f64 {
        match self {
            MemberFilter::Qf(f) => f.model().output(f.estimate()) * dt,
            MemberFilter::Ekf(f) => f.model().output(&f.state().xhat) * dt,
        }
    }

    fn clamp_count(&self) -> usize {
        match self {
            MemberFilter::Qf(f) => f.clamp_count(),
            MemberFilter::Ekf(f) => f.clamp_count(),
        }
    }
}

pub struct MultiModelEstimator {
    members: Vec<MemberFilter>,
    weights: Vec<f64>,
    betas: Vec<f64>,
    cadence: usize,
    weight_floor: f64,
    sigma_v2: f64,
    innovation_sums: Vec<f64>,
    window_fill: usize,
}

impl MultiModelEstimator {
    /// Build the bank from the nominal model and the configured drift
    /// frequency multipliers. Every member starts from the same initial
    /// guess with equal weight.
    pub fn new(
        nominal: &ModelParams,
        cfg: &EstimatorConfig,
        kind: MemberKind,
        scheme: DriftScheme,
    ) -> Self {
        let mmae = &cfg.mmae;
        let xhat0: BlochVector = cfg.xhat0.into();
        let members: Vec<MemberFilter> = mmae
            .multipliers
            .iter()
            .map(|&mult| {
                let model = nominal
                    .with_drift_frequency(mult * nominal.drift_frequency)
                    .expect("bank model construction");
                match kind {
                    MemberKind::QuantumFilter => {
                        MemberFilter::Qf(QuantumFilter::new(model, xhat0, scheme))
                    }
                    MemberKind::Kalman => MemberFilter::Ekf(ExtendedKalmanFilter::new(
                        model,
                        xhat0,
                        EkfOptions::from_config(cfg),
                        scheme,
                    )),
                }
            })
            .collect();
        let n = members.len();
        let betas = mmae.betas.clone().unwrap_or_else(|| vec![1.0; n]);
        Self {
            members,
            weights: vec![1.0 / n as f64; n],
            betas,
            cadence: mmae.cadence,
            weight_floor: mmae.weight_floor,
            sigma_v2: nominal.sigma_v2(),
            innovation_sums: vec![0.0; n],
            window_fill: 0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn member_estimates(&self) -> Vec<BlochVector> {
        self.members.iter().map(|m| m.xhat()).collect()
    }

    /// Blended estimate: convex combination of the member estimates, which
    /// stays in the ball by convexity.
    pub fn blended(&self) -> BlochVector {
        self.members
            .iter()
            .zip(&self.weights)
            .map(|(m, &p)| m.xhat() * p)
            .sum()
    }

    fn apply_floor(&mut self) {
        if self.weight_floor > 0.0 {
            for p in self.weights.iter_mut() {
                *p = p.max(self.weight_floor);
            }
            let s: f64 = self.weights.iter().sum();
            for p in self.weights.iter_mut() {
                *p /= s;
            }
        }
    }
}

impl Estimator for MultiModelEstimator {
    fn step(&mut self, dy: f64, omega: f64, dt: f64) -> Result<(), EstimatorError> {
        for (member, sum) in self.members.iter_mut().zip(&mut self.innovation_sums) {
            *sum += dy - member.predicted_increment(dt);
            member.step(dy, omega, dt)?;
        }
        self.window_fill += 1;
        if self.window_fill == self.cadence {
            let w: Vec<f64> = self
                .innovation_sums
                .iter()
                .map(|&s| windowed_error_measure(s, self.cadence, self.sigma_v2, dt))
                .collect();
            self.weights = mmae_update_weights(&self.weights, &self.betas, &w);
            self.apply_floor();
            self.innovation_sums.iter_mut().for_each(|s| *s = 0.0);
            self.window_fill = 0;
        }
        Ok(())
    }

    fn output(&self) -> FilterOutput {
        let mut out = FilterOutput::from_xhat(self.blended());
        out.weights = Some(self.weights.clone());
        out
    }

    fn clamp_count(&self) -> usize {
        self.members.iter().map(|m| m.clamp_count()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn equal_errors_leave_weights_unchanged() {
        let p = vec![0.1, 0.2, 0.3, 0.4];
        let betas = vec![1.0; 4];
        let next = mmae_update_weights(&p, &betas, &[0.7; 4]);
        for (a, b) in next.iter().zip(&p) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_model_reference_value() {
        let next = mmae_update_weights(&[0.5, 0.5], &[1.0, 1.0], &[0.0, 2f64.ln()]);
        assert_abs_diff_eq!(next[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn beta_scaling_invariance() {
        let p = vec![0.25, 0.5, 0.25];
        let w = vec![0.1, 0.8, 0.3];
        let a = mmae_update_weights(&p, &[1.0, 1.0, 1.0], &w);
        let b = mmae_update_weights(&p, &[7.5, 7.5, 7.5], &w);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn error_measure_zero_for_perfect_prediction() {
        assert_eq!(windowed_error_measure(0.0, 10, 1.1, 1e-3), 0.0);
    }

    #[test]
    fn error_measure_dt_refinement_invariance() {
        // Same continuous signal accumulated at half the step with twice
        // the window gives the same measure.
        let bias_rate = 0.37;
        let coarse: f64 = (0..10).map(|_| bias_rate * 1e-3).sum();
        let fine: f64 = (0..20).map(|_| bias_rate * 5e-4).sum();
        let a = windowed_error_measure(coarse, 10, 1.1, 1e-3);
        let b = windowed_error_measure(fine, 20, 1.1, 5e-4);
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn weights_stay_on_simplex(
            raw in proptest::collection::vec(0.01f64..1.0, 5),
            w in proptest::collection::vec(0.0f64..50.0, 5),
            shift in 0.0f64..25.0,
        ) {
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let betas = vec![1.0; 5];
            let next = mmae_update_weights(&p, &betas, &w);
            let sum: f64 = next.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(next.iter().all(|&x| x > 0.0));
            // Invariance under a common shift of the error measures.
            let shifted: Vec<f64> = w.iter().map(|v| v + shift).collect();
            let next_shifted = mmae_update_weights(&p, &betas, &shifted);
            for (a, b) in next.iter().zip(&next_shifted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn bank_for_test() -> MultiModelEstimator {
        let nominal = ModelParams::leaky_cavity(10.0, 1.0, 0.8, 0.1, 50.0).unwrap();
        let cfg = EstimatorConfig {
            kind: "mmae-ekf".into(),
            ..EstimatorConfig::default()
        };
        MultiModelEstimator::new(&nominal, &cfg, MemberKind::Kalman, DriftScheme::SplitRk4)
    }

    #[test]
    fn blend_is_convex_combination() {
        let mut bank = bank_for_test();
        bank.weights = vec![0.0, 0.0, 1.0, 0.0, 0.0];
        let blended = bank.blended();
        assert_eq!(blended, bank.member_estimates()[2]);

        // Antipodal pair with equal weight cancels.
        let nominal = ModelParams::leaky_cavity(10.0, 1.0, 0.8, 0.1, 50.0).unwrap();
        let cfg = EstimatorConfig {
            kind: "mmae-qf".into(),
            mmae: crate::config::MmaeConfig {
                multipliers: vec![1.0, 1.0],
                ..Default::default()
            },
            ..EstimatorConfig::default()
        };
        let mut two =
            MultiModelEstimator::new(&nominal, &cfg, MemberKind::QuantumFilter, DriftScheme::Euler);
        if let MemberFilter::Qf(f) = &mut two.members[0] {
            *f = QuantumFilter::new(
                f.model().clone(),
                nalgebra::Vector3::new(0.0, 0.0, 1.0),
                DriftScheme::Euler,
            );
        }
        if let MemberFilter::Qf(f) = &mut two.members[1] {
            *f = QuantumFilter::new(
                f.model().clone(),
                nalgebra::Vector3::new(0.0, 0.0, -1.0),
                DriftScheme::Euler,
            );
        }
        assert!(two.blended().norm() < 1e-15);
    }

    #[test]
    fn weights_remain_normalized_through_noisy_run() {
        let mut bank = bank_for_test();
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        for step in 0..500 {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let dy = ((rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.2;
            bank.step(dy, 30.0, 1e-3).unwrap();
            let sum: f64 = bank.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "step {step}: sum {sum}");
            assert!(bank.weights().iter().all(|&p| p > 0.0));
        }
    }
}
