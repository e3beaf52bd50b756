//! Online estimators over SE(3)^(N-1): a single-mode EKF, the Gaussian-sum
//! filter (a likelihood-weighted bank of EKFs), and a bootstrap particle
//! filter baseline. All are seeded from the GI-LS mixture.

mod ekf;
mod gsf;
mod pf;

pub use ekf::{ekf_correct, ekf_predict, CorrectionInfo, EkfBelief};
pub use gsf::{gsf_estimate, gsf_from_mixture, gsf_step, GsfBelief, GsfEstimate, GsfOptions, GsfStepInfo};
pub use pf::{pf_estimate, pf_from_mixture, pf_step, ParticleBelief, PfEstimate, PfStepInfo};

use nalgebra::{DMatrix, DVector};

/// Draws a tangent-space sample with covariance `cov` (PSD, possibly
/// singular) using its symmetric eigendecomposition.
pub(crate) fn sample_tangent(cov: &DMatrix<f64>, rng: &mut impl rand::Rng) -> DVector<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let eig = nalgebra::SymmetricEigen::new(cov.clone());
    let n = cov.nrows();
    let mut z = DVector::zeros(n);
    for i in 0..n {
        let scale = eig.eigenvalues[i].max(0.0).sqrt();
        let g: f64 = StandardNormal.sample(rng);
        z[i] = scale * g;
    }
    &eig.eigenvectors * z
}

/// Normalizes log weights by log-sum-exp. Returns `None` when every entry
/// underflows to effectively zero probability.
pub(crate) fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let shifted: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    Some(shifted.into_iter().map(|w| w / total).collect())
}
