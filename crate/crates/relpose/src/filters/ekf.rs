//! Extended Kalman filter on the relative-pose manifold: means live on
//! SE(3)^(N-1), covariances in the right-perturbation tangent space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gils::clamp_psd;
use crate::models::{
    self, MeasurementGraph, RangeSnapshot, RelativeState, RobotGeometry, VelocityInput,
};

/// Gaussian belief: mean on the group, covariance in the tangent.
#[derive(Debug, Clone)]
pub struct EkfBelief {
    pub mean: RelativeState,
    pub covariance: DMatrix<f64>,
}

/// By-products of a correction step.
#[derive(Debug, Clone)]
pub struct CorrectionInfo {
    /// Innovation covariance `S = H P H^T + R`.
    pub innovation_cov: DMatrix<f64>,
    /// Log of the Gaussian measurement likelihood `N(y; g(x), S)`.
    pub log_likelihood: f64,
}

/// Prediction: mean through the process model, covariance through
/// `A P A^T + Q_state` with the input-noise mapping assembled from the
/// per-robot input Jacobians.
pub fn ekf_predict(
    b: &EkfBelief,
    u_ref: &VelocityInput,
    ups: &[VelocityInput],
    dt: f64,
) -> Result<EkfBelief> {
    let mean = models::propagate(&b.mean, u_ref, ups, dt)?;
    let a = models::process_jacobian(ups, dt)?;
    let q = models::process_noise_covariance(&b.mean, u_ref, ups, dt)?;
    let covariance = &a * &b.covariance * a.transpose() + q;
    Ok(EkfBelief {
        mean,
        covariance: (&covariance + covariance.transpose()) * 0.5,
    })
}

/// Log-density of `N(residual; 0, s)` via the Cholesky factor of `s`.
fn gaussian_log_density(residual: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("innovation covariance not invertible".into()))?;
    let k = residual.len() as f64;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let maha = residual.dot(&chol.solve(residual));
    Ok(-0.5 * (k * (2.0 * std::f64::consts::PI).ln() + log_det + maha))
}

/// Correction: standard EKF update with the mean updated on the manifold,
/// `x <- x (+) K (y - g(x))`, and a Joseph-form covariance update.
pub fn ekf_correct(
    b: &EkfBelief,
    y: &RangeSnapshot,
    geoms: &[RobotGeometry],
    graph: &MeasurementGraph,
) -> Result<(EkfBelief, CorrectionInfo)> {
    if y.values.len() != graph.len() {
        return Err(Error::invalid("measurement length does not match graph"));
    }
    let h = models::meas_jacobian(&b.mean, geoms, graph)?;
    let predicted = models::range_stack(&b.mean, geoms, graph)?;
    let r = graph.noise_covariance();
    let s = &h * &b.covariance * h.transpose() + &r;
    let s = (&s + s.transpose()) * 0.5;
    let innovation = &y.values - &predicted;
    let log_likelihood = gaussian_log_density(&innovation, &s)?;

    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("innovation covariance not invertible".into()))?;
    // K = P H^T S^-1, via S K^T = H P
    let k_t = chol.solve(&(&h * &b.covariance));
    let k = k_t.transpose();

    let mean = b.mean.oplus(&(&k * &innovation))?;
    let eye = DMatrix::identity(b.covariance.nrows(), b.covariance.ncols());
    let ikh = &eye - &k * &h;
    let covariance = &ikh * &b.covariance * ikh.transpose() + &k * &r * k.transpose();
    Ok((
        EkfBelief {
            mean,
            covariance: clamp_psd(covariance),
        },
        CorrectionInfo {
            innovation_cov: s,
            log_likelihood,
        },
    ))
}
