//! Geometrically-initialized least squares (GI-LS).
//!
//! Refines every geometric mode combination against averaged static ranges
//! by Gauss-Newton on SE(2)^(N-1), estimates per-mode covariances from the
//! residual, merges modes that converged together, and lifts the survivors
//! to SE(3) as an equally-weighted Gaussian mixture that seeds the filters.

use nalgebra::{DMatrix, DVector};

use crate::ambiguity::{self, PairRanges};
use crate::error::{Error, Result};
use crate::liegroup::Pose;
use crate::models::{self, MeasurementGraph, RangeSnapshot, RelativeState, RobotGeometry};

/// Element-wise mean of static range snapshots.
#[derive(Debug, Clone)]
pub struct AveragedRanges {
    pub ybar: DVector<f64>,
    /// Number of snapshots averaged (gamma).
    pub count: usize,
    /// Time window the average covers.
    pub window: (f64, f64),
}

/// One component of the initialization mixture.
#[derive(Debug, Clone)]
pub struct GaussianMode {
    pub weight: f64,
    pub mean: RelativeState,
    /// Tangent-space covariance under the right-perturbation convention.
    pub covariance: DMatrix<f64>,
}

/// Normalized collection of Gaussian modes.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    pub modes: Vec<GaussianMode>,
}

/// Gauss-Newton options. Defaults: full steps with up to five backtracking
/// halvings, stop when the step norm drops below 1e-8 or after 50 iterations.
#[derive(Debug, Clone)]
pub struct RefineOptions {
    pub step_scale: f64,
    pub max_iter: usize,
    pub step_tol: f64,
    pub max_backtracks: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            step_scale: 1.0,
            max_iter: 50,
            step_tol: 1e-8,
            max_backtracks: 5,
        }
    }
}

/// Result of refining one mode.
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub state: RelativeState,
    pub iterations: usize,
    /// Sum of squared residuals at the final iterate.
    pub cost: f64,
    /// False when the iteration stalled without meeting the step tolerance.
    pub converged: bool,
}

/// Element-wise arithmetic mean of the snapshots; gamma is the count.
pub fn average_ranges(snapshots: &[RangeSnapshot]) -> Result<AveragedRanges> {
    if snapshots.is_empty() {
        return Err(Error::invalid("cannot average zero range snapshots"));
    }
    let len = snapshots[0].values.len();
    let mut acc = DVector::zeros(len);
    for s in snapshots {
        if s.values.len() != len {
            return Err(Error::invalid("inconsistent snapshot lengths"));
        }
        acc += &s.values;
    }
    acc /= snapshots.len() as f64;
    Ok(AveragedRanges {
        ybar: acc,
        count: snapshots.len(),
        window: (
            snapshots.first().unwrap().timestamp,
            snapshots.last().unwrap().timestamp,
        ),
    })
}

fn residual(
    x: &RelativeState,
    ybar: &DVector<f64>,
    geoms: &[RobotGeometry],
    graph: &MeasurementGraph,
) -> Result<DVector<f64>> {
    Ok(models::range_stack(x, geoms, graph)? - ybar)
}

/// Solves the normal equations `(H^T H) dx = -H^T e` with a symmetrized
/// Cholesky factorization; falls back to an eigenvalue rank check so that
/// rank deficiency surfaces as a degenerate-geometry error.
fn normal_step(h: &DMatrix<f64>, e: &DVector<f64>) -> Result<DVector<f64>> {
    let mut hth = h.transpose() * h;
    hth = (&hth + hth.transpose()) * 0.5;
    let rhs = -(h.transpose() * e);
    if let Some(chol) = hth.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    let eig = nalgebra::SymmetricEigen::new(hth);
    let max_eig = eig.eigenvalues.amax();
    let threshold = 1e-10 * max_eig.max(1e-300);
    if eig.eigenvalues.iter().any(|&v| v < threshold) {
        return Err(Error::DegenerateGeometry(
            "normal equations are rank deficient".into(),
        ));
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose() * rhs)
}

/// Gauss-Newton refinement of one geometric mode against averaged ranges.
pub fn refine_mode(
    x0: &RelativeState,
    ybar: &AveragedRanges,
    geoms: &[RobotGeometry],
    graph: &MeasurementGraph,
    opts: &RefineOptions,
) -> Result<RefineOutcome> {
    if graph.len() < x0.tangent_len() {
        return Err(Error::DegenerateGeometry(format!(
            "{} edges cannot constrain a {}-dimensional state",
            graph.len(),
            x0.tangent_len()
        )));
    }
    let mut x = x0.clone();
    let mut e = residual(&x, &ybar.ybar, geoms, graph)?;
    let mut cost = e.norm_squared();
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let h = models::meas_jacobian(&x, geoms, graph)?;
        let dx = normal_step(&h, &e)?;
        iterations += 1;
        if dx.norm() < opts.step_tol {
            converged = true;
            break;
        }
        // backtracking: halve the step while the cost increases
        let mut lambda = opts.step_scale;
        let mut accepted = false;
        for _ in 0..=opts.max_backtracks {
            let candidate = x.oplus(&(&dx * lambda))?;
            let e_new = residual(&candidate, &ybar.ybar, geoms, graph)?;
            let cost_new = e_new.norm_squared();
            if cost_new <= cost {
                x = candidate;
                e = e_new;
                cost = cost_new;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // no step length makes progress from here
            break;
        }
    }
    Ok(RefineOutcome {
        state: x,
        iterations,
        cost,
        converged,
    })
}

/// Least-squares covariance at the refined estimate:
/// `P = Sigma (H^T H)^-1` with `Sigma = e^T e / L`, `L = |E| - (N - 2)`.
/// Returns the symmetrized, PSD-clamped covariance and the scale Sigma.
pub fn mode_covariance(
    xhat: &RelativeState,
    ybar: &AveragedRanges,
    geoms: &[RobotGeometry],
    graph: &MeasurementGraph,
) -> Result<(DMatrix<f64>, f64)> {
    let n_robots = xhat.len() + 1;
    let l = graph.len() as f64 - (n_robots as f64 - 2.0);
    if l <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "not enough edges for a residual covariance".into(),
        ));
    }
    let e = residual(xhat, &ybar.ybar, geoms, graph)?;
    let sigma = e.norm_squared() / l;
    let h = models::meas_jacobian(xhat, geoms, graph)?;
    let mut hth = h.transpose() * &h;
    hth = (&hth + hth.transpose()) * 0.5;
    let chol = hth
        .cholesky()
        .ok_or_else(|| Error::DegenerateGeometry("singular normal equations".into()))?;
    let p = chol.inverse() * sigma;
    Ok((clamp_psd(p), sigma))
}

/// Symmetrizes and clamps eigenvalues at zero.
pub fn clamp_psd(p: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&p + p.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// A refined mode awaiting deduplication.
#[derive(Debug, Clone)]
pub struct RefinedMode {
    pub state: RelativeState,
    pub covariance: DMatrix<f64>,
    pub cost: f64,
}

/// Blockwise tangent distance between two states; modes whose relative
/// rotation sits at the logarithm cut locus are treated as far apart.
fn mode_distance(a: &RelativeState, b: &RelativeState) -> f64 {
    match a.tangent_to(b) {
        Ok(t) => t.norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Merges modes closer than `merge_tol` in blockwise tangent distance,
/// keeping the lower-cost member. Idempotent.
pub fn deduplicate_modes(modes: Vec<RefinedMode>, merge_tol: f64) -> Vec<RefinedMode> {
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| modes[a].cost.partial_cmp(&modes[b].cost).unwrap());
    let mut kept: Vec<RefinedMode> = Vec::new();
    for idx in order {
        let candidate = &modes[idx];
        if kept
            .iter()
            .all(|k| mode_distance(&k.state, &candidate.state) >= merge_tol)
        {
            kept.push(candidate.clone());
        }
    }
    kept
}

/// Default standard deviation floor for the lifted roll/pitch directions.
pub const LIFT_PRIOR_STD_ROT: f64 = 0.05;
/// Default standard deviation floor for the lifted z direction.
pub const LIFT_PRIOR_STD_Z: f64 = 0.05;

/// Lifts a planar state and covariance to SE(3): yaw becomes rotation about
/// z, (x, y) are preserved with z = 0, and the covariance is embedded into
/// the (yaw, x, y) tangent sub-block with a prior floor on roll/pitch/z.
pub fn lift_to_se3(
    x2d: &RelativeState,
    p2d: &DMatrix<f64>,
) -> Result<(RelativeState, DMatrix<f64>)> {
    if x2d.group_dim() != 2 {
        return Err(Error::invalid("lift input must be planar"));
    }
    let count = x2d.len();
    if p2d.nrows() != 3 * count || p2d.ncols() != 3 * count {
        return Err(Error::invalid("planar covariance has wrong shape"));
    }
    let mut poses = Vec::with_capacity(count);
    for pose in x2d.poses() {
        let yaw = pose.yaw();
        let t = pose.translation();
        poses.push(Pose::new(
            crate::liegroup::Rotation::from_yaw(yaw),
            DVector::from_vec(vec![t[0], t[1], 0.0]),
        )?);
    }
    // SE(2) tangent [theta, x, y] maps onto SE(3) tangent rows [2, 3, 4]
    let map = [2usize, 3, 4];
    let mut p3d = DMatrix::zeros(6 * count, 6 * count);
    for a in 0..count {
        for b in 0..count {
            for (i2, &i3) in map.iter().enumerate() {
                for (j2, &j3) in map.iter().enumerate() {
                    p3d[(6 * a + i3, 6 * b + j3)] = p2d[(3 * a + i2, 3 * b + j2)];
                }
            }
        }
        let rr = LIFT_PRIOR_STD_ROT * LIFT_PRIOR_STD_ROT;
        let zz = LIFT_PRIOR_STD_Z * LIFT_PRIOR_STD_Z;
        p3d[(6 * a, 6 * a)] = rr;
        p3d[(6 * a + 1, 6 * a + 1)] = rr;
        p3d[(6 * a + 5, 6 * a + 5)] = zz;
    }
    Ok((RelativeState::new(poses)?, p3d))
}

/// Equal-weight mixture over the surviving modes.
pub fn build_mixture(modes: Vec<(RelativeState, DMatrix<f64>)>) -> Result<GaussianMixture> {
    if modes.is_empty() {
        return Err(Error::NoSolution("mixture needs at least one mode".into()));
    }
    let w = 1.0 / modes.len() as f64;
    Ok(GaussianMixture {
        modes: modes
            .into_iter()
            .map(|(mean, covariance)| GaussianMode {
                weight: w,
                mean,
                covariance,
            })
            .collect(),
    })
}

/// Tangent-distance threshold below which refined modes merge.
pub const MERGE_TOL: f64 = 0.1;

/// Diagnostics from the end-to-end initialization pipeline.
#[derive(Debug, Clone)]
pub struct InitDiagnostics {
    pub combination_count: usize,
    pub refined_count: usize,
    pub surviving_costs: Vec<f64>,
}

/// End-to-end GI-LS initialization: averages static snapshots, enumerates
/// the geometric ambiguities per robot pair, refines every combination on
/// the full graph, deduplicates, and lifts to an SE(3) mixture.
///
/// `geoms` holds all N robots (reference first); the geometric stage works
/// on their xy-projections.
pub fn initialize(
    geoms: &[RobotGeometry],
    graph: &MeasurementGraph,
    snapshots: &[RangeSnapshot],
    opts: &RefineOptions,
) -> Result<(GaussianMixture, InitDiagnostics)> {
    if geoms.len() < 2 {
        return Err(Error::invalid("need at least two robots"));
    }
    let averaged = average_ranges(snapshots)?;
    let planar: Vec<RobotGeometry> = geoms.iter().map(|g| g.planar()).collect();

    let mut sets = Vec::with_capacity(planar.len() - 1);
    for tgt in &planar[1..] {
        let pr = PairRanges::from_stack(graph, &averaged.ybar, &planar[0], tgt)?;
        sets.push(ambiguity::solve_pair(&planar[0], tgt, &pr)?);
    }
    let combos = ambiguity::enumerate_combinations(&sets)?;
    let combination_count = combos.len();

    let mut refined = Vec::new();
    for combo in &combos {
        let outcome = refine_mode(&combo.state, &averaged, &planar, graph, opts)?;
        if !outcome.converged {
            continue;
        }
        let (cov, _sigma) = mode_covariance(&outcome.state, &averaged, &planar, graph)?;
        refined.push(RefinedMode {
            state: outcome.state,
            covariance: cov,
            cost: outcome.cost,
        });
    }
    if refined.is_empty() {
        return Err(Error::NoSolution(
            "no geometric mode survived refinement".into(),
        ));
    }
    let refined_count = refined.len();
    let survivors = deduplicate_modes(refined, MERGE_TOL);
    let surviving_costs: Vec<f64> = survivors.iter().map(|m| m.cost).collect();

    let mut lifted = Vec::with_capacity(survivors.len());
    for m in &survivors {
        lifted.push(lift_to_se3(&m.state, &m.covariance)?);
    }
    let mixture = build_mixture(lifted)?;
    Ok((
        mixture,
        InitDiagnostics {
            combination_count,
            refined_count,
            surviving_costs,
        },
    ))
}
