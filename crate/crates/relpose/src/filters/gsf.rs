//! Gaussian-sum filter: a bank of EKFs whose weights are updated by the
//! Gaussian likelihood of each incoming range snapshot under each mode's
//! predicted measurement distribution.

use nalgebra::{DMatrix, DVector};

use super::ekf::{ekf_correct, ekf_predict, EkfBelief};
use super::normalize_log_weights;
use crate::error::Result;
use crate::gils::GaussianMixture;
use crate::models::{
    MeasurementGraph, RangeSnapshot, RelativeState, RobotGeometry, VelocityInput,
};

/// Weighted bank of EKF modes; weights sum to one.
#[derive(Debug, Clone)]
pub struct GsfBelief {
    pub modes: Vec<(f64, EkfBelief)>,
}

/// Knobs for the weight update.
#[derive(Debug, Clone)]
pub struct GsfOptions {
    /// Weights never drop below this floor (renormalized afterwards), so a
    /// single outlier measurement cannot permanently kill a mode.
    pub weight_floor: f64,
    /// Optional pruning threshold; modes below it are dropped after the
    /// update. Off by default.
    pub prune_below: Option<f64>,
}

impl Default for GsfOptions {
    fn default() -> Self {
        GsfOptions {
            weight_floor: 1e-12,
            prune_below: None,
        }
    }
}

/// Diagnostics of one step.
#[derive(Debug, Clone, Default)]
pub struct GsfStepInfo {
    /// True when every mode's likelihood underflowed and the weights were
    /// reset to uniform.
    pub underflow_reset: bool,
}

/// One EKF per mixture mode, weights copied.
pub fn gsf_from_mixture(mix: &GaussianMixture) -> GsfBelief {
    GsfBelief {
        modes: mix
            .modes
            .iter()
            .map(|m| {
                (
                    m.weight,
                    EkfBelief {
                        mean: m.mean.clone(),
                        covariance: m.covariance.clone(),
                    },
                )
            })
            .collect(),
    }
}

/// Predicts and corrects every mode, then reweighs them by measurement
/// likelihood: `w <- w_prev * N(y; g(x_pred), S)`, normalized.
pub fn gsf_step(
    b: &GsfBelief,
    u_ref: &VelocityInput,
    ups: &[VelocityInput],
    dt: f64,
    y: &RangeSnapshot,
    geoms: &[RobotGeometry],
    graph: &MeasurementGraph,
    opts: &GsfOptions,
) -> Result<(GsfBelief, GsfStepInfo)> {
    let mut corrected = Vec::with_capacity(b.modes.len());
    let mut log_w = Vec::with_capacity(b.modes.len());
    for (w, mode) in &b.modes {
        let predicted = ekf_predict(mode, u_ref, ups, dt)?;
        let (updated, info) = ekf_correct(&predicted, y, geoms, graph)?;
        log_w.push(w.max(f64::MIN_POSITIVE).ln() + info.log_likelihood);
        corrected.push(updated);
    }

    let mut info = GsfStepInfo::default();
    let mut weights = match normalize_log_weights(&log_w) {
        Some(w) => w,
        None => {
            info.underflow_reset = true;
            vec![1.0 / corrected.len() as f64; corrected.len()]
        }
    };

    // floor and renormalize
    for w in weights.iter_mut() {
        *w = w.max(opts.weight_floor);
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }

    let mut modes: Vec<(f64, EkfBelief)> = weights.into_iter().zip(corrected).collect();
    if let Some(threshold) = opts.prune_below {
        let kept: Vec<(f64, EkfBelief)> = modes
            .iter()
            .filter(|(w, _)| *w >= threshold)
            .cloned()
            .collect();
        if !kept.is_empty() {
            let total: f64 = kept.iter().map(|(w, _)| w).sum();
            modes = kept
                .into_iter()
                .map(|(w, m)| (w / total, m))
                .collect();
        }
    }
    Ok((GsfBelief { modes }, info))
}

/// Point estimate extracted from the bank.
#[derive(Debug, Clone)]
pub struct GsfEstimate {
    /// Weighted mean, averaged in the tangent space anchored at the
    /// max-weight mode.
    pub mean: RelativeState,
    /// Covariance of the max-weight mode.
    pub covariance: DMatrix<f64>,
    /// Index of the max-weight mode (ties resolve to the lowest index).
    pub max_weight_index: usize,
    /// The raw max-weight mode mean, without averaging.
    pub argmax_mean: RelativeState,
}

/// Weighted-average mean anchored at the argmax mode; covariance of the
/// argmax mode. Modes whose relative rotation sits at the logarithm cut
/// locus are excluded from the average (their weight renormalized away).
pub fn gsf_estimate(b: &GsfBelief) -> Result<GsfEstimate> {
    if b.modes.is_empty() {
        return Err(crate::error::Error::invalid("empty belief"));
    }
    let mut best = 0;
    for (i, (w, _)) in b.modes.iter().enumerate() {
        if *w > b.modes[best].0 {
            best = i;
        }
    }
    let anchor = &b.modes[best].1.mean;
    let mut delta = DVector::zeros(anchor.tangent_len());
    let mut used_weight = 0.0;
    let mut contributions = Vec::with_capacity(b.modes.len());
    for (w, mode) in &b.modes {
        match anchor.tangent_to(&mode.mean) {
            Ok(t) => {
                contributions.push((*w, t));
                used_weight += *w;
            }
            Err(_) => {}
        }
    }
    if used_weight > 0.0 {
        for (w, t) in contributions {
            delta += t * (w / used_weight);
        }
    }
    let mean = anchor.oplus(&delta)?;
    Ok(GsfEstimate {
        mean,
        covariance: b.modes[best].1.covariance.clone(),
        max_weight_index: best,
        argmax_mean: anchor.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::exp_map;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn square_tags(robot_id: u32, base_tag: u32) -> RobotGeometry {
        RobotGeometry::new(
            robot_id,
            vec![
                (base_tag, DVector::from_vec(vec![0.17, 0.17, 0.0])),
                (base_tag + 1, DVector::from_vec(vec![0.17, -0.17, 0.0])),
            ],
        )
        .unwrap()
    }

    fn two_robot_scene() -> (Vec<RobotGeometry>, MeasurementGraph) {
        let geoms = vec![square_tags(1, 1), square_tags(2, 3)];
        let graph = MeasurementGraph::full_inter_robot(&geoms, 0.1).unwrap();
        (geoms, graph)
    }

    fn random_mode(rng: &mut StdRng) -> EkfBelief {
        let mut v = DVector::from_iterator(6, (0..6).map(|_| rng.gen_range(-0.5..0.5)));
        v[3] += 2.0;
        EkfBelief {
            mean: RelativeState::new(vec![exp_map(&v).unwrap()]).unwrap(),
            covariance: DMatrix::identity(6, 6) * 0.05,
        }
    }

    fn inputs(rng: &mut StdRng) -> (VelocityInput, Vec<VelocityInput>) {
        let q = DMatrix::identity(6, 6) * 1e-4;
        let mk = |id: u32, rng: &mut StdRng| {
            VelocityInput::new(
                id,
                0.0,
                DVector::from_iterator(6, (0..6).map(|_| rng.gen_range(-0.5..0.5))),
                q.clone(),
            )
            .unwrap()
        };
        (mk(1, rng), vec![mk(2, rng)])
    }

    #[test]
    fn single_mode_weight_stays_one() {
        let mut rng = StdRng::seed_from_u64(60);
        let (geoms, graph) = two_robot_scene();
        let mode = random_mode(&mut rng);
        let (u1, ups) = inputs(&mut rng);
        let b = GsfBelief {
            modes: vec![(1.0, mode.clone())],
        };
        let y = RangeSnapshot::new(
            0.02,
            crate::models::range_stack(&mode.mean, &geoms, &graph).unwrap(),
        )
        .unwrap();
        let (out, info) =
            gsf_step(&b, &u1, &ups, 0.02, &y, &geoms, &graph, &GsfOptions::default()).unwrap();
        assert_eq!(out.modes.len(), 1);
        assert_eq!(out.modes[0].0, 1.0);
        assert!(!info.underflow_reset);
    }

    #[test]
    fn identical_modes_keep_equal_weights() {
        let mut rng = StdRng::seed_from_u64(61);
        let (geoms, graph) = two_robot_scene();
        let mode = random_mode(&mut rng);
        let (u1, ups) = inputs(&mut rng);
        let b = GsfBelief {
            modes: vec![(0.5, mode.clone()), (0.5, mode.clone())],
        };
        let y = RangeSnapshot::new(
            0.02,
            crate::models::range_stack(&mode.mean, &geoms, &graph).unwrap(),
        )
        .unwrap();
        let (out, _) =
            gsf_step(&b, &u1, &ups, 0.02, &y, &geoms, &graph, &GsfOptions::default()).unwrap();
        assert!((out.modes[0].0 - 0.5).abs() < 1e-12);
        assert!((out.modes[1].0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_mode_gsf_equals_plain_ekf() {
        let mut rng = StdRng::seed_from_u64(62);
        let (geoms, graph) = two_robot_scene();
        let mode = random_mode(&mut rng);
        let (u1, ups) = inputs(&mut rng);
        let dt = 0.02;
        let mut y_vals = crate::models::range_stack(&mode.mean, &geoms, &graph).unwrap();
        for v in y_vals.iter_mut() {
            *v = (*v + rng.gen_range(-0.1..0.1)).max(0.01);
        }
        let y = RangeSnapshot::new(dt, y_vals).unwrap();

        let b = GsfBelief {
            modes: vec![(1.0, mode.clone())],
        };
        let (gsf_out, _) =
            gsf_step(&b, &u1, &ups, dt, &y, &geoms, &graph, &GsfOptions::default()).unwrap();

        let predicted = ekf_predict(&mode, &u1, &ups, dt).unwrap();
        let (ekf_out, _) = ekf_correct(&predicted, &y, &geoms, &graph).unwrap();

        let dmean = ekf_out
            .mean
            .tangent_to(&gsf_out.modes[0].1.mean)
            .unwrap()
            .norm();
        let dcov = (&gsf_out.modes[0].1.covariance - &ekf_out.covariance).amax();
        assert!(dmean < 1e-12, "means differ by {dmean}");
        assert!(dcov < 1e-12, "covariances differ by {dcov}");
    }

    #[test]
    fn weights_stay_on_simplex() {
        let mut rng = StdRng::seed_from_u64(63);
        let (geoms, graph) = two_robot_scene();
        let (u1, ups) = inputs(&mut rng);
        let mut b = GsfBelief {
            modes: (0..4).map(|_| (0.25, random_mode(&mut rng))).collect(),
        };
        for step in 0..20 {
            let truth = b.modes[0].1.mean.clone();
            let mut vals = crate::models::range_stack(&truth, &geoms, &graph).unwrap();
            for v in vals.iter_mut() {
                *v = (*v + rng.gen_range(-0.1..0.1)).max(0.01);
            }
            let y = RangeSnapshot::new(step as f64 * 0.02, vals).unwrap();
            let (next, _) =
                gsf_step(&b, &u1, &ups, 0.02, &y, &geoms, &graph, &GsfOptions::default())
                    .unwrap();
            b = next;
            let total: f64 = b.modes.iter().map(|(w, _)| w).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(b.modes.iter().all(|(w, _)| *w >= 0.0));
        }
    }

    #[test]
    fn estimate_single_mode_passthrough() {
        let mut rng = StdRng::seed_from_u64(64);
        let mode = random_mode(&mut rng);
        let b = GsfBelief {
            modes: vec![(1.0, mode.clone())],
        };
        let est = gsf_estimate(&b).unwrap();
        assert_eq!(est.max_weight_index, 0);
        assert!(mode.mean.tangent_to(&est.mean).unwrap().norm() < 1e-15);
        assert_eq!(est.covariance, mode.covariance);
    }

    #[test]
    fn estimate_is_continuous_at_degenerate_weights() {
        let mut rng = StdRng::seed_from_u64(65);
        let dominant = random_mode(&mut rng);
        let other = random_mode(&mut rng);
        let b = GsfBelief {
            modes: vec![(1.0 - 1e-12, dominant.clone()), (1e-12, other)],
        };
        let est = gsf_estimate(&b).unwrap();
        assert_eq!(est.max_weight_index, 0);
        assert!(dominant.mean.tangent_to(&est.mean).unwrap().norm() < 1e-9);
    }

    #[test]
    fn estimate_tie_breaks_to_lowest_index() {
        let mut rng = StdRng::seed_from_u64(66);
        let a = random_mode(&mut rng);
        let c = random_mode(&mut rng);
        let b = GsfBelief {
            modes: vec![(0.5, a.clone()), (0.5, c)],
        };
        let est = gsf_estimate(&b).unwrap();
        assert_eq!(est.max_weight_index, 0);
        assert!(a.mean.tangent_to(&est.argmax_mean).unwrap().norm() == 0.0);
    }
}
