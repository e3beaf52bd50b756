//! Bootstrap particle filter baseline: particles propagate through the
//! process model with sampled input noise, are weighted by the range
//! likelihood under the diagonal measurement covariance, and are
//! systematically resampled when the effective sample size halves.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::sample_tangent;
use crate::error::{Error, Result};
use crate::gils::GaussianMixture;
use crate::models::{
    self, MeasurementGraph, RangeSnapshot, RelativeState, RobotGeometry, VelocityInput,
};

/// Weighted particle set over SE(3)^(N-1).
#[derive(Debug, Clone)]
pub struct ParticleBelief {
    pub particles: Vec<RelativeState>,
    pub weights: Vec<f64>,
}

impl ParticleBelief {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Effective sample size, `1 / sum(w^2)`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Diagnostics of one step.
#[derive(Debug, Clone, Default)]
pub struct PfStepInfo {
    pub resampled: bool,
    pub effective_sample_size: f64,
    /// True when every particle's likelihood underflowed and the weights
    /// were reset to the predictive (uniform) distribution.
    pub weight_collapse: bool,
}

/// Samples `count` particles from the mixture, stratified by weight:
/// each mode receives floor(w * count) particles and the remainder goes to
/// the largest fractional parts, then each particle is perturbed in the
/// tangent space by its mode's covariance.
pub fn pf_from_mixture(
    mix: &GaussianMixture,
    count: usize,
    rng: &mut impl Rng,
) -> Result<ParticleBelief> {
    if count == 0 {
        return Err(Error::invalid("particle count must be positive"));
    }
    let mut counts: Vec<usize> = mix
        .modes
        .iter()
        .map(|m| (m.weight * count as f64).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut fractions: Vec<(usize, f64)> = mix
        .modes
        .iter()
        .enumerate()
        .map(|(i, m)| (i, m.weight * count as f64 - counts[i] as f64))
        .collect();
    fractions.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..(count - assigned) {
        counts[fractions[k % fractions.len()].0] += 1;
    }

    let mut particles = Vec::with_capacity(count);
    for (mode, n) in mix.modes.iter().zip(&counts) {
        for _ in 0..*n {
            let delta = sample_tangent(&mode.covariance, rng);
            particles.push(mode.mean.oplus(&delta)?);
        }
    }
    let w = 1.0 / count as f64;
    Ok(ParticleBelief {
        weights: vec![w; particles.len()],
        particles,
    })
}

/// Log-likelihood of a range snapshot under independent per-edge Gaussians.
fn range_log_likelihood(
    x: &RelativeState,
    y: &RangeSnapshot,
    geoms: &[RobotGeometry],
    graph: &MeasurementGraph,
) -> Result<f64> {
    let predicted = models::range_stack(x, geoms, graph)?;
    let mut ll = 0.0;
    for (k, edge) in graph.edges().iter().enumerate() {
        let nu = y.values[k] - predicted[k];
        let var = edge.sigma * edge.sigma;
        ll += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + nu * nu / var);
    }
    Ok(ll)
}

/// Systematic resampling: one uniform offset, `count` evenly spaced probes
/// through the cumulative weights.
fn systematic_resample(b: &ParticleBelief, rng: &mut impl Rng) -> ParticleBelief {
    let count = b.len();
    let offset: f64 = rng.gen_range(0.0..1.0) / count as f64;
    let mut particles = Vec::with_capacity(count);
    let mut cumulative = b.weights[0];
    let mut idx = 0;
    for k in 0..count {
        let probe = offset + k as f64 / count as f64;
        while probe > cumulative && idx + 1 < count {
            idx += 1;
            cumulative += b.weights[idx];
        }
        particles.push(b.particles[idx].clone());
    }
    ParticleBelief {
        particles,
        weights: vec![1.0 / count as f64; count],
    }
}

/// One bootstrap step: propagate with sampled input noise, reweigh by
/// measurement likelihood, resample if the effective sample size drops
/// below half the particle count.
#[allow(clippy::too_many_arguments)]
pub fn pf_step(
    b: &ParticleBelief,
    u_ref: &VelocityInput,
    ups: &[VelocityInput],
    dt: f64,
    y: &RangeSnapshot,
    geoms: &[RobotGeometry],
    graph: &MeasurementGraph,
    rng: &mut impl Rng,
) -> Result<(ParticleBelief, PfStepInfo)> {
    if b.is_empty() {
        return Err(Error::invalid("empty particle belief"));
    }
    let mut propagated = Vec::with_capacity(b.len());
    let mut log_w = Vec::with_capacity(b.len());
    for (particle, w) in b.particles.iter().zip(&b.weights) {
        // per-particle input noise draw (shared reference noise within a
        // particle, independent across particles)
        let mut u1 = u_ref.clone();
        u1.u += sample_tangent(&u_ref.q, rng);
        let mut ups_noisy = ups.to_vec();
        for up in ups_noisy.iter_mut() {
            let noise = sample_tangent(&up.q, rng);
            up.u += noise;
        }
        let next = models::propagate(particle, &u1, &ups_noisy, dt)?;
        log_w.push(w.max(f64::MIN_POSITIVE).ln() + range_log_likelihood(&next, y, geoms, graph)?);
        propagated.push(next);
    }

    let mut info = PfStepInfo::default();
    let weights = match super::normalize_log_weights(&log_w) {
        Some(w) => w,
        None => {
            info.weight_collapse = true;
            vec![1.0 / propagated.len() as f64; propagated.len()]
        }
    };
    let mut belief = ParticleBelief {
        particles: propagated,
        weights,
    };
    info.effective_sample_size = belief.effective_sample_size();
    if info.effective_sample_size < belief.len() as f64 / 2.0 {
        belief = systematic_resample(&belief, rng);
        info.resampled = true;
    }
    Ok((belief, info))
}

/// Point estimate from the particle set.
#[derive(Debug, Clone)]
pub struct PfEstimate {
    /// Weighted mean in the tangent space anchored at the max-weight
    /// particle.
    pub mean: RelativeState,
    /// Weighted sample covariance in the same tangent space.
    pub covariance: DMatrix<f64>,
}

/// Weighted tangent-space mean and sample covariance, anchored at the
/// max-weight particle; particles at the logarithm cut locus are skipped
/// with their weight renormalized away.
pub fn pf_estimate(b: &ParticleBelief) -> Result<PfEstimate> {
    if b.is_empty() {
        return Err(Error::invalid("empty particle belief"));
    }
    let mut best = 0;
    for (i, w) in b.weights.iter().enumerate() {
        if *w > b.weights[best] {
            best = i;
        }
    }
    let anchor = &b.particles[best];
    let dim = anchor.tangent_len();
    let mut tangents = Vec::with_capacity(b.len());
    let mut used = 0.0;
    for (particle, w) in b.particles.iter().zip(&b.weights) {
        if let Ok(t) = anchor.tangent_to(particle) {
            tangents.push((*w, t));
            used += *w;
        }
    }
    let mut mean_t = DVector::zeros(dim);
    for (w, t) in &tangents {
        mean_t += t * (*w / used);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (w, t) in &tangents {
        let d = t - &mean_t;
        cov += (&d * d.transpose()) * (*w / used);
    }
    Ok(PfEstimate {
        mean: anchor.oplus(&mean_t)?,
        covariance: cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gils::GaussianMode;
    use crate::liegroup::{exp_map, Pose, Rotation};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

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

    fn zero_input(id: u32) -> VelocityInput {
        VelocityInput::new(id, 0.0, DVector::zeros(6), DMatrix::zeros(6, 6)).unwrap()
    }

    fn truth_state() -> RelativeState {
        RelativeState::new(vec![Pose::new(
            Rotation::identity(3),
            DVector::from_vec(vec![2.0, 0.5, 0.0]),
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn noiseless_particles_at_truth_stay_put() {
        let (geoms, graph) = two_robot_scene();
        let truth = truth_state();
        let b = ParticleBelief {
            particles: vec![truth.clone(); 20],
            weights: vec![1.0 / 20.0; 20],
        };
        let y = RangeSnapshot::new(
            0.02,
            models::range_stack(&truth, &geoms, &graph).unwrap(),
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(70);
        let (out, info) = pf_step(
            &b,
            &zero_input(1),
            &[zero_input(2)],
            0.02,
            &y,
            &geoms,
            &graph,
            &mut rng,
        )
        .unwrap();
        assert!(!info.resampled);
        assert!((info.effective_sample_size - 20.0).abs() < 1e-9);
        for (p, w) in out.particles.iter().zip(&out.weights) {
            assert!(truth.tangent_to(p).unwrap().norm() < 1e-14);
            assert!((w - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn ess_of_uniform_weights_is_count() {
        let b = ParticleBelief {
            particles: vec![truth_state(); 64],
            weights: vec![1.0 / 64.0; 64],
        };
        assert!((b.effective_sample_size() - 64.0).abs() < 1e-9);
    }

    #[test]
    fn from_mixture_produces_exact_count() {
        let mut rng = StdRng::seed_from_u64(71);
        let mix = GaussianMixture {
            modes: (0..8)
                .map(|k| GaussianMode {
                    weight: 0.125,
                    mean: RelativeState::new(vec![exp_map(
                        &DVector::from_vec(vec![0.0, 0.0, 0.1 * k as f64, 1.0, 0.0, 0.0]),
                    )
                    .unwrap()])
                    .unwrap(),
                    covariance: DMatrix::identity(6, 6) * 1e-4,
                })
                .collect(),
        };
        let b = pf_from_mixture(&mix, 1500, &mut rng).unwrap();
        assert_eq!(b.len(), 1500);
        let total: f64 = b.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn from_mixture_zero_covariance_puts_particles_at_means() {
        let mut rng = StdRng::seed_from_u64(72);
        let means: Vec<RelativeState> = (0..3)
            .map(|k| {
                RelativeState::new(vec![Pose::new(
                    Rotation::identity(3),
                    DVector::from_vec(vec![k as f64, 0.0, 0.0]),
                )
                .unwrap()])
                .unwrap()
            })
            .collect();
        let mix = GaussianMixture {
            modes: means
                .iter()
                .map(|m| GaussianMode {
                    weight: 1.0 / 3.0,
                    mean: m.clone(),
                    covariance: DMatrix::zeros(6, 6),
                })
                .collect(),
        };
        let count = 100;
        let b = pf_from_mixture(&mix, count, &mut rng).unwrap();
        assert_eq!(b.len(), count);
        let mut per_mode = [0usize; 3];
        for p in &b.particles {
            let idx = means
                .iter()
                .position(|m| m.tangent_to(p).unwrap().norm() < 1e-12)
                .expect("particle away from every mode mean");
            per_mode[idx] += 1;
        }
        // counts proportional to weights within one particle
        for c in per_mode {
            assert!((c as i64 - 33).unsigned_abs() <= 1, "counts {per_mode:?}");
        }
    }

    #[test]
    fn step_sequences_are_reproducible_with_fixed_seed() {
        let (geoms, graph) = two_robot_scene();
        let truth = truth_state();
        let mix = GaussianMixture {
            modes: vec![GaussianMode {
                weight: 1.0,
                mean: truth.clone(),
                covariance: DMatrix::identity(6, 6) * 0.01,
            }],
        };
        let q = DMatrix::identity(6, 6) * 1e-4;
        let mk = |id: u32| VelocityInput::new(id, 0.0, DVector::zeros(6), q.clone()).unwrap();
        let run = |seed: u64| {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut b = pf_from_mixture(&mix, 50, &mut rng).unwrap();
            for step in 0..5 {
                let y = RangeSnapshot::new(
                    step as f64 * 0.02,
                    models::range_stack(&truth, &geoms, &graph).unwrap(),
                )
                .unwrap();
                let (next, _) =
                    pf_step(&b, &mk(1), &[mk(2)], 0.02, &y, &geoms, &graph, &mut rng).unwrap();
                b = next;
            }
            b
        };
        let a = run(1234);
        let b = run(1234);
        for (pa, pb) in a.particles.iter().zip(&b.particles) {
            assert_eq!(pa.poses()[0].matrix(), pb.poses()[0].matrix());
        }
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn matches_kalman_filter_on_linear_toy() {
        // A linear-Gaussian slice of the full model: identity rotations,
        // noise only in the x-velocity, and a single co-located tag pair so
        // the range equals the relative x offset exactly. The exact Bayes
        // answer is a scalar Kalman filter.
        let geoms = vec![
            RobotGeometry::new(
                1,
                vec![
                    (1, DVector::from_vec(vec![0.0, 0.0, 0.0])),
                    (2, DVector::from_vec(vec![0.0, 0.1, 0.0])),
                ],
            )
            .unwrap(),
            RobotGeometry::new(
                2,
                vec![
                    (3, DVector::from_vec(vec![0.0, 0.0, 0.0])),
                    (4, DVector::from_vec(vec![0.0, 0.1, 0.0])),
                ],
            )
            .unwrap(),
        ];
        let sigma_r = 0.05;
        let graph = MeasurementGraph::new(vec![crate::models::RangeEdge {
            tag_a: 1,
            tag_b: 3,
            sigma: sigma_r,
        }])
        .unwrap();
        let dt = 0.1;
        let sigma_v = 0.2;
        let q_state = (dt * sigma_v) * (dt * sigma_v);
        let x_true = 2.0;
        let prior_std = 0.1;

        let mut q = DMatrix::zeros(6, 6);
        q[(3, 3)] = sigma_v * sigma_v;
        let u1 = VelocityInput::new(1, 0.0, DVector::zeros(6), DMatrix::zeros(6, 6)).unwrap();
        let u2 = VelocityInput::new(2, 0.0, DVector::zeros(6), q).unwrap();

        let steps = 10;
        let runs = 50;
        let mut diffs = Vec::with_capacity(runs);
        let mut rng = StdRng::seed_from_u64(73);
        use rand_distr::{Distribution, Normal};
        let meas_noise = Normal::new(0.0, sigma_r).unwrap();
        let prior_noise = Normal::new(0.0, prior_std).unwrap();
        for _ in 0..runs {
            let x0 = x_true + prior_noise.sample(&mut rng);
            let mut prior_cov = DMatrix::zeros(6, 6);
            prior_cov[(3, 3)] = prior_std * prior_std;
            let mix = GaussianMixture {
                modes: vec![GaussianMode {
                    weight: 1.0,
                    mean: RelativeState::new(vec![Pose::new(
                        Rotation::identity(3),
                        DVector::from_vec(vec![x0, 0.0, 0.0]),
                    )
                    .unwrap()])
                    .unwrap(),
                    covariance: prior_cov,
                }],
            };
            let mut pf = pf_from_mixture(&mix, 400, &mut rng).unwrap();

            // scalar Kalman oracle
            let mut kf_mean = x0;
            let mut kf_var = prior_std * prior_std;

            for _ in 0..steps {
                let z = x_true + meas_noise.sample(&mut rng);
                let y = RangeSnapshot::new(0.0, DVector::from_vec(vec![z])).unwrap();
                let (next, _) = pf_step(
                    &pf,
                    &u1,
                    std::slice::from_ref(&u2),
                    dt,
                    &y,
                    &geoms,
                    &graph,
                    &mut rng,
                )
                .unwrap();
                pf = next;

                kf_var += q_state;
                let gain = kf_var / (kf_var + sigma_r * sigma_r);
                kf_mean += gain * (z - kf_mean);
                kf_var *= 1.0 - gain;
            }
            let est = pf_estimate(&pf).unwrap();
            let pf_x = est.mean.poses()[0].translation()[0];
            diffs.push(pf_x - kf_mean);
        }
        let mean_diff: f64 = diffs.iter().sum::<f64>() / runs as f64;
        let var_diff: f64 =
            diffs.iter().map(|d| (d - mean_diff) * (d - mean_diff)).sum::<f64>()
                / (runs - 1) as f64;
        let std_err = (var_diff / runs as f64).sqrt();
        assert!(
            mean_diff.abs() < 3.0 * std_err.max(1e-4),
            "PF deviates from Kalman oracle: {mean_diff} vs 3*SE {}",
            3.0 * std_err
        );
    }
}
