//! Synthetic scenario generation and Monte-Carlo evaluation: band-limited
//! random trajectories, noisy range synthesis, pose-error/RMSE/NEES metrics,
//! and the multi-trial harness comparing the GSF against the EKF and PF.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::{
    ekf_correct, ekf_predict, gsf_estimate, gsf_from_mixture, gsf_step, pf_estimate,
    pf_from_mixture, pf_step, EkfBelief, GsfOptions,
};
use crate::gils::{self, RefineOptions};
use crate::liegroup::{exp_map, Pose, Rotation, TangentVec};
use crate::models::{
    self, MeasurementGraph, RangeSnapshot, RelativeState, RobotGeometry, VelocityInput,
};

/// Scenario parameters for synthetic evaluation.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// All robot geometries, reference robot first (3-D tag offsets).
    pub geometries: Vec<RobotGeometry>,
    /// Range measurement rate in Hz.
    pub rate_hz: f64,
    /// Range noise standard deviation in meters.
    pub sigma_range: f64,
    /// Angular-velocity input noise standard deviation (rad/s, per axis).
    pub omega_noise_std: f64,
    /// Translational-velocity input noise standard deviation (m/s, per axis).
    pub vel_noise_std: f64,
    /// Total duration in seconds (must exceed the warmup).
    pub duration: f64,
    /// Static warmup used for GI-LS initialization, in seconds.
    pub warmup: f64,
    /// Workspace half-extents in x/y and full height in z, meters.
    pub workspace: [f64; 3],
    /// Trajectory driving noise: angular std (rad/s).
    pub traj_omega_std: f64,
    /// Trajectory driving noise: translational std (m/s).
    pub traj_vel_std: f64,
    /// First-order low-pass cutoff shaping the velocity noise (Hz).
    pub traj_cutoff_hz: f64,
    /// Particle count for the PF baseline.
    pub particle_count: usize,
}

impl ScenarioConfig {
    /// Three robots with the square two-tag layout, 50 Hz ranging with
    /// sigma = 0.1 m, 4 s static warmup.
    pub fn three_robot_default() -> Self {
        let mk = |robot_id: u32, base: u32| {
            RobotGeometry::new(
                robot_id,
                vec![
                    (base, DVector::from_vec(vec![0.17, 0.17, 0.0])),
                    (base + 1, DVector::from_vec(vec![0.17, -0.17, 0.0])),
                ],
            )
            .unwrap()
        };
        ScenarioConfig {
            geometries: vec![mk(1, 1), mk(2, 3), mk(3, 5)],
            rate_hz: 50.0,
            sigma_range: 0.1,
            omega_noise_std: 0.02,
            vel_noise_std: 0.05,
            duration: 30.0,
            warmup: 4.0,
            workspace: [6.0, 6.0, 3.0],
            traj_omega_std: 0.3,
            traj_vel_std: 0.5,
            traj_cutoff_hz: 0.5,
            particle_count: 1500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.geometries.len() < 2 {
            return Err(Error::invalid("need at least two robots"));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::invalid("rate must be positive"));
        }
        if !(self.sigma_range > 0.0) {
            return Err(Error::invalid("range sigma must be positive"));
        }
        if !(self.duration > self.warmup) || self.warmup < 0.0 {
            return Err(Error::invalid("duration must exceed warmup >= 0"));
        }
        Ok(())
    }

    pub fn robot_count(&self) -> usize {
        self.geometries.len()
    }

    /// Per-robot input noise covariance.
    pub fn input_noise(&self) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(6, 6);
        for i in 0..3 {
            q[(i, i)] = self.omega_noise_std * self.omega_noise_std;
            q[(i + 3, i + 3)] = self.vel_noise_std * self.vel_noise_std;
        }
        q
    }

    /// Number of integration steps (measurement count).
    pub fn step_count(&self) -> usize {
        (self.duration * self.rate_hz).round() as usize
    }

    /// Number of warmup steps (GI-LS snapshot count gamma).
    pub fn warmup_steps(&self) -> usize {
        (self.warmup * self.rate_hz).round() as usize
    }
}

/// Ground truth and the velocity streams that generate it exactly.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Timestamps t_0 .. t_K; measurements arrive at t_1 .. t_K.
    pub times: Vec<f64>,
    /// True body-frame velocities per robot; entry k holds over
    /// [t_k, t_{k+1}).
    pub velocities: Vec<Vec<TangentVec>>,
    /// Global poses per timestamp per robot.
    pub truth_global: Vec<Vec<Pose>>,
}

impl Trajectory {
    /// Relative state at timestamp index `k`.
    pub fn relative(&self, k: usize) -> RelativeState {
        let ref_inv = self.truth_global[k][0].inverse();
        RelativeState::new(
            self.truth_global[k][1..]
                .iter()
                .map(|g| ref_inv.compose(g))
                .collect(),
        )
        .unwrap()
    }
}

fn sample_normal(rng: &mut impl Rng, std: f64) -> f64 {
    let g: f64 = StandardNormal.sample(rng);
    g * std
}

/// Random planar start poses with pairwise separations in [1.5, 4] m.
fn initial_poses(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Vec<Pose> {
    let half_x = cfg.workspace[0] / 2.0 - 0.5;
    let half_y = cfg.workspace[1] / 2.0 - 0.5;
    loop {
        let poses: Vec<Pose> = (0..cfg.robot_count())
            .map(|_| {
                let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                Pose::new(
                    Rotation::from_yaw(yaw),
                    DVector::from_vec(vec![
                        rng.gen_range(-half_x..half_x),
                        rng.gen_range(-half_y..half_y),
                        0.0,
                    ]),
                )
                .unwrap()
            })
            .collect();
        let mut ok = true;
        for i in 0..poses.len() {
            for j in (i + 1)..poses.len() {
                let d = (poses[i].translation() - poses[j].translation()).norm();
                if !(1.5..=4.0).contains(&d) {
                    ok = false;
                }
            }
        }
        if ok {
            return poses;
        }
    }
}

/// Generates band-limited random velocities and the exactly integrated
/// ground truth. Robots are static during the warmup and clamped to the
/// workspace afterwards; re-integrating the returned velocity streams
/// reproduces the returned poses.
pub fn generate_trajectory(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<Trajectory> {
    cfg.validate()?;
    let n_robots = cfg.robot_count();
    let steps = cfg.step_count();
    let dt = 1.0 / cfg.rate_hz;
    let alpha = (-2.0 * std::f64::consts::PI * cfg.traj_cutoff_hz * dt).exp();
    let beta = (1.0 - alpha * alpha).sqrt();

    let mut poses: Vec<Pose> = initial_poses(cfg, rng);
    let mut truth_global = vec![poses.clone()];
    let mut velocities: Vec<Vec<TangentVec>> = vec![Vec::with_capacity(steps); n_robots];
    let mut times = Vec::with_capacity(steps + 1);
    times.push(0.0);

    // colored-noise states per robot
    let mut filt: Vec<TangentVec> = vec![DVector::zeros(6); n_robots];
    let z_min = 0.2;
    let z_max = cfg.workspace[2] - 0.2;
    let half = [cfg.workspace[0] / 2.0, cfg.workspace[1] / 2.0];

    for k in 0..steps {
        let t = k as f64 * dt;
        for (p, pose) in poses.iter_mut().enumerate() {
            let mut u = DVector::zeros(6);
            if t + 1e-12 >= cfg.warmup {
                let state = &mut filt[p];
                for i in 0..3 {
                    state[i] =
                        alpha * state[i] + beta * sample_normal(rng, cfg.traj_omega_std);
                    state[i + 3] =
                        alpha * state[i + 3] + beta * sample_normal(rng, cfg.traj_vel_std);
                }
                u.copy_from(state);
                // workspace clamp: flip outward world-frame velocity
                let c = pose.rotation().matrix().clone();
                let v_body = u.rows(3, 3).clone_owned();
                let mut v_world = &c * v_body;
                let pos = pose.translation();
                for axis in 0..2 {
                    let next = pos[axis] + dt * v_world[axis];
                    if (next > half[axis] && v_world[axis] > 0.0)
                        || (next < -half[axis] && v_world[axis] < 0.0)
                    {
                        v_world[axis] = -v_world[axis];
                    }
                }
                let next_z = pos[2] + dt * v_world[2];
                if (next_z > z_max && v_world[2] > 0.0) || (next_z < z_min && v_world[2] < 0.0)
                {
                    v_world[2] = -v_world[2];
                }
                let back = c.transpose() * v_world;
                u.rows_mut(3, 3).copy_from(&back);
                // keep the filter state consistent with the emitted stream
                filt[p].rows_mut(3, 3).copy_from(&back);
            }
            *pose = pose.compose(&exp_map(&(dt * &u))?);
            velocities[p].push(u);
        }
        times.push((k + 1) as f64 * dt);
        truth_global.push(poses.clone());
    }
    Ok(Trajectory {
        times,
        velocities,
        truth_global,
    })
}

/// Noiseless forward ranges plus i.i.d. Gaussian noise per edge, one
/// snapshot per measurement timestamp t_1 .. t_K.
pub fn simulate_ranges(
    traj: &Trajectory,
    geoms: &[RobotGeometry],
    graph: &MeasurementGraph,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Vec<RangeSnapshot>> {
    let mut out = Vec::with_capacity(traj.times.len() - 1);
    for k in 1..traj.times.len() {
        let state = traj.relative(k);
        let mut values = models::range_stack(&state, geoms, graph)?;
        if sigma > 0.0 {
            for v in values.iter_mut() {
                *v = (*v + sample_normal(rng, sigma)).max(0.0);
            }
        }
        out.push(RangeSnapshot::new(traj.times[k], values)?);
    }
    Ok(out)
}

/// Per-pair attitude error (rotation angle of C_est C_truth^T, rad) and
/// position error (Euclidean, m), both resolved in the reference frame.
pub fn pose_errors(est: &RelativeState, truth: &RelativeState) -> Result<Vec<(f64, f64)>> {
    if est.len() != truth.len() {
        return Err(Error::invalid("state sizes differ"));
    }
    Ok(est
        .poses()
        .iter()
        .zip(truth.poses())
        .map(|(e, t)| {
            let rel = e.rotation() * &t.rotation().transpose();
            let att = rel.angle();
            let pos = (e.translation() - t.translation()).norm();
            (att, pos)
        })
        .collect())
}

/// Root-mean-square of the pooled error samples.
pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Normalized estimation error squared, `e^T P^-1 e`, with the error in the
/// right-perturbation tangent: `e = log(truth^-1 est)` per block.
pub fn nees(est: &RelativeState, cov: &DMatrix<f64>, truth: &RelativeState) -> Result<f64> {
    let e = truth.tangent_to(est)?;
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("singular covariance in NEES".into()))?;
    Ok(e.dot(&chol.solve(&e)))
}

/// Two-sided chi-square interval at `confidence` for the average of
/// `trials` NEES values with `dof` degrees of freedom each.
pub fn nees_interval(dof: usize, trials: usize, confidence: f64) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let total_dof = (dof * trials) as f64;
    let chi = ChiSquared::new(total_dof).expect("valid dof");
    let tail = (1.0 - confidence) / 2.0;
    (
        chi.inverse_cdf(tail) / trials as f64,
        chi.inverse_cdf(1.0 - tail) / trials as f64,
    )
}

/// Filters the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    /// Gaussian-sum filter seeded with the full GI-LS mixture.
    Gsf,
    /// Bootstrap particle filter seeded from the mixture.
    Pf,
    /// Single-mode EKF seeded at a wrong GI-LS mode.
    EkfWrongMode,
    /// Single-mode EKF seeded at the mode closest to the truth.
    EkfTrueMode,
}

impl FilterKind {
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Gsf => "gsf",
            FilterKind::Pf => "pf",
            FilterKind::EkfWrongMode => "ekf_wrong",
            FilterKind::EkfTrueMode => "ekf_true",
        }
    }
}

/// One filter's record at one measurement step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub time: f64,
    /// Per-pair (attitude, position) errors.
    pub errors: Vec<(f64, f64)>,
    pub nees: f64,
    /// Mode weights (GSF only; empty otherwise).
    pub weights: Vec<f64>,
    /// Wall-clock seconds spent in this filter step.
    pub step_seconds: f64,
}

/// One filter's full trial output.
#[derive(Debug, Clone)]
pub struct FilterTrial {
    pub kind: FilterKind,
    pub steps: Vec<StepRecord>,
    pub attitude_rmse: f64,
    pub position_rmse: f64,
    pub median_step_seconds: f64,
    pub final_weights: Vec<f64>,
}

/// All filters' outputs for one Monte-Carlo trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub mixture_size: usize,
    pub filters: Vec<FilterTrial>,
}

/// Aggregates per filter across trials.
#[derive(Debug, Clone)]
pub struct FilterAggregate {
    pub kind: FilterKind,
    pub median_attitude_rmse: f64,
    pub median_position_rmse: f64,
    /// Across-trial average NEES per step, after the convergence transient.
    pub mean_nees: Vec<f64>,
    pub nees_bounds: (f64, f64),
    pub nees_fraction_inside: f64,
    pub median_step_seconds: f64,
}

/// Full Monte-Carlo report.
#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub trials: Vec<TrialResult>,
    pub aggregates: Vec<FilterAggregate>,
    pub failed_trials: usize,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Seconds of transient excluded from NEES aggregation.
pub const NEES_TRANSIENT_SECONDS: f64 = 2.0;

/// Derives the per-role RNG for a trial from the master seed. Streams are
/// disjoint across (trial, role) pairs.
pub fn trial_rng(master_seed: u64, trial: usize, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((trial as u64) * 8 + role);
    rng
}

/// Runs every selected filter over one simulated trial.
pub fn run_trial(
    cfg: &ScenarioConfig,
    filters: &[FilterKind],
    master_seed: u64,
    trial: usize,
) -> Result<TrialResult> {
    cfg.validate()?;
    let geoms = &cfg.geometries;
    let graph = MeasurementGraph::full_inter_robot(geoms, cfg.sigma_range)?;
    let dt = 1.0 / cfg.rate_hz;

    let mut traj_rng = trial_rng(master_seed, trial, 0);
    let traj = generate_trajectory(cfg, &mut traj_rng)?;
    let mut range_rng = trial_rng(master_seed, trial, 1);
    let snapshots = simulate_ranges(&traj, geoms, &graph, cfg.sigma_range, &mut range_rng)?;

    // GI-LS on the static warmup window
    let warmup_steps = cfg.warmup_steps();
    let (mixture, _diag) = gils::initialize(
        geoms,
        &graph,
        &snapshots[..warmup_steps],
        &RefineOptions::default(),
    )?;

    // noisy velocity inputs shared by all filters
    let q = cfg.input_noise();
    let mut input_rng = trial_rng(master_seed, trial, 2);
    let steps = cfg.step_count();
    let mut inputs: Vec<Vec<VelocityInput>> = Vec::with_capacity(steps);
    for k in 0..steps {
        let mut per_robot = Vec::with_capacity(cfg.robot_count());
        for (p, vel) in traj.velocities.iter().enumerate() {
            let mut u = vel[k].clone();
            for i in 0..3 {
                u[i] += sample_normal(&mut input_rng, cfg.omega_noise_std);
                u[i + 3] += sample_normal(&mut input_rng, cfg.vel_noise_std);
            }
            per_robot.push(VelocityInput::new(
                (p + 1) as u32,
                traj.times[k],
                u,
                q.clone(),
            )?);
        }
        inputs.push(per_robot);
    }

    // identify the mixture mode closest to / farthest from the truth
    let truth_at_warmup = traj.relative(warmup_steps);
    let mode_dist: Vec<f64> = mixture
        .modes
        .iter()
        .map(|m| match truth_at_warmup.tangent_to(&m.mean) {
            Ok(t) => t.norm(),
            Err(_) => f64::INFINITY,
        })
        .collect();
    let true_mode = mode_dist
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let mut pick_rng = trial_rng(master_seed, trial, 3);
    let wrong_mode = if mixture.modes.len() == 1 {
        0
    } else {
        let mut idx = pick_rng.gen_range(0..mixture.modes.len());
        while idx == true_mode {
            idx = pick_rng.gen_range(0..mixture.modes.len());
        }
        idx
    };

    let mut filter_trials = Vec::with_capacity(filters.len());
    for kind in filters {
        let mut pf_rng = trial_rng(master_seed, trial, 4);
        let mut gsf_belief = None;
        let mut pf_belief = None;
        let mut ekf_belief = None;
        match kind {
            FilterKind::Gsf => gsf_belief = Some(gsf_from_mixture(&mixture)),
            FilterKind::Pf => {
                pf_belief = Some(pf_from_mixture(&mixture, cfg.particle_count, &mut pf_rng)?)
            }
            FilterKind::EkfWrongMode => {
                let m = &mixture.modes[wrong_mode];
                ekf_belief = Some(EkfBelief {
                    mean: m.mean.clone(),
                    covariance: m.covariance.clone(),
                });
            }
            FilterKind::EkfTrueMode => {
                let m = &mixture.modes[true_mode];
                ekf_belief = Some(EkfBelief {
                    mean: m.mean.clone(),
                    covariance: m.covariance.clone(),
                });
            }
        }
        let gsf_opts = GsfOptions::default();
        let mut steps_out = Vec::with_capacity(steps - warmup_steps);
        let mut att_errors = Vec::new();
        let mut pos_errors = Vec::new();
        let mut times_s = Vec::new();
        for k in warmup_steps..steps {
            let u_ref = &inputs[k][0];
            let ups = &inputs[k][1..];
            let y = &snapshots[k];
            let truth = traj.relative(k + 1);

            let started = Instant::now();
            let (estimate, cov, weights) = match kind {
                FilterKind::Gsf => {
                    let (next, _) = gsf_step(
                        gsf_belief.as_ref().unwrap(),
                        u_ref,
                        ups,
                        dt,
                        y,
                        geoms,
                        &graph,
                        &gsf_opts,
                    )?;
                    gsf_belief = Some(next);
                    let belief = gsf_belief.as_ref().unwrap();
                    let est = gsf_estimate(belief)?;
                    let weights: Vec<f64> = belief.modes.iter().map(|(w, _)| *w).collect();
                    (est.mean, est.covariance, weights)
                }
                FilterKind::Pf => {
                    let (next, _) = pf_step(
                        pf_belief.as_ref().unwrap(),
                        u_ref,
                        ups,
                        dt,
                        y,
                        geoms,
                        &graph,
                        &mut pf_rng,
                    )?;
                    pf_belief = Some(next);
                    let est = pf_estimate(pf_belief.as_ref().unwrap())?;
                    (est.mean, est.covariance, Vec::new())
                }
                FilterKind::EkfWrongMode | FilterKind::EkfTrueMode => {
                    let predicted = ekf_predict(ekf_belief.as_ref().unwrap(), u_ref, ups, dt)?;
                    let (corrected, _) = ekf_correct(&predicted, y, geoms, &graph)?;
                    ekf_belief = Some(corrected);
                    let b = ekf_belief.as_ref().unwrap();
                    (b.mean.clone(), b.covariance.clone(), Vec::new())
                }
            };
            let step_seconds = started.elapsed().as_secs_f64();

            let errors = pose_errors(&estimate, &truth)?;
            let nees_val = nees(&estimate, &cov, &truth).unwrap_or(f64::NAN);
            for (a, p) in &errors {
                att_errors.push(*a);
                pos_errors.push(*p);
            }
            times_s.push(step_seconds);
            steps_out.push(StepRecord {
                time: traj.times[k + 1],
                errors,
                nees: nees_val,
                weights,
                step_seconds,
            });
        }
        let final_weights = steps_out
            .last()
            .map(|s| s.weights.clone())
            .unwrap_or_default();
        filter_trials.push(FilterTrial {
            kind: *kind,
            attitude_rmse: rmse(&att_errors),
            position_rmse: rmse(&pos_errors),
            median_step_seconds: median(&mut times_s),
            steps: steps_out,
            final_weights,
        });
    }
    Ok(TrialResult {
        trial,
        mixture_size: mixture.modes.len(),
        filters: filter_trials,
    })
}

/// Runs `trials` independent trials (in parallel) and aggregates medians,
/// NEES statistics, and per-step timing per filter. Deterministic given the
/// master seed, except for the wall-clock timing fields.
pub fn run_monte_carlo(
    cfg: &ScenarioConfig,
    filters: &[FilterKind],
    trials: usize,
    master_seed: u64,
) -> Result<MonteCarloReport> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    cfg.validate()?;
    let results: Vec<Result<TrialResult>> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, filters, master_seed, t))
        .collect();
    let mut ok = Vec::new();
    let mut failed = 0;
    for r in results {
        match r {
            Ok(t) => ok.push(t),
            Err(_) => failed += 1,
        }
    }
    if failed * 5 > trials {
        return Err(Error::NumericalFailure(format!(
            "{failed} of {trials} trials failed"
        )));
    }
    if ok.is_empty() {
        return Err(Error::NoSolution("every trial failed".into()));
    }

    let dof = 6 * (cfg.robot_count() - 1);
    let transient_steps = (NEES_TRANSIENT_SECONDS * cfg.rate_hz).round() as usize;
    let mut aggregates = Vec::with_capacity(filters.len());
    for kind in filters {
        let per_trial: Vec<&FilterTrial> = ok
            .iter()
            .map(|t| t.filters.iter().find(|f| f.kind == *kind).unwrap())
            .collect();
        let mut att: Vec<f64> = per_trial.iter().map(|f| f.attitude_rmse).collect();
        let mut pos: Vec<f64> = per_trial.iter().map(|f| f.position_rmse).collect();
        let mut med_t: Vec<f64> = per_trial.iter().map(|f| f.median_step_seconds).collect();

        // across-trial mean NEES per step (skipping the transient)
        let step_count = per_trial.iter().map(|f| f.steps.len()).min().unwrap_or(0);
        let mut mean_nees = Vec::new();
        let mut inside = 0usize;
        let mut counted = 0usize;
        let bounds = nees_interval(dof, per_trial.len(), 0.99);
        for s in transient_steps..step_count {
            let vals: Vec<f64> = per_trial
                .iter()
                .filter_map(|f| {
                    let v = f.steps[s].nees;
                    v.is_finite().then_some(v)
                })
                .collect();
            if vals.is_empty() {
                mean_nees.push(f64::NAN);
                continue;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            mean_nees.push(m);
            counted += 1;
            if m >= bounds.0 && m <= bounds.1 {
                inside += 1;
            }
        }
        aggregates.push(FilterAggregate {
            kind: *kind,
            median_attitude_rmse: median(&mut att),
            median_position_rmse: median(&mut pos),
            mean_nees,
            nees_bounds: bounds,
            nees_fraction_inside: if counted > 0 {
                inside as f64 / counted as f64
            } else {
                0.0
            },
            median_step_seconds: median(&mut med_t),
        });
    }
    Ok(MonteCarloReport {
        trials: ok,
        aggregates,
        failed_trials: failed,
    })
}
