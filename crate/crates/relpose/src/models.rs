//! Process and range measurement models for the relative-pose state, with
//! analytic Jacobians under the right-perturbation convention.
//!
//! The state is the ordered tuple of poses of robots 2..N expressed in the
//! frame of robot 1 (the reference). `geoms[0]` is always the reference
//! robot; `state.poses()[i]` is the pose of `geoms[i + 1]`'s robot.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::liegroup::{self, Pose, TangentVec};

/// Per-robot tag placement: tag ids and their body-frame offsets (meters).
#[derive(Debug, Clone)]
pub struct RobotGeometry {
    robot_id: u32,
    tags: Vec<(u32, DVector<f64>)>,
}

impl RobotGeometry {
    /// At least two distinct tags with pairwise distinct offsets.
    pub fn new(robot_id: u32, tags: Vec<(u32, DVector<f64>)>) -> Result<Self> {
        if tags.len() < 2 {
            return Err(Error::invalid(format!(
                "robot {robot_id} needs at least two tags"
            )));
        }
        let dim = tags[0].1.len();
        for (id, off) in &tags {
            if off.len() != dim {
                return Err(Error::invalid(format!(
                    "tag {id} offset has mixed dimensions"
                )));
            }
            if off.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("tag {id} offset is not finite")));
            }
        }
        for i in 0..tags.len() {
            for j in (i + 1)..tags.len() {
                if tags[i].0 == tags[j].0 {
                    return Err(Error::invalid(format!(
                        "duplicate tag id {} on robot {robot_id}",
                        tags[i].0
                    )));
                }
                if (&tags[i].1 - &tags[j].1).norm() <= 0.0 {
                    return Err(Error::invalid(format!(
                        "coincident tag offsets on robot {robot_id}"
                    )));
                }
            }
        }
        Ok(RobotGeometry { robot_id, tags })
    }

    pub fn robot_id(&self) -> u32 {
        self.robot_id
    }

    pub fn tags(&self) -> &[(u32, DVector<f64>)] {
        &self.tags
    }

    pub fn dim(&self) -> usize {
        self.tags[0].1.len()
    }

    pub fn tag_offset(&self, tag_id: u32) -> Option<&DVector<f64>> {
        self.tags.iter().find(|(id, _)| *id == tag_id).map(|(_, o)| o)
    }

    /// Projection onto the xy-plane (used by the planar ambiguity solver).
    pub fn planar(&self) -> RobotGeometry {
        let tags = self
            .tags
            .iter()
            .map(|(id, off)| (*id, DVector::from_vec(vec![off[0], off[1]])))
            .collect();
        RobotGeometry {
            robot_id: self.robot_id,
            tags,
        }
    }
}

/// One measured tag pair with its noise standard deviation (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeEdge {
    pub tag_a: u32,
    pub tag_b: u32,
    pub sigma: f64,
}

/// Ordered edge list; the order fixes the stacking of measurement vectors.
#[derive(Debug, Clone)]
pub struct MeasurementGraph {
    edges: Vec<RangeEdge>,
}

impl MeasurementGraph {
    pub fn new(edges: Vec<RangeEdge>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::invalid("measurement graph has no edges"));
        }
        for e in &edges {
            if !(e.sigma > 0.0) {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) has non-positive sigma",
                    e.tag_a, e.tag_b
                )));
            }
            if e.tag_a == e.tag_b {
                return Err(Error::invalid(format!("edge ({}, {}) is a self-loop", e.tag_a, e.tag_b)));
            }
        }
        Ok(MeasurementGraph { edges })
    }

    /// Full inter-robot graph: every tag of every robot pair, in robot-pair
    /// then tag order. Intra-robot edges are excluded.
    pub fn full_inter_robot(geoms: &[RobotGeometry], sigma: f64) -> Result<Self> {
        let mut edges = Vec::new();
        for p in 0..geoms.len() {
            for q in (p + 1)..geoms.len() {
                for (ta, _) in geoms[p].tags() {
                    for (tb, _) in geoms[q].tags() {
                        edges.push(RangeEdge {
                            tag_a: *ta,
                            tag_b: *tb,
                            sigma,
                        });
                    }
                }
            }
        }
        MeasurementGraph::new(edges)
    }

    pub fn edges(&self) -> &[RangeEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Measurement noise covariance, diag(... sigma_ij^2 ...).
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.edges.len(),
            self.edges.iter().map(|e| e.sigma * e.sigma),
        ))
    }
}

/// Body-frame velocity input `u = [omega; v]` of one robot, with its noise
/// covariance.
#[derive(Debug, Clone)]
pub struct VelocityInput {
    pub robot_id: u32,
    pub timestamp: f64,
    pub u: TangentVec,
    pub q: DMatrix<f64>,
}

impl VelocityInput {
    pub fn new(robot_id: u32, timestamp: f64, u: TangentVec, q: DMatrix<f64>) -> Result<Self> {
        let m = u.len();
        if !(m == 3 || m == 6) {
            return Err(Error::invalid("velocity input must have length 3 or 6"));
        }
        if q.nrows() != m || q.ncols() != m {
            return Err(Error::invalid("velocity noise covariance has wrong shape"));
        }
        if (q.clone() - q.transpose()).amax() > 1e-9 {
            return Err(Error::invalid("velocity noise covariance is not symmetric"));
        }
        Ok(VelocityInput {
            robot_id,
            timestamp,
            u,
            q,
        })
    }
}

/// Timestamped stacked range measurements in edge-list order.
#[derive(Debug, Clone)]
pub struct RangeSnapshot {
    pub timestamp: f64,
    pub values: DVector<f64>,
}

impl RangeSnapshot {
    pub fn new(timestamp: f64, values: DVector<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("range values must be finite and >= 0"));
        }
        Ok(RangeSnapshot { timestamp, values })
    }
}

/// Ordered tuple of N-1 relative poses (robots 2..N in robot 1's frame).
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeState {
    poses: Vec<Pose>,
}

impl RelativeState {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("relative state needs at least one pose"));
        }
        let n = poses[0].dim();
        if poses.iter().any(|p| p.dim() != n) {
            return Err(Error::invalid("relative state mixes group dimensions"));
        }
        Ok(RelativeState { poses })
    }

    /// Identity state for `count` robots beyond the reference, dimension `n`.
    pub fn identity(count: usize, n: usize) -> Self {
        RelativeState {
            poses: vec![Pose::identity(n); count],
        }
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    /// Number of non-reference robots (N - 1).
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Ambient dimension n of the poses.
    pub fn group_dim(&self) -> usize {
        self.poses[0].dim()
    }

    /// Per-pose tangent dimension m.
    pub fn block_dim(&self) -> usize {
        self.poses[0].tangent_dim()
    }

    /// Stacked tangent dimension m(N-1).
    pub fn tangent_len(&self) -> usize {
        self.block_dim() * self.poses.len()
    }

    /// Right-perturbs every pose block: pose_p <- pose_p * exp(dxi_p^).
    pub fn oplus(&self, dx: &DVector<f64>) -> Result<RelativeState> {
        let m = self.block_dim();
        if dx.len() != self.tangent_len() {
            return Err(Error::invalid(format!(
                "perturbation length {} does not match state tangent length {}",
                dx.len(),
                self.tangent_len()
            )));
        }
        let mut poses = Vec::with_capacity(self.poses.len());
        for (i, pose) in self.poses.iter().enumerate() {
            let block = dx.rows(i * m, m).clone_owned();
            poses.push(pose.compose(&liegroup::exp_map(&block)?));
        }
        Ok(RelativeState { poses })
    }

    /// Blockwise right-tangent difference `log(self_p^-1 other_p)`, stacked.
    pub fn tangent_to(&self, other: &RelativeState) -> Result<DVector<f64>> {
        if self.len() != other.len() || self.group_dim() != other.group_dim() {
            return Err(Error::invalid("state shapes differ"));
        }
        let m = self.block_dim();
        let mut out = DVector::zeros(self.tangent_len());
        for i in 0..self.poses.len() {
            let rel = self.poses[i].inverse().compose(&other.poses[i]);
            let xi = liegroup::log_map(&rel)?;
            out.rows_mut(i * m, m).copy_from(&xi);
        }
        Ok(out)
    }
}

fn check_inputs(x: &RelativeState, u_ref: &VelocityInput, ups: &[VelocityInput], dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if ups.len() != x.len() {
        return Err(Error::invalid(format!(
            "expected one velocity input per non-reference robot ({}), got {}",
            x.len(),
            ups.len()
        )));
    }
    let m = x.block_dim();
    if u_ref.u.len() != m || ups.iter().any(|u| u.u.len() != m) {
        return Err(Error::invalid("velocity input dimension mismatch"));
    }
    Ok(())
}

/// Discrete process model: each block becomes
/// `exp(-dt u_1^) * T_1p * exp(dt u_p^)`.
pub fn propagate(
    x: &RelativeState,
    u_ref: &VelocityInput,
    ups: &[VelocityInput],
    dt: f64,
) -> Result<RelativeState> {
    check_inputs(x, u_ref, ups, dt)?;
    let left = liegroup::exp_map(&(-dt * &u_ref.u))?;
    let mut poses = Vec::with_capacity(x.len());
    for (pose, up) in x.poses().iter().zip(ups) {
        let right = liegroup::exp_map(&(dt * &up.u))?;
        poses.push(left.compose(pose).compose(&right));
    }
    RelativeState::new(poses)
}

/// Process Jacobian w.r.t. the state, block-diagonal with blocks
/// `Ad(exp(-dt u_p^))`. Depends on the non-reference inputs only.
pub fn process_jacobian(ups: &[VelocityInput], dt: f64) -> Result<DMatrix<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if ups.is_empty() {
        return Err(Error::invalid("no velocity inputs"));
    }
    let m = ups[0].u.len();
    let total = m * ups.len();
    let mut a = DMatrix::zeros(total, total);
    for (i, up) in ups.iter().enumerate() {
        let block = liegroup::adjoint(&liegroup::exp_map(&(-dt * &up.u))?);
        a.view_mut((i * m, i * m), (m, m)).copy_from(&block);
    }
    Ok(a)
}

/// First-order maps from input noise to the stacked state tangent.
///
/// `wrt_reference` collects the effect of reference-robot noise on every
/// block (m(N-1) x m); `wrt_robot[i]` is the effect of robot i+2's own noise,
/// nonzero only in block i. Validated against finite differences.
#[derive(Debug, Clone)]
pub struct InputJacobians {
    pub wrt_reference: DMatrix<f64>,
    pub wrt_robot: Vec<DMatrix<f64>>,
}

/// Jacobians of [`propagate`] w.r.t. the reference and per-robot input noise.
pub fn input_jacobians(
    x: &RelativeState,
    u_ref: &VelocityInput,
    ups: &[VelocityInput],
    dt: f64,
) -> Result<InputJacobians> {
    check_inputs(x, u_ref, ups, dt)?;
    let m = x.block_dim();
    let total = x.tangent_len();
    let jr_ref = liegroup::right_jacobian(&(-dt * &u_ref.u));
    let mut wrt_reference = DMatrix::zeros(total, m);
    let mut wrt_robot = Vec::with_capacity(ups.len());
    for (i, (pose, up)) in x.poses().iter().zip(ups).enumerate() {
        // own-input noise enters through the right factor directly
        let l_own = liegroup::right_jacobian(&(dt * &up.u)) * dt;
        let mut own_full = DMatrix::zeros(total, m);
        own_full.view_mut((i * m, 0), (m, m)).copy_from(&l_own);
        wrt_robot.push(own_full);
        // reference noise enters through the left factor and is carried
        // across T_1p exp(dt u_p^) into the right-perturbation frame
        let carrier = pose.compose(&liegroup::exp_map(&(dt * &up.u))?);
        let l_ref = liegroup::adjoint(&carrier.inverse()) * &jr_ref * (-dt);
        wrt_reference
            .view_mut((i * m, 0), (m, m))
            .copy_from(&l_ref);
    }
    Ok(InputJacobians {
        wrt_reference,
        wrt_robot,
    })
}

/// Process-noise covariance in the stacked state tangent:
/// `L_1 Q_1 L_1^T + sum_p L_p Q_p L_p^T`.
pub fn process_noise_covariance(
    x: &RelativeState,
    u_ref: &VelocityInput,
    ups: &[VelocityInput],
    dt: f64,
) -> Result<DMatrix<f64>> {
    let jacs = input_jacobians(x, u_ref, ups, dt)?;
    let mut q = &jacs.wrt_reference * &u_ref.q * jacs.wrt_reference.transpose();
    for (l, up) in jacs.wrt_robot.iter().zip(ups) {
        q += l * &up.q * l.transpose();
    }
    Ok(q)
}

/// Locates a tag: returns (robot index into `geoms`, body-frame offset).
fn resolve_tag<'a>(geoms: &'a [RobotGeometry], tag_id: u32) -> Result<(usize, &'a DVector<f64>)> {
    for (idx, g) in geoms.iter().enumerate() {
        if let Some(off) = g.tag_offset(tag_id) {
            return Ok((idx, off));
        }
    }
    Err(Error::invalid(format!("unknown tag id {tag_id}")))
}

fn pose_for<'a>(x: &'a RelativeState, robot_idx: usize, identity: &'a Pose) -> &'a Pose {
    if robot_idx == 0 {
        identity
    } else {
        &x.poses()[robot_idx - 1]
    }
}

/// Noiseless range between one tag pair, `|| D T_1p r_i - D T_1q r_j ||`.
pub fn range_one(
    x: &RelativeState,
    geoms: &[RobotGeometry],
    edge: (u32, u32),
) -> Result<f64> {
    if geoms.len() != x.len() + 1 {
        return Err(Error::invalid("geometry count must be N for an N-robot state"));
    }
    let (ia, ra) = resolve_tag(geoms, edge.0)?;
    let (ib, rb) = resolve_tag(geoms, edge.1)?;
    let identity = Pose::identity(x.group_dim());
    let qa = pose_for(x, ia, &identity).apply(ra);
    let qb = pose_for(x, ib, &identity).apply(rb);
    Ok((qa - qb).norm())
}

/// Stacks [`range_one`] over the graph's edges in edge-list order.
pub fn range_stack(
    x: &RelativeState,
    geoms: &[RobotGeometry],
    graph: &MeasurementGraph,
) -> Result<DVector<f64>> {
    let mut y = DVector::zeros(graph.len());
    for (k, e) in graph.edges().iter().enumerate() {
        y[k] = range_one(x, geoms, (e.tag_a, e.tag_b))?;
    }
    Ok(y)
}

/// Measurement Jacobian, |E| x m(N-1). Row (i, j) carries
/// `rho D Tbar_1p (r_i)^odot` in block p-1 and the negated counterpart in
/// block q-1; edges that touch the reference robot populate one block only.
pub fn meas_jacobian(
    x: &RelativeState,
    geoms: &[RobotGeometry],
    graph: &MeasurementGraph,
) -> Result<DMatrix<f64>> {
    if geoms.len() != x.len() + 1 {
        return Err(Error::invalid("geometry count must be N for an N-robot state"));
    }
    let n = x.group_dim();
    let m = x.block_dim();
    let identity = Pose::identity(n);
    let mut h = DMatrix::zeros(graph.len(), x.tangent_len());
    for (k, e) in graph.edges().iter().enumerate() {
        let (ia, ra) = resolve_tag(geoms, e.tag_a)?;
        let (ib, rb) = resolve_tag(geoms, e.tag_b)?;
        let pa = pose_for(x, ia, &identity);
        let pb = pose_for(x, ib, &identity);
        let qa = pa.apply(ra);
        let qb = pb.apply(rb);
        let diff = &qa - &qb;
        let norm = diff.norm();
        if norm < 1e-12 {
            return Err(Error::DegenerateGeometry(format!(
                "edge ({}, {}) has zero predicted range",
                e.tag_a, e.tag_b
            )));
        }
        let rho = diff / norm;
        if ia > 0 {
            let block = point_jacobian(pa, ra, n)?;
            let row = rho.transpose() * block;
            let mut view = h.view_mut((k, (ia - 1) * m), (1, m));
            view += row;
        }
        if ib > 0 {
            let block = point_jacobian(pb, rb, n)?;
            let row = rho.transpose() * block;
            let mut view = h.view_mut((k, (ib - 1) * m), (1, m));
            view -= row;
        }
    }
    Ok(h)
}

/// `D T (r~)^odot`: derivative of the transformed point w.r.t. a right
/// perturbation of `T`.
fn point_jacobian(pose: &Pose, r: &DVector<f64>, n: usize) -> Result<DMatrix<f64>> {
    let mut homog = DVector::zeros(n + 1);
    homog.rows_mut(0, n).copy_from(r);
    homog[n] = 1.0;
    let od = liegroup::odot(&homog)?;
    let full = pose.matrix() * od;
    Ok(full.rows(0, n).clone_owned())
}
