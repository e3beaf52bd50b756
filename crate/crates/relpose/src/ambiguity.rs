//! Closed-form enumeration of the planar (SE(2)) relative-pose ambiguities
//! of a two-tag robot pair, and their cross-robot combinations.
//!
//! Given the four ranges between the reference robot's tags (tau_1, tau_2)
//! and a target robot's tags (tau_i, tau_j), each target tag lies on the
//! intersection of two circles centered at the reference tags. The two
//! intersection branches give modes 1 and 2; modes 3 and 4 are the "flip"
//! hypotheses obtained by reflecting modes 1 and 2 about the tau_i--tau_j
//! axis and turning the heading by pi. Flips reproduce the measured ranges
//! exactly when the ranges to the two target tags are pairwise equal, which
//! is precisely the configuration in which they cannot be ruled out.
//!
//! All four modes are always returned; per-mode validity records whether the
//! circle construction was feasible (discriminant not significantly
//! negative). Noise-induced small negative discriminants are clamped to
//! tangent circles.

use nalgebra::{DVector, Vector2};

use crate::error::{Error, Result};
use crate::liegroup::Pose;
use crate::models::{MeasurementGraph, RelativeState, RobotGeometry};

/// The four ranges between reference tags (tau_1, tau_2) and target tags
/// (tau_i, tau_j), in meters.
#[derive(Debug, Clone, Copy)]
pub struct PairRanges {
    /// tau_1 to tau_i
    pub y_1i: f64,
    /// tau_1 to tau_j
    pub y_1j: f64,
    /// tau_2 to tau_i
    pub y_2i: f64,
    /// tau_2 to tau_j
    pub y_2j: f64,
}

impl PairRanges {
    pub fn new(y_1i: f64, y_1j: f64, y_2i: f64, y_2j: f64) -> Result<Self> {
        for y in [y_1i, y_1j, y_2i, y_2j] {
            if !y.is_finite() || y <= 0.0 {
                return Err(Error::invalid("pair ranges must be positive and finite"));
            }
        }
        Ok(PairRanges { y_1i, y_1j, y_2i, y_2j })
    }

    /// Extracts the four pair ranges from a stacked measurement vector.
    /// Edge orientation in the graph is irrelevant.
    pub fn from_stack(
        graph: &MeasurementGraph,
        values: &DVector<f64>,
        ref_geom: &RobotGeometry,
        tgt_geom: &RobotGeometry,
    ) -> Result<Self> {
        if values.len() != graph.len() {
            return Err(Error::invalid("measurement vector length mismatch"));
        }
        let t1 = ref_geom.tags()[0].0;
        let t2 = ref_geom.tags()[1].0;
        let ti = tgt_geom.tags()[0].0;
        let tj = tgt_geom.tags()[1].0;
        let find = |a: u32, b: u32| -> Result<f64> {
            graph
                .edges()
                .iter()
                .position(|e| (e.tag_a == a && e.tag_b == b) || (e.tag_a == b && e.tag_b == a))
                .map(|k| values[k])
                .ok_or_else(|| Error::invalid(format!("graph is missing edge ({a}, {b})")))
        };
        PairRanges::new(find(t1, ti)?, find(t1, tj)?, find(t2, ti)?, find(t2, tj)?)
    }
}

/// One planar pose hypothesis with its mode index (1..=4).
#[derive(Debug, Clone)]
pub struct PlanarMode {
    pub index: usize,
    pub pose: Pose,
    pub valid: bool,
}

/// The up-to-four planar hypotheses for one robot pair.
#[derive(Debug, Clone)]
pub struct PlanarModeSet {
    pub modes: Vec<PlanarMode>,
}

impl PlanarModeSet {
    pub fn valid_modes(&self) -> impl Iterator<Item = &PlanarMode> {
        self.modes.iter().filter(|m| m.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.modes.iter().filter(|m| m.valid).count()
    }
}

/// One element of the Cartesian product of per-pair modes.
#[derive(Debug, Clone)]
pub struct ModeCombination {
    /// 1-based combination index in mixed-radix order (first pair fastest).
    pub index: usize,
    /// Per-pair mode indices that form this combination.
    pub mode_indices: Vec<usize>,
    pub state: RelativeState,
}

/// Reflects `p` about the line through `anchor` with direction `axis`.
/// An involution; the axis must be nonzero.
pub fn reflect_about_axis(
    p: &Vector2<f64>,
    axis: &Vector2<f64>,
    anchor: &Vector2<f64>,
) -> Result<Vector2<f64>> {
    let norm = axis.norm();
    if norm < 1e-15 {
        return Err(Error::invalid("reflection axis must be nonzero"));
    }
    let u = axis / norm;
    let d = p - anchor;
    let along = u * (u.dot(&d));
    // S = 2 u u^T - I applied to the anchored offset
    Ok(anchor + (along * 2.0 - d))
}

fn planar_two_tag(geom: &RobotGeometry, who: &str) -> Result<(Vector2<f64>, Vector2<f64>)> {
    if geom.dim() != 2 {
        return Err(Error::invalid(format!(
            "{who} geometry must be planar for the geometric solver"
        )));
    }
    if geom.tags().len() != 2 {
        return Err(Error::invalid(format!(
            "{who} robot must carry exactly two tags"
        )));
    }
    let a = &geom.tags()[0].1;
    let b = &geom.tags()[1].1;
    Ok((Vector2::new(a[0], a[1]), Vector2::new(b[0], b[1])))
}

/// Solves the four planar relative-pose hypotheses of one robot pair from
/// its four inter-tag ranges.
///
/// Modes 1 and 2 come from the two circle-intersection branches; modes 3
/// and 4 reflect them about the estimated tau_i--tau_j axis with the heading
/// turned by pi. A discriminant below `-tol` marks the mode set invalid
/// (circles do not intersect); within `[-tol, 0]` it is clamped to tangent
/// circles.
pub fn solve_pair(
    geom_ref: &RobotGeometry,
    geom_tgt: &RobotGeometry,
    r: &PairRanges,
) -> Result<PlanarModeSet> {
    let (t1, t2) = planar_two_tag(geom_ref, "reference")?;
    let (oi, oj) = planar_two_tag(geom_tgt, "target")?;

    let baseline = t2 - t1;
    let d = baseline.norm();
    if d < 1e-12 {
        return Err(Error::DegenerateGeometry(
            "reference tag baseline has zero length".into(),
        ));
    }
    let n1 = baseline / d;
    let n1_perp = Vector2::new(-n1.y, n1.x);

    // Circle-intersection abscissa/ordinate per target tag. A negative
    // discriminant within a quarter of the range scale is clamped to
    // tangent circles (measurement noise routinely produces such dips near
    // collinear geometry); a grossly negative one marks the set infeasible.
    let mut feasible = true;
    let mut solve_tag = |y1: f64, y2: f64| -> (f64, f64) {
        let e = (y1 * y1 - y2 * y2 + d * d) / (2.0 * d);
        let disc = y1 * y1 - e * e;
        let tol = (0.25 * (y1 * y1).max(d * d)).max(1e-12);
        let h = if disc < -tol {
            feasible = false;
            0.0
        } else if disc <= 0.0 {
            0.0
        } else {
            disc.sqrt()
        };
        (e, h)
    };
    let (e_i, h_i) = solve_tag(r.y_1i, r.y_2i);
    let (e_j, h_j) = solve_tag(r.y_1j, r.y_2j);

    // heading of the tag axis in the target body frame
    let body_axis = oi - oj;
    let phi_rp = body_axis.y.atan2(body_axis.x);

    let mut modes = Vec::with_capacity(4);
    let mut flip_inputs = Vec::with_capacity(2);
    for (alpha, sign) in [(1usize, 1.0f64), (2, -1.0)] {
        // target tag positions relative to tau_1, resolved in frame 1
        let p_i = n1 * e_i + n1_perp * (sign * h_i);
        let p_j = n1 * e_j + n1_perp * (sign * h_j);
        let axis_1 = p_i - p_j;
        let phi_r1 = axis_1.y.atan2(axis_1.x);
        let heading = phi_r1 - phi_rp;
        let rot = crate::liegroup::Rotation::from_angle(heading);
        // robot position anchored at tag i
        let tag_i_world = p_i + t1;
        let rotated = rot.matrix() * DVector::from_vec(vec![oi.x, oi.y]);
        let pos = tag_i_world - Vector2::new(rotated[0], rotated[1]);
        modes.push(PlanarMode {
            index: alpha,
            pose: Pose::planar(heading, pos.x, pos.y),
            valid: feasible,
        });
        flip_inputs.push((pos, heading, tag_i_world, p_j + t1));
    }

    for (alpha, (pos, heading, tag_i_world, tag_j_world)) in flip_inputs.into_iter().enumerate() {
        let axis = tag_j_world - tag_i_world;
        if axis.norm() < 1e-12 {
            // estimated target tags coincide, no flip axis
            modes.push(PlanarMode {
                index: alpha + 3,
                pose: modes[alpha].pose.clone(),
                valid: false,
            });
            continue;
        }
        let reflected = reflect_about_axis(&pos, &axis, &tag_i_world)?;
        let flipped_heading = heading + std::f64::consts::PI;
        modes.push(PlanarMode {
            index: alpha + 3,
            pose: Pose::planar(flipped_heading, reflected.x, reflected.y),
            valid: feasible,
        });
    }

    Ok(PlanarModeSet { modes })
}

/// Cartesian product over the valid modes of each pair, in deterministic
/// mixed-radix order with the first pair (robot 2) varying fastest.
pub fn enumerate_combinations(per_pair: &[PlanarModeSet]) -> Result<Vec<ModeCombination>> {
    if per_pair.is_empty() {
        return Err(Error::invalid("no mode sets to combine"));
    }
    let valid: Vec<Vec<&PlanarMode>> = per_pair
        .iter()
        .map(|set| set.valid_modes().collect())
        .collect();
    for (i, v) in valid.iter().enumerate() {
        if v.is_empty() {
            return Err(Error::NoSolution(format!(
                "robot pair {} has no valid geometric mode",
                i + 2
            )));
        }
    }
    let total: usize = valid.iter().map(|v| v.len()).product();
    let mut combos = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut poses = Vec::with_capacity(valid.len());
        let mut mode_indices = Vec::with_capacity(valid.len());
        for v in &valid {
            let pick = rem % v.len();
            rem /= v.len();
            poses.push(v[pick].pose.clone());
            mode_indices.push(v[pick].index);
        }
        combos.push(ModeCombination {
            index: idx + 1,
            mode_indices,
            state: RelativeState::new(poses)?,
        });
    }
    Ok(combos)
}

/// Forward model for one pair: rebuilds the four ranges a planar pose
/// implies, in `PairRanges` field order.
pub fn pair_ranges_from_pose(
    geom_ref: &RobotGeometry,
    geom_tgt: &RobotGeometry,
    pose: &Pose,
) -> Result<PairRanges> {
    let (t1, t2) = planar_two_tag(geom_ref, "reference")?;
    let (oi, oj) = planar_two_tag(geom_tgt, "target")?;
    let place = |o: &Vector2<f64>| -> Vector2<f64> {
        let rotated = pose.rotation().matrix() * DVector::from_vec(vec![o.x, o.y]);
        Vector2::new(rotated[0], rotated[1])
            + Vector2::new(pose.translation()[0], pose.translation()[1])
    };
    let pi = place(&oi);
    let pj = place(&oj);
    PairRanges::new(
        (pi - t1).norm(),
        (pj - t1).norm(),
        (pi - t2).norm(),
        (pj - t2).norm(),
    )
}
