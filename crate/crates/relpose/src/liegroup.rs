//! Matrix Lie group primitives for SO(n)/SE(n), n in {2, 3}.
//!
//! Poses are stored as a rotation matrix plus a translation vector. Tangent
//! vectors are ordered `[angular; translational]`: SE(2) uses `[theta, rho1,
//! rho2]` and SE(3) uses `[phi(3), rho(3)]`, matching the `[omega; v]` layout
//! of body-frame velocity inputs. All perturbations throughout the crate are
//! right perturbations, `T * exp(xi^)`.
//!
//! Closed-form exponential/logarithm maps switch to Taylor expansions below
//! an angle of 1e-6 to avoid 0/0. The logarithm is an error at rotation
//! angles within 1e-6 of pi rather than a best-effort value.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Angle below which exp/log use their Taylor branches.
const SMALL_ANGLE: f64 = 1e-6;
/// Orthonormality / pattern tolerance for validated constructors.
const ORTHO_TOL: f64 = 1e-9;
/// Log is refused within this margin of the angle-pi cut locus.
const LOG_ANGLE_MARGIN: f64 = 1e-6;

/// Stacked tangent coordinates, length 3 (SE(2)) or 6 (SE(3)).
pub type TangentVec = DVector<f64>;

/// Tangent dimension m for a group acting on R^n.
pub fn tangent_dim(n: usize) -> usize {
    match n {
        2 => 3,
        3 => 6,
        _ => panic!("unsupported group dimension {n}"),
    }
}

/// Group (ambient) dimension n for a tangent of length m.
fn group_dim(m: usize) -> Result<usize> {
    match m {
        3 => Ok(2),
        6 => Ok(3),
        _ => Err(Error::invalid(format!(
            "tangent length must be 3 or 6, got {m}"
        ))),
    }
}

fn skew2() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

fn skew3(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn rot2(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// An n x n rotation matrix, n in {2, 3}.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    mat: DMatrix<f64>,
}

impl Rotation {
    /// Identity rotation in dimension `n`.
    pub fn identity(n: usize) -> Self {
        assert!(n == 2 || n == 3, "unsupported rotation dimension {n}");
        Rotation {
            mat: DMatrix::identity(n, n),
        }
    }

    /// Planar rotation by `theta` radians.
    pub fn from_angle(theta: f64) -> Self {
        let r = rot2(theta);
        Rotation {
            mat: DMatrix::from_iterator(2, 2, r.iter().copied()),
        }
    }

    /// Rotation about the z-axis by `yaw` radians, as a 3x3 matrix.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let m = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        Rotation { mat: m }
    }

    /// Validates orthonormality (`R R^T = I` within 1e-9) and `det = +1`.
    pub fn try_from_matrix(mat: DMatrix<f64>) -> Result<Self> {
        let n = mat.nrows();
        if !(n == 2 || n == 3) || mat.ncols() != n {
            return Err(Error::invalid(format!(
                "rotation must be 2x2 or 3x3, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let gram = &mat * mat.transpose();
        let eye = DMatrix::identity(n, n);
        if (&gram - &eye).amax() > ORTHO_TOL {
            return Err(Error::invalid("rotation matrix is not orthonormal"));
        }
        let det = mat.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::invalid(format!(
                "rotation determinant {det} is not +1"
            )));
        }
        Ok(Rotation { mat })
    }

    /// Constructor for matrices known to be orthonormal by construction.
    pub(crate) fn from_matrix_unchecked(mat: DMatrix<f64>) -> Self {
        Rotation { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn transpose(&self) -> Rotation {
        Rotation {
            mat: self.mat.transpose(),
        }
    }

    /// Rotation angle: |theta| for SO(2), the axis-angle magnitude for SO(3).
    pub fn angle(&self) -> f64 {
        match self.dim() {
            2 => self.mat[(1, 0)].atan2(self.mat[(0, 0)]).abs(),
            3 => {
                let c = ((self.mat.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
                c.acos()
            }
            _ => unreachable!(),
        }
    }
}

impl std::ops::Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation {
            mat: &self.mat * &rhs.mat,
        }
    }
}

/// An SE(n) element: rotation plus translation, n in {2, 3}.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rot: Rotation,
    trans: DVector<f64>,
}

impl Pose {
    pub fn identity(n: usize) -> Self {
        Pose {
            rot: Rotation::identity(n),
            trans: DVector::zeros(n),
        }
    }

    pub fn new(rot: Rotation, trans: DVector<f64>) -> Result<Self> {
        if trans.len() != rot.dim() {
            return Err(Error::invalid(format!(
                "translation length {} does not match rotation dimension {}",
                trans.len(),
                rot.dim()
            )));
        }
        Ok(Pose { rot, trans })
    }

    /// Planar pose from heading and position.
    pub fn planar(theta: f64, x: f64, y: f64) -> Self {
        Pose {
            rot: Rotation::from_angle(theta),
            trans: DVector::from_vec(vec![x, y]),
        }
    }

    pub fn dim(&self) -> usize {
        self.rot.dim()
    }

    /// Tangent dimension m of this pose's group.
    pub fn tangent_dim(&self) -> usize {
        tangent_dim(self.dim())
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rot
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.trans
    }

    /// Homogeneous (n+1)x(n+1) matrix with bottom row [0 ... 0 1].
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(self.rot.matrix());
        m.view_mut((0, n), (n, 1)).copy_from(&self.trans);
        m[(n, n)] = 1.0;
        m
    }

    pub fn compose(&self, rhs: &Pose) -> Pose {
        debug_assert_eq!(self.dim(), rhs.dim());
        Pose {
            rot: &self.rot * &rhs.rot,
            trans: self.rot.matrix() * &rhs.trans + &self.trans,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rot.transpose();
        let trans = -(rt.matrix() * &self.trans);
        Pose { rot: rt, trans }
    }

    /// Applies the pose to a point in R^n.
    pub fn apply(&self, p: &DVector<f64>) -> DVector<f64> {
        self.rot.matrix() * p + &self.trans
    }

    /// Heading of a planar pose.
    pub fn yaw(&self) -> f64 {
        match self.dim() {
            2 => self.rot.matrix()[(1, 0)].atan2(self.rot.matrix()[(0, 0)]),
            3 => self.rot.matrix()[(1, 0)].atan2(self.rot.matrix()[(0, 0)]),
            _ => unreachable!(),
        }
    }
}

impl std::ops::Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

fn check_finite(v: &DVector<f64>) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite tangent coordinates"));
    }
    Ok(())
}

/// Lie-algebra matrix `xi^` of a tangent vector; linear in `v`.
pub fn wedge(v: &TangentVec) -> Result<DMatrix<f64>> {
    let n = group_dim(v.len())?;
    let mut m = DMatrix::zeros(n + 1, n + 1);
    match n {
        2 => {
            let theta = v[0];
            m[(0, 1)] = -theta;
            m[(1, 0)] = theta;
            m[(0, 2)] = v[1];
            m[(1, 2)] = v[2];
        }
        3 => {
            let phi = Vector3::new(v[0], v[1], v[2]);
            let s = skew3(&phi);
            m.view_mut((0, 0), (3, 3))
                .copy_from(&DMatrix::from_iterator(3, 3, s.iter().copied()));
            m[(0, 3)] = v[3];
            m[(1, 3)] = v[4];
            m[(2, 3)] = v[5];
        }
        _ => unreachable!(),
    }
    Ok(m)
}

/// Inverse of [`wedge`]; rejects matrices without the algebra's sparsity
/// pattern (skew block, zero bottom row) beyond 1e-9.
pub fn vee(m: &DMatrix<f64>) -> Result<TangentVec> {
    let rows = m.nrows();
    if m.ncols() != rows || !(rows == 3 || rows == 4) {
        return Err(Error::invalid(format!(
            "algebra matrix must be 3x3 or 4x4, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = rows - 1;
    for c in 0..rows {
        if m[(n, c)].abs() > ORTHO_TOL {
            return Err(Error::invalid("algebra matrix bottom row is not zero"));
        }
    }
    let block = m.view((0, 0), (n, n));
    for i in 0..n {
        for j in 0..n {
            if (block[(i, j)] + block[(j, i)]).abs() > ORTHO_TOL {
                return Err(Error::invalid("algebra rotation block is not skew"));
            }
        }
    }
    let v = match n {
        2 => DVector::from_vec(vec![m[(1, 0)], m[(0, 2)], m[(1, 2)]]),
        3 => DVector::from_vec(vec![
            m[(2, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(0, 3)],
            m[(1, 3)],
            m[(2, 3)],
        ]),
        _ => unreachable!(),
    };
    Ok(v)
}

/// Closed-form exponential map R^m -> SE(n).
pub fn exp_map(v: &TangentVec) -> Result<Pose> {
    check_finite(v)?;
    let n = group_dim(v.len())?;
    match n {
        2 => {
            let theta = v[0];
            let rho = Vector2::new(v[1], v[2]);
            let (a, b) = if theta.abs() < SMALL_ANGLE {
                let t2 = theta * theta;
                (1.0 - t2 / 6.0, theta / 2.0 - t2 * theta / 24.0)
            } else {
                (theta.sin() / theta, (1.0 - theta.cos()) / theta)
            };
            let vmat = Matrix2::identity() * a + skew2() * b;
            let t = vmat * rho;
            Ok(Pose {
                rot: Rotation::from_angle(theta),
                trans: DVector::from_vec(vec![t.x, t.y]),
            })
        }
        3 => {
            let phi = Vector3::new(v[0], v[1], v[2]);
            let rho = Vector3::new(v[3], v[4], v[5]);
            let theta = phi.norm();
            let px = skew3(&phi);
            let px2 = px * px;
            // Rodrigues coefficients: R = I + A px + B px^2, V = I + B px + C px^2.
            let (a, b, c) = if theta < SMALL_ANGLE {
                let t2 = theta * theta;
                (
                    1.0 - t2 / 6.0,
                    0.5 - t2 / 24.0,
                    1.0 / 6.0 - t2 / 120.0,
                )
            } else {
                let t2 = theta * theta;
                (
                    theta.sin() / theta,
                    (1.0 - theta.cos()) / t2,
                    (theta - theta.sin()) / (t2 * theta),
                )
            };
            let r = Matrix3::identity() + px * a + px2 * b;
            let vmat = Matrix3::identity() + px * b + px2 * c;
            let t = vmat * rho;
            Ok(Pose {
                rot: Rotation::from_matrix_unchecked(DMatrix::from_iterator(
                    3,
                    3,
                    r.iter().copied(),
                )),
                trans: DVector::from_vec(vec![t.x, t.y, t.z]),
            })
        }
        _ => unreachable!(),
    }
}

/// Logarithm map SE(n) -> R^m. Errors within 1e-6 of rotation angle pi.
pub fn log_map(pose: &Pose) -> Result<TangentVec> {
    match pose.dim() {
        2 => {
            let r = pose.rot.matrix();
            let theta = r[(1, 0)].atan2(r[(0, 0)]);
            if theta.abs() > std::f64::consts::PI - LOG_ANGLE_MARGIN {
                return Err(Error::SingularRotation);
            }
            let (a, b) = if theta.abs() < SMALL_ANGLE {
                let t2 = theta * theta;
                (1.0 - t2 / 6.0, theta / 2.0 - t2 * theta / 24.0)
            } else {
                (theta.sin() / theta, (1.0 - theta.cos()) / theta)
            };
            // V = a I + b Omega  =>  V^-1 = (a I - b Omega) / (a^2 + b^2).
            let denom = a * a + b * b;
            let vinv = (Matrix2::identity() * a - skew2() * b) / denom;
            let t = Vector2::new(pose.trans[0], pose.trans[1]);
            let rho = vinv * t;
            Ok(DVector::from_vec(vec![theta, rho.x, rho.y]))
        }
        3 => {
            let r = pose.rot.matrix();
            let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            let theta = cos_theta.acos();
            if theta > std::f64::consts::PI - LOG_ANGLE_MARGIN {
                return Err(Error::SingularRotation);
            }
            let skew_part = Vector3::new(
                r[(2, 1)] - r[(1, 2)],
                r[(0, 2)] - r[(2, 0)],
                r[(1, 0)] - r[(0, 1)],
            );
            let phi = if theta < SMALL_ANGLE {
                // theta / (2 sin theta) ~ 1/2 + theta^2/12
                skew_part * (0.5 + theta * theta / 12.0)
            } else {
                skew_part * (theta / (2.0 * theta.sin()))
            };
            let px = skew3(&phi);
            let px2 = px * px;
            let coeff = if theta < SMALL_ANGLE {
                1.0 / 12.0 + theta * theta / 720.0
            } else {
                let t2 = theta * theta;
                let a = theta.sin() / theta;
                let b = (1.0 - theta.cos()) / t2;
                (1.0 - a / (2.0 * b)) / t2
            };
            let vinv = Matrix3::identity() - px * 0.5 + px2 * coeff;
            let t = Vector3::new(pose.trans[0], pose.trans[1], pose.trans[2]);
            let rho = vinv * t;
            Ok(DVector::from_vec(vec![
                phi.x, phi.y, phi.z, rho.x, rho.y, rho.z,
            ]))
        }
        _ => unreachable!(),
    }
}

/// Adjoint matrix of a pose: `exp((Ad(T) v)^) = T exp(v^) T^-1`.
pub fn adjoint(pose: &Pose) -> DMatrix<f64> {
    match pose.dim() {
        2 => {
            let r = pose.rot.matrix();
            let t = &pose.trans;
            let mut ad = DMatrix::zeros(3, 3);
            ad[(0, 0)] = 1.0;
            // translational row-block: [-Omega t | R]
            ad[(1, 0)] = t[1];
            ad[(2, 0)] = -t[0];
            ad.view_mut((1, 1), (2, 2)).copy_from(r);
            ad
        }
        3 => {
            let r = pose.rot.matrix();
            let t = Vector3::new(pose.trans[0], pose.trans[1], pose.trans[2]);
            let tx_r = skew3(&t) * Matrix3::from_iterator(r.iter().copied());
            let mut ad = DMatrix::zeros(6, 6);
            ad.view_mut((0, 0), (3, 3)).copy_from(r);
            ad.view_mut((3, 3), (3, 3)).copy_from(r);
            ad.view_mut((3, 0), (3, 3))
                .copy_from(&DMatrix::from_iterator(3, 3, tx_r.iter().copied()));
            ad
        }
        _ => unreachable!(),
    }
}

/// The `(.)^odot` operator on a homogeneous point `h = [r^T 1]^T`:
/// an (n+1) x m matrix with `odot(h) * v = wedge(v) * h` for all tangent `v`.
pub fn odot(h: &DVector<f64>) -> Result<DMatrix<f64>> {
    let rows = h.len();
    if !(rows == 3 || rows == 4) {
        return Err(Error::invalid(format!(
            "homogeneous point must have length 3 or 4, got {rows}"
        )));
    }
    if (h[rows - 1] - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(
            "homogeneous point must have last component 1",
        ));
    }
    match rows {
        3 => {
            // [ Omega r | I2 ] over a zero bottom row
            let mut m = DMatrix::zeros(3, 3);
            m[(0, 0)] = -h[1];
            m[(1, 0)] = h[0];
            m[(0, 1)] = 1.0;
            m[(1, 2)] = 1.0;
            Ok(m)
        }
        4 => {
            let r = Vector3::new(h[0], h[1], h[2]);
            let neg_rx = -skew3(&r);
            let mut m = DMatrix::zeros(4, 6);
            m.view_mut((0, 0), (3, 3))
                .copy_from(&DMatrix::from_iterator(3, 3, neg_rx.iter().copied()));
            m.view_mut((0, 3), (3, 3))
                .copy_from(&DMatrix::identity(3, 3));
            Ok(m)
        }
        _ => unreachable!(),
    }
}

/// Adjoint of the Lie algebra, `ad_xi`, such that `[xi, eta]^ = ad_xi eta^...`;
/// used by the right-Jacobian series.
fn algebra_adjoint(v: &TangentVec) -> DMatrix<f64> {
    match v.len() {
        3 => {
            let theta = v[0];
            let mut ad = DMatrix::zeros(3, 3);
            // [-Omega rho | theta Omega] in the translational block-row
            ad[(1, 0)] = v[2];
            ad[(2, 0)] = -v[1];
            ad[(1, 2)] = -theta;
            ad[(2, 1)] = theta;
            ad
        }
        6 => {
            let phi = Vector3::new(v[0], v[1], v[2]);
            let rho = Vector3::new(v[3], v[4], v[5]);
            let px = skew3(&phi);
            let rx = skew3(&rho);
            let mut ad = DMatrix::zeros(6, 6);
            ad.view_mut((0, 0), (3, 3))
                .copy_from(&DMatrix::from_iterator(3, 3, px.iter().copied()));
            ad.view_mut((3, 3), (3, 3))
                .copy_from(&DMatrix::from_iterator(3, 3, px.iter().copied()));
            ad.view_mut((3, 0), (3, 3))
                .copy_from(&DMatrix::from_iterator(3, 3, rx.iter().copied()));
            ad
        }
        _ => panic!("unsupported tangent length"),
    }
}

/// Right Jacobian of the exponential map, via the convergent series
/// `sum_k (-ad_xi)^k / (k+1)!`; relates additive tangent perturbations to
/// right perturbations of `exp`.
pub fn right_jacobian(v: &TangentVec) -> DMatrix<f64> {
    let m = v.len();
    let neg_ad = -algebra_adjoint(v);
    let mut jr = DMatrix::identity(m, m);
    let mut term = DMatrix::identity(m, m);
    for k in 1..=30 {
        term = (&term * &neg_ad) / (k as f64 + 1.0);
        jr += &term;
        if term.amax() < 1e-17 {
            break;
        }
    }
    jr
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Series oracle: exp(M) = sum_k M^k / k!, 30 terms.
    fn matrix_exp_series(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut acc = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..=30 {
            term = (&term * m) / k as f64;
            acc += &term;
        }
        acc
    }

    fn random_tangent(rng: &mut StdRng, m: usize, scale: f64) -> TangentVec {
        DVector::from_iterator(m, (0..m).map(|_| rng.gen_range(-scale..scale)))
    }

    fn random_pose(rng: &mut StdRng, n: usize) -> Pose {
        let m = tangent_dim(n);
        exp_map(&random_tangent(rng, m, 1.5)).unwrap()
    }

    #[test]
    fn wedge_of_zero_is_zero_matrix() {
        for m in [3usize, 6] {
            let w = wedge(&DVector::zeros(m)).unwrap();
            assert_eq!(w.amax(), 0.0);
        }
    }

    #[test]
    fn wedge_se2_matches_generator_expansion() {
        // Written out by hand from the basis generators of se(2) with
        // ordering [theta, rho1, rho2].
        let v = DVector::from_vec(vec![0.7, -1.2, 2.5]);
        let w = wedge(&v).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[0.0, -0.7, -1.2, 0.7, 0.0, 2.5, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(w, expected, epsilon = 0.0);
    }

    #[test]
    fn vee_wedge_roundtrip() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100 {
            for m in [3usize, 6] {
                let v = random_tangent(&mut rng, m, 5.0);
                let back = vee(&wedge(&v).unwrap()).unwrap();
                assert_abs_diff_eq!(v, back, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn vee_rejects_non_skew_input() {
        let mut m = wedge(&DVector::from_vec(vec![0.3, 1.0, 2.0])).unwrap();
        m[(0, 1)] += 1e-6;
        assert!(matches!(vee(&m), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn vee_rejects_nonzero_bottom_row() {
        let mut m = wedge(&DVector::from_vec(vec![0.3, 1.0, 2.0])).unwrap();
        m[(2, 0)] = 1e-6;
        assert!(vee(&m).is_err());
    }

    #[test]
    fn exp_of_zero_is_identity() {
        for n in [2usize, 3] {
            let p = exp_map(&DVector::zeros(tangent_dim(n))).unwrap();
            assert_eq!(p, Pose::identity(n));
        }
    }

    #[test]
    fn exp_matches_series_oracle() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            for m in [3usize, 6] {
                let mut v = random_tangent(&mut rng, m, 1.0);
                let norm = v.norm();
                if norm > 2.0 {
                    v *= 2.0 / norm;
                }
                let exact = exp_map(&v).unwrap().matrix();
                let series = matrix_exp_series(&wedge(&v).unwrap());
                assert!((exact - series).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn exp_of_negated_tangent_is_inverse() {
        let mut rng = StdRng::seed_from_u64(3);
        for m in [3usize, 6] {
            let v = random_tangent(&mut rng, m, 1.2);
            let p = exp_map(&v).unwrap();
            let q = exp_map(&(-&v)).unwrap();
            let prod = p.compose(&q).matrix();
            assert!((prod - DMatrix::identity(m / 3 + 2, m / 3 + 2)).amax() < 1e-12);
        }
    }

    #[test]
    fn exp_rejects_non_finite() {
        let v = DVector::from_vec(vec![f64::NAN, 0.0, 0.0]);
        assert!(exp_map(&v).is_err());
    }

    #[test]
    fn log_of_identity_is_zero() {
        for n in [2usize, 3] {
            let v = log_map(&Pose::identity(n)).unwrap();
            assert_eq!(v.amax(), 0.0);
        }
    }

    #[test]
    fn log_exp_roundtrip_inside_injectivity_radius() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..100 {
            for m in [3usize, 6] {
                let mut v = random_tangent(&mut rng, m, 2.0);
                // keep the angular part below pi - 0.1
                let ang = if m == 3 {
                    v[0].abs()
                } else {
                    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
                };
                let limit = std::f64::consts::PI - 0.1;
                if ang > limit {
                    let s = limit / ang;
                    for i in 0..m / 2 {
                        v[i] *= s;
                    }
                }
                let back = log_map(&exp_map(&v).unwrap()).unwrap();
                assert!((&v - &back).amax() < 1e-9, "m={m} v={v} back={back}");
            }
        }
    }

    #[test]
    fn log_near_pi_is_singular() {
        let near_pi = std::f64::consts::PI - 1e-8;
        let p2 = Pose::planar(near_pi, 0.4, -0.2);
        assert!(matches!(log_map(&p2), Err(Error::SingularRotation)));
        let v = DVector::from_vec(vec![near_pi, 0.0, 0.0, 0.1, 0.2, 0.3]);
        let p3 = exp_map(&v).unwrap();
        assert!(matches!(log_map(&p3), Err(Error::SingularRotation)));
    }

    #[test]
    fn adjoint_of_identity_is_identity() {
        for n in [2usize, 3] {
            let ad = adjoint(&Pose::identity(n));
            let m = tangent_dim(n);
            assert_abs_diff_eq!(ad, DMatrix::identity(m, m), epsilon = 0.0);
        }
    }

    #[test]
    fn adjoint_defining_identity() {
        // exp((Ad(T) v)^) = T exp(v^) T^-1, direct matrix-product oracle.
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            for n in [2usize, 3] {
                let m = tangent_dim(n);
                let t = random_pose(&mut rng, n);
                let v = random_tangent(&mut rng, m, 0.8);
                let lhs = exp_map(&(adjoint(&t) * &v)).unwrap().matrix();
                let rhs = t
                    .compose(&exp_map(&v).unwrap())
                    .compose(&t.inverse())
                    .matrix();
                assert!((lhs - rhs).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn adjoint_is_homomorphism() {
        let mut rng = StdRng::seed_from_u64(6);
        for n in [2usize, 3] {
            let a = random_pose(&mut rng, n);
            let b = random_pose(&mut rng, n);
            let lhs = adjoint(&a.compose(&b));
            let rhs = adjoint(&a) * adjoint(&b);
            assert!((lhs - rhs).amax() < 1e-9);
        }
    }

    #[test]
    fn odot_defining_identity() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            for n in [2usize, 3] {
                let m = tangent_dim(n);
                let mut h = DVector::zeros(n + 1);
                for i in 0..n {
                    h[i] = rng.gen_range(-3.0..3.0);
                }
                h[n] = 1.0;
                let v = random_tangent(&mut rng, m, 2.0);
                let lhs = odot(&h).unwrap() * &v;
                let rhs = wedge(&v).unwrap() * &h;
                assert!((lhs - rhs).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn odot_at_origin_point() {
        // h = [0 ... 0 1]: the point part must not respond to the angular
        // generators, per the defining identity evaluated at the origin.
        for n in [2usize, 3] {
            let m = tangent_dim(n);
            let mut h = DVector::zeros(n + 1);
            h[n] = 1.0;
            let od = odot(&h).unwrap();
            let angular = od.view((0, 0), (n, m - n));
            assert_eq!(angular.amax(), 0.0);
        }
    }

    #[test]
    fn odot_rejects_bad_homogeneous_coordinate() {
        let h = DVector::from_vec(vec![1.0, 2.0, 0.5]);
        assert!(odot(&h).is_err());
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(8);
        let eps = 1e-6;
        for m in [3usize, 6] {
            let v = random_tangent(&mut rng, m, 1.0);
            let jr = right_jacobian(&v);
            let base = exp_map(&v).unwrap();
            for j in 0..m {
                let mut vp = v.clone();
                vp[j] += eps;
                let mut vm = v.clone();
                vm[j] -= eps;
                // column j of Jr = d/de log(exp(v)^-1 exp(v + e e_j))
                let dp = log_map(&base.inverse().compose(&exp_map(&vp).unwrap())).unwrap();
                let dm = log_map(&base.inverse().compose(&exp_map(&vm).unwrap())).unwrap();
                let col = (dp - dm) / (2.0 * eps);
                let jcol = jr.column(j);
                assert!((col - jcol).amax() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn prop_group_axioms_se3(seed in 0u64..500) {
            let mut rng = StdRng::seed_from_u64(seed);
            let a = random_pose(&mut rng, 3);
            let b = random_pose(&mut rng, 3);
            let c = random_pose(&mut rng, 3);
            // associativity
            let lhs = a.compose(&b).compose(&c).matrix();
            let rhs = a.compose(&b.compose(&c)).matrix();
            prop_assert!((lhs - rhs).amax() < 1e-9);
            // identity and inverse
            let e = Pose::identity(3);
            prop_assert!((a.compose(&e).matrix() - a.matrix()).amax() < 1e-12);
            let inv = a.compose(&a.inverse()).matrix();
            prop_assert!((inv - DMatrix::identity(4, 4)).amax() < 1e-9);
        }

        #[test]
        fn prop_exp_output_is_orthonormal(seed in 0u64..500) {
            let mut rng = StdRng::seed_from_u64(seed);
            for n in [2usize, 3] {
                let v = random_tangent(&mut rng, tangent_dim(n), 3.0);
                let p = exp_map(&v).unwrap();
                let r = p.rotation().matrix();
                let gram = r * r.transpose();
                prop_assert!((gram - DMatrix::identity(n, n)).amax() < 1e-9);
                prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn prop_exp_log_roundtrip_both_orders(seed in 0u64..200) {
            let mut rng = StdRng::seed_from_u64(seed);
            for n in [2usize, 3] {
                let p = random_pose(&mut rng, n);
                if let Ok(v) = log_map(&p) {
                    let back = exp_map(&v).unwrap();
                    prop_assert!((back.matrix() - p.matrix()).amax() < 1e-9);
                }
            }
        }
    }
}
