//! Rigid transforms, laser lines and curvilinear transducer geometry.
//!
//! Everything here works in millimetres and radians. Degrees only show up at
//! file and command-line boundaries.

use core::fmt;

use nalgebra::{ComplexField, Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Frobenius drift of `RᵀR − I` above which a rotation is projected back onto SO(3).
const REORTHONORMALIZE_ABOVE: f64 = 1e-12;

/// Rotation tolerance accepted by [`RigidTransform::from_parts`].
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// A proper rigid motion `p ↦ R·p + t` (rotation is orthonormal, `det R = +1`).
#[derive(Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl fmt::Debug for RigidTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RigidTransform")
            .field("rotation", &self.rotation.as_slice())
            .field("translation", &[self.translation.x, self.translation.y, self.translation.z])
            .finish()
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    /// Builds a transform from a rotation matrix and a translation (mm).
    ///
    /// The rotation must satisfy `‖RᵀR − I‖_F < 1e-9` and `det R ≈ 1`; it is
    /// then projected to the nearest rotation so later compositions start clean.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        Self::from_parts_with_tolerance(rotation, translation, ORTHONORMAL_TOL)
    }

    /// Like [`from_parts`](Self::from_parts) with a caller-chosen orthonormality
    /// tolerance. File readers use a looser bound since poses are usually
    /// printed with limited precision.
    pub fn from_parts_with_tolerance(rotation: Matrix3<f64>, translation: Vec3, tol: f64) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry"));
        }
        if orthonormality_defect(&rotation) >= tol {
            return Err(Error::InvalidTransform("rotation is not orthonormal"));
        }
        if (rotation.determinant() - 1.0).abs() >= tol.max(ORTHONORMAL_TOL) {
            return Err(Error::InvalidTransform("rotation determinant is not +1"));
        }
        Ok(Self { rotation: nearest_rotation(&rotation), translation })
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::new(x, y, z) }
    }

    /// Rotation by `|v|` radians about the axis `v / |v|` followed by a translation.
    pub fn from_rotation_vector(rotation_vector: Vec3, translation: Vec3) -> Self {
        Self { rotation: *Rotation3::new(rotation_vector).matrix(), translation }
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_rotation_vector(Vec3::new(angle, 0.0, 0.0), Vec3::zeros())
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_rotation_vector(Vec3::new(0.0, angle, 0.0), Vec3::zeros())
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_rotation_vector(Vec3::new(0.0, 0.0, angle), Vec3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        Self { rotation: keep_orthonormal(rotation), translation }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Left increment used by the registration solver: rotate the whole mapped
    /// frame by `exp(ω)` about the target origin, then shift by `v`.
    ///
    /// The mapped point `y = R·p + t` becomes `exp(ω)·y + v`.
    pub fn left_increment(&self, omega: &Vec3, v: &Vec3) -> RigidTransform {
        let step = Rotation3::new(*omega);
        let rotation = keep_orthonormal(step.matrix() * self.rotation);
        Self { rotation, translation: step * self.translation + v }
    }

    /// Rotation angle (radians, in `[0, π]`) of this transform's rotation.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        ComplexField::acos(c)
    }

    /// Angle of the relative rotation between two transforms.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        self.inverse().compose(other).rotation_angle()
    }

    /// Homogeneous 4×4 matrix, row-major.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    /// Parses a row-major homogeneous matrix. The bottom row must be `[0 0 0 1]`.
    pub fn from_row_major(m: &[f64; 16], tol: f64) -> Result<Self> {
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom.iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > tol) {
            return Err(Error::InvalidTransform("bottom row must be [0, 0, 0, 1]"));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::from_parts_with_tolerance(rotation, Vec3::new(m[3], m[7], m[11]), tol)
    }

    /// Largest absolute entry-wise difference between the two homogeneous matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let a = self.to_row_major();
        let b = other.to_row_major();
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

/// `‖RᵀR − I‖_F`.
pub fn orthonormality_defect(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

fn keep_orthonormal(r: Matrix3<f64>) -> Matrix3<f64> {
    if orthonormality_defect(&r) > REORTHONORMALIZE_ABOVE {
        nearest_rotation(&r)
    } else {
        r
    }
}

/// Nearest rotation in the Frobenius sense (polar factor with a determinant fix).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Matrix3::identity(),
    };
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t
}

/// A parameterized straight line `origin + λ·direction` with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3 {
    origin: Vec3,
    direction: Vec3,
}

impl Line3 {
    /// Normalizes `direction`; fails if it is (near) zero or not finite.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n.is_finite() && n > 1e-12) || !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidLine);
        }
        Ok(Self { origin, direction: direction / n })
    }

    pub fn origin(&self) -> &Vec3 {
        &self.origin
    }

    pub fn direction(&self) -> &Vec3 {
        &self.direction
    }

    /// Point at signed distance `lambda` (mm) from the origin.
    pub fn point_at(&self, lambda: f64) -> Vec3 {
        self.origin + self.direction * lambda
    }

    /// Line parameter of the orthogonal projection of `p`.
    pub fn project_parameter(&self, p: &Vec3) -> f64 {
        (p - self.origin).dot(&self.direction)
    }

    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let d = p - self.origin;
        (d - self.direction * d.dot(&self.direction)).norm()
    }

    /// Maps origin and direction through `t`, renormalizing the direction.
    pub fn transformed(&self, t: &RigidTransform) -> Line3 {
        let direction = t.transform_vector(&self.direction);
        Line3 { origin: t.transform_point(&self.origin), direction: direction / direction.norm() }
    }

    pub fn reversed(&self) -> Line3 {
        Line3 { origin: self.origin, direction: -self.direction }
    }
}

/// Curvilinear array that rotates about its longitudinal (x) axis.
///
/// The transducer frame itself is stationary; only the imaging plane turns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrusGeometry {
    n_elements: usize,
    pitch_mm: f64,
    radius_mm: f64,
}

impl TrusGeometry {
    pub fn new(n_elements: usize, pitch_mm: f64, radius_mm: f64) -> Result<Self> {
        if n_elements < 2 {
            return Err(Error::InvalidGeometry("n_elements must be at least 2"));
        }
        if !(pitch_mm.is_finite() && pitch_mm > 0.0) {
            return Err(Error::InvalidGeometry("pitch must be positive"));
        }
        if !(radius_mm.is_finite() && radius_mm > 0.0) {
            return Err(Error::InvalidGeometry("radius must be positive"));
        }
        Ok(Self { n_elements, pitch_mm, radius_mm })
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn pitch_mm(&self) -> f64 {
        self.pitch_mm
    }

    pub fn radius_mm(&self) -> f64 {
        self.radius_mm
    }

    /// Lateral coordinate of element `index`, centred on the array.
    pub fn element_lateral_mm(&self, index: usize) -> f64 {
        (-0.5 * (self.n_elements as f64 - 1.0) + index as f64) * self.pitch_mm
    }

    /// Half the span between the first and last element centres.
    pub fn half_aperture_mm(&self) -> f64 {
        0.5 * (self.n_elements as f64 - 1.0) * self.pitch_mm
    }

    /// Position of the receiving element at scan angle `theta` and lateral
    /// coordinate `lateral_mm`: `[x, sinθ·r, cosθ·r]`.
    pub fn element_position(&self, theta: f64, lateral_mm: f64) -> Vec3 {
        let (s, c) = ComplexField::sin_cos(theta);
        Vec3::new(lateral_mm, s * self.radius_mm, c * self.radius_mm)
    }

    /// Source position for an observation whose true direction deviates from
    /// the scan plane by `delta_theta`. The source stays on the arc of radius
    /// `r_PM` centred on the receiving element.
    pub fn pm_position(&self, obs: &PmObservation, delta_theta: f64) -> Vec3 {
        self.pm_position_at(obs, obs.scan_angle_rad + delta_theta)
    }

    /// Same as [`pm_position`](Self::pm_position) with the absolute arc angle `θ′`.
    pub fn pm_position_at(&self, obs: &PmObservation, theta_prime: f64) -> Vec3 {
        let e = self.element_position(obs.scan_angle_rad, obs.lateral_mm);
        let (s, c) = ComplexField::sin_cos(theta_prime);
        e + Vec3::new(0.0, obs.radius_mm * s, obs.radius_mm * c)
    }

    /// `∂ pm_position_at / ∂θ′`.
    pub fn pm_tangent_at(&self, obs: &PmObservation, theta_prime: f64) -> Vec3 {
        let (s, c) = ComplexField::sin_cos(theta_prime);
        Vec3::new(0.0, obs.radius_mm * c, -obs.radius_mm * s)
    }
}

/// A photoacoustic source detected in the image at scan angle `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmObservation {
    pub scan_angle_rad: f64,
    /// Continuous position along the array axis (mm).
    pub lateral_mm: f64,
    /// Element-to-source distance `r_PM` (mm).
    pub radius_mm: f64,
}

impl PmObservation {
    pub fn new(scan_angle_rad: f64, lateral_mm: f64, radius_mm: f64) -> Result<Self> {
        if !scan_angle_rad.is_finite() || !lateral_mm.is_finite() {
            return Err(Error::InvalidObservation("angle and lateral position must be finite"));
        }
        if !(radius_mm.is_finite() && radius_mm >= 0.0) {
            return Err(Error::InvalidObservation("radius must be non-negative"));
        }
        Ok(Self { scan_angle_rad, lateral_mm, radius_mm })
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use core::f64::consts::PI;
    let two_pi = 2.0 * PI;
    let mut w = a - two_pi * ComplexField::floor((a + PI) / two_pi);
    if w <= -PI {
        w += two_pi;
    }
    if w > PI {
        w -= two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::FRAC_PI_2;

    fn assert_vec(a: Vec3, b: [f64; 3], eps: f64) {
        for i in 0..3 {
            assert_abs_diff_eq!(a[i], b[i], epsilon = eps);
        }
    }

    #[test]
    fn compose_identity_and_inverse() {
        let t = RigidTransform::from_rotation_vector(Vec3::new(0.3, -0.2, 1.1), Vec3::new(4.0, -2.0, 9.0));
        assert!(RigidTransform::identity().compose(&t).max_abs_diff(&t) < 1e-15);
        assert!(t.compose(&t.inverse()).max_abs_diff(&RigidTransform::identity()) < 1e-9);
        let sum = RigidTransform::from_translation(1.0, 0.0, 0.0).compose(&RigidTransform::from_translation(0.0, 2.0, 0.0));
        assert!(sum.max_abs_diff(&RigidTransform::from_translation(1.0, 2.0, 0.0)) < 1e-15);
    }

    #[test]
    fn transform_point_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_vec(RigidTransform::identity().transform_point(&p), [1.0, 2.0, 3.0], 0.0);
        assert_vec(RigidTransform::rot_z(FRAC_PI_2).transform_point(&Vec3::x()), [0.0, 1.0, 0.0], 1e-15);
        assert_vec(RigidTransform::from_translation(0.0, 0.0, 5.0).transform_point(&Vec3::zeros()), [0.0, 0.0, 5.0], 0.0);
    }

    #[test]
    fn from_parts_rejects_bad_rotations() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-3;
        assert!(RigidTransform::from_parts(m, Vec3::zeros()).is_err());
        let reflection = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::from_parts(reflection, Vec3::zeros()).is_err());
        assert!(RigidTransform::from_parts(Matrix3::identity(), Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        let t = RigidTransform::from_rotation_vector(Vec3::new(-1.0, 0.5, 2.0), Vec3::new(10.0, 20.0, -30.0));
        let back = RigidTransform::from_row_major(&t.to_row_major(), 1e-9).unwrap();
        assert!(back.max_abs_diff(&t) < 1e-15);
        let mut m = t.to_row_major();
        m[15] = 2.0;
        assert!(RigidTransform::from_row_major(&m, 1e-9).is_err());
    }

    #[test]
    fn element_and_pm_positions() {
        let g = TrusGeometry::new(128, 0.3, 10.0).unwrap();
        assert_abs_diff_eq!(g.element_lateral_mm(0), -19.05, epsilon = 1e-12);
        assert_vec(g.element_position(0.0, -19.05), [-19.05, 0.0, 10.0], 1e-15);
        assert_vec(g.element_position(FRAC_PI_2, 0.0), [0.0, 10.0, 0.0], 1e-14);

        let obs = PmObservation::new(0.0, 0.0, 30.0).unwrap();
        assert_vec(g.pm_position(&obs, 0.0), [0.0, 0.0, 40.0], 1e-15);
        let obs = PmObservation::new(FRAC_PI_2, 5.0, 20.0).unwrap();
        assert_vec(g.pm_position(&obs, 0.0), [5.0, 30.0, 0.0], 1e-13);
        let obs = PmObservation::new(0.0, 0.0, 30.0).unwrap();
        let p = g.pm_position(&obs, 6f64.to_radians());
        assert_abs_diff_eq!((p - Vec3::new(0.0, 0.0, 10.0)).norm(), 30.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_geometry_and_observation() {
        assert!(TrusGeometry::new(1, 0.3, 10.0).is_err());
        assert!(TrusGeometry::new(128, 0.0, 10.0).is_err());
        assert!(TrusGeometry::new(128, 0.3, -1.0).is_err());
        assert!(PmObservation::new(0.0, 0.0, -0.1).is_err());
        assert!(PmObservation::new(f64::INFINITY, 0.0, 1.0).is_err());
    }

    #[test]
    fn laser_point_examples() {
        let l = Line3::new(Vec3::zeros(), Vec3::z()).unwrap();
        assert_vec(l.point_at(0.0), [0.0, 0.0, 0.0], 0.0);
        let l = Line3::new(Vec3::new(1.0, 1.0, 1.0), Vec3::x()).unwrap();
        assert_vec(l.point_at(2.0), [3.0, 1.0, 1.0], 0.0);
        assert!(Line3::new(Vec3::zeros(), Vec3::zeros()).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        use core::f64::consts::PI;
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(0.25), 0.25, epsilon = 0.0);
        assert_abs_diff_eq!(wrap_angle(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-12);
    }
}
