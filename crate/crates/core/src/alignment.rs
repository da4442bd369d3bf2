//! Closed-form least-squares rigid alignment of corresponding point sets.

use nalgebra::{Matrix3, Matrix3xX};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};

/// Ratio of the second to the first principal spread below which a point set
/// is treated as collinear.
pub const COLLINEAR_RATIO: f64 = 1e-6;

/// Finds `T` minimizing `Σ ‖T·src_i − dst_i‖²` (SVD with reflection guard).
///
/// Fails with [`Error::DegenerateInitialization`] when either side is
/// coincident or collinear, since the rotation about that line is then free.
pub fn rigid_alignment(src: &[Vec3], dst: &[Vec3]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch { expected: src.len(), got: dst.len() });
    }
    if src.len() < 3 {
        return Err(Error::DegenerateInitialization);
    }
    let src_c = centroid(src);
    let dst_c = centroid(dst);
    let a = Matrix3xX::from_fn(src.len(), |r, c| src[c][r] - src_c[r]);
    let b = Matrix3xX::from_fn(dst.len(), |r, c| dst[c][r] - dst_c[r]);
    if is_degenerate(&a) || is_degenerate(&b) {
        return Err(Error::DegenerateInitialization);
    }

    let cov: Matrix3<f64> = &a * b.transpose();
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateInitialization),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let translation = dst_c - rotation * src_c;
    RigidTransform::from_parts_with_tolerance(rotation, translation, 1e-6)
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64
}

fn is_degenerate(centred: &Matrix3xX<f64>) -> bool {
    let scatter: Matrix3<f64> = centred * centred.transpose();
    let mut s = scatter.symmetric_eigenvalues();
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    let first = s[0].max(0.0);
    let second = s[1].max(0.0);
    // Eigenvalues of the scatter are squared singular values.
    first <= 1e-18 || second <= COLLINEAR_RATIO * COLLINEAR_RATIO * first
}
