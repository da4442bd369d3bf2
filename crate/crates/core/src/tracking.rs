//! Steering the transducer onto an out-of-plane marker once `F_reg` is known.

use crate::error::{Error, Result};
use crate::geometry::{Line3, PmObservation, RigidTransform, TrusGeometry, Vec3};
use crate::registration::best_arc_angle;

const SEED_SAMPLES: usize = 33;
const MAX_ALTERNATIONS: usize = 10_000;
const STEP_TOL_RAD: f64 = 1e-13;
const STEP_TOL_MM: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingQuery {
    pub f_reg: RigidTransform,
    /// Beam in the camera frame for the current marker pose.
    pub laser_line: Line3,
    /// Current detection (scan angle and `r_PM`).
    pub obs: PmObservation,
    pub geometry: TrusGeometry,
    pub theta_bound_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingSolution {
    /// Rotation that brings the imaging plane onto the marker: `θ* − θ`.
    pub delta_theta_rad: f64,
    pub lambda_mm: f64,
    pub residual_mm: f64,
    pub iterations: usize,
}

/// Best `λ ≥ 0` for a target point: orthogonal projection onto the mapped beam.
pub fn closest_lambda(mapped_line: &Line3, target: &Vec3) -> f64 {
    mapped_line.project_parameter(target).max(0.0)
}

/// Minimizes `‖F·p_laser(λ) − pm(θ′)‖` over `λ ≥ 0` and `θ′ ∈ θ ± bound`.
///
/// A coarse sweep over `θ′` picks the starting basin; the exact `λ` and `θ′`
/// updates are then alternated until both stop moving.
pub fn track(q: &TrackingQuery) -> Result<TrackingSolution> {
    if !(q.theta_bound_rad.is_finite() && q.theta_bound_rad > 0.0) {
        return Err(Error::InvalidParameter("theta bound must be positive"));
    }
    let mapped = q.laser_line.transformed(&q.f_reg);
    let scan = q.obs.scan_angle_rad;
    let bound = q.theta_bound_rad;
    let evaluate = |theta: f64| {
        let target = q.geometry.pm_position_at(&q.obs, theta);
        let lambda = closest_lambda(&mapped, &target);
        (lambda, (mapped.point_at(lambda) - target).norm())
    };

    let mut theta = scan - bound;
    let (mut lambda, mut best) = evaluate(theta);
    for k in 1..SEED_SAMPLES {
        let candidate = scan - bound + 2.0 * bound * k as f64 / (SEED_SAMPLES - 1) as f64;
        let (l, d) = evaluate(candidate);
        if d < best {
            theta = candidate;
            lambda = l;
            best = d;
        }
    }

    for iteration in 1..=MAX_ALTERNATIONS {
        let next_theta = best_arc_angle(&q.geometry, &q.obs, &mapped.point_at(lambda), bound);
        let next_lambda = closest_lambda(&mapped, &q.geometry.pm_position_at(&q.obs, next_theta));
        let moved_theta = (next_theta - theta).abs();
        let moved_lambda = (next_lambda - lambda).abs();
        theta = next_theta;
        lambda = next_lambda;
        if moved_theta <= STEP_TOL_RAD && moved_lambda <= STEP_TOL_MM {
            let residual = (mapped.point_at(lambda) - q.geometry.pm_position_at(&q.obs, theta)).norm();
            return Ok(TrackingSolution { delta_theta_rad: theta - scan, lambda_mm: lambda, residual_mm: residual, iterations: iteration });
        }
    }
    let residual = (mapped.point_at(lambda) - q.geometry.pm_position_at(&q.obs, theta)).norm();
    Err(Error::TrackingStalled { delta_theta_rad: theta - scan, lambda_mm: lambda, residual_mm: residual })
}

/// Radial offset of the imaging plane (mm) caused by an angular tracking error.
pub fn plane_deviation_mm(angle_error_rad: f64, depth_mm: f64) -> f64 {
    depth_mm * angle_error_rad
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn query_for(delta_true: f64) -> (TrackingQuery, f64) {
        let geometry = TrusGeometry::new(128, 0.3, 10.0).unwrap();
        let f_reg = RigidTransform::from_rotation_vector(Vec3::new(0.4, -1.2, 0.3), Vec3::new(-20.0, 35.0, 60.0));
        let scan = 0.15;
        let obs = PmObservation::new(scan, 4.0, 32.0).unwrap();
        let pm = geometry.pm_position(&obs, delta_true);
        // Beam arrives from outside the probe, tilted off the radial direction.
        let inward = -(pm - geometry.element_position(scan + delta_true, obs.lateral_mm)).normalize();
        let dir_trus = (inward + Vec3::new(0.3, 0.1, 0.0)).normalize();
        let tip_trus = pm - dir_trus * 45.0;
        let to_camera = f_reg.inverse();
        let line = Line3::new(to_camera.transform_point(&tip_trus), to_camera.transform_vector(&dir_trus)).unwrap();
        (TrackingQuery { f_reg, laser_line: line, obs, geometry, theta_bound_rad: 6f64.to_radians() }, 45.0)
    }

    #[test]
    fn in_plane_marker_needs_no_rotation() {
        let (q, lambda) = query_for(0.0);
        let s = track(&q).unwrap();
        assert_abs_diff_eq!(s.delta_theta_rad, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(s.lambda_mm, lambda, epsilon = 1e-6);
        assert!(s.residual_mm < 1e-9);
    }

    #[test]
    fn recovers_out_of_plane_angle() {
        let (q, _) = query_for(4f64.to_radians());
        let s = track(&q).unwrap();
        assert_abs_diff_eq!(s.delta_theta_rad, 4f64.to_radians(), epsilon = 1e-4);
    }

    #[test]
    fn result_respects_bound() {
        let (q, _) = query_for(9f64.to_radians());
        let s = track(&q).unwrap();
        assert_abs_diff_eq!(s.delta_theta_rad, 6f64.to_radians(), epsilon = 1e-12);
        assert!(s.residual_mm > 0.1);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn plane_deviation_examples() {
        assert_abs_diff_eq!(plane_deviation_mm(1f64.to_radians(), 30.0), 0.5236, epsilon = 5e-5);
        assert_abs_diff_eq!(plane_deviation_mm(1f64.to_radians(), 60.0), 1.0472, epsilon = 5e-5);
        assert_eq!(plane_deviation_mm(0.0, 45.0), 0.0);
    }
}
