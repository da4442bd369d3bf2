//! Pivot-style recovery of the laser beam in the fiducial-marker frame.
//!
//! The fibre is re-posed several times while the beam stays aimed at one fixed
//! spot `p_spot` seen by the camera. Mapping that spot into each marker frame
//! gives points that all lie on the beam, so a total-least-squares line through
//! them is the beam expressed in marker coordinates.
//!
//! Frame convention: a marker pose `F_MC` maps camera coordinates to marker
//! coordinates. Its inverse (marker → camera) is what places the calibrated
//! beam back into the camera frame.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{Line3, RigidTransform, Vec3};

pub const MIN_POSES: usize = 3;
/// Below this many poses a warning is logged: the fit has little redundancy.
pub const RECOMMENDED_POSES: usize = 5;
/// Minimum relative rotation between any two calibration poses.
pub const MIN_POSE_SEPARATION_RAD: f64 = 0.5 * core::f64::consts::PI / 180.0;

const DEGENERATE_SPREAD_MM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationInput {
    marker_poses: Vec<RigidTransform>,
    spot_camera: Vec3,
}

impl CalibrationInput {
    /// `marker_poses` are camera → marker transforms, one per acquisition.
    pub fn new(marker_poses: Vec<RigidTransform>, spot_camera: Vec3) -> Result<Self> {
        if marker_poses.len() < MIN_POSES {
            return Err(Error::TooFewPoses { got: marker_poses.len(), need: MIN_POSES });
        }
        if !spot_camera.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("spot position must be finite"));
        }
        for i in 0..marker_poses.len() {
            for j in i + 1..marker_poses.len() {
                if marker_poses[i].rotation_angle_to(&marker_poses[j]) < MIN_POSE_SEPARATION_RAD {
                    return Err(Error::PosesNotDistinct { first: i, second: j });
                }
            }
        }
        if marker_poses.len() < RECOMMENDED_POSES {
            log::warn!(
                "calibrating from {} poses; at least {} are recommended",
                marker_poses.len(),
                RECOMMENDED_POSES
            );
        }
        Ok(Self { marker_poses, spot_camera })
    }

    pub fn marker_poses(&self) -> &[RigidTransform] {
        &self.marker_poses
    }

    pub fn spot_camera(&self) -> &Vec3 {
        &self.spot_camera
    }
}

/// Beam recovered in the marker frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserCalibration {
    pub line_marker: Line3,
    /// Mean point-to-line distance of the calibration samples (mm).
    pub residual_mm: f64,
    pub per_point_residuals_mm: Vec<f64>,
}

/// Total-least-squares line through a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct LineFit {
    /// Passes through the centroid.
    pub line: Line3,
    pub residual_mm: f64,
    pub per_point_residuals_mm: Vec<f64>,
}

impl LineFit {
    pub fn sum_squared_distance(&self, points: &[Vec3]) -> f64 {
        sum_squared_distance(&self.line, points)
    }
}

pub fn sum_squared_distance(line: &Line3, points: &[Vec3]) -> f64 {
    points.iter().map(|p| {
        let d = line.distance_to(p);
        d * d
    }).sum()
}

/// Applies every camera → marker pose to the same camera-frame spot.
///
/// No validation is done here; [`spots_in_marker_frame`] is the checked entry point.
pub fn map_spot_to_marker_frames(camera_to_marker: &[RigidTransform], spot_camera: &Vec3) -> Vec<Vec3> {
    camera_to_marker.iter().map(|f| f.transform_point(spot_camera)).collect()
}

/// `p_spot^{M,i} = F_MC^i · p_spot^C` for every acquisition.
pub fn spots_in_marker_frame(input: &CalibrationInput) -> Vec<Vec3> {
    map_spot_to_marker_frames(&input.marker_poses, &input.spot_camera)
}

/// Fits a line minimizing the summed squared orthogonal distances.
///
/// The origin is the centroid and the direction is the leading right-singular
/// vector of the centred `N×3` point matrix. The direction is signed so it
/// points from the first sample towards the last; when that is ambiguous it
/// points towards `+z` (then `+y`, `+x`).
pub fn fit_line_svd(points: &[Vec3]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::DegeneratePointSet);
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let spread = points.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    if spread.is_nan() || spread <= DEGENERATE_SPREAD_MM {
        return Err(Error::DegeneratePointSet);
    }

    let centred = DMatrix::from_fn(points.len(), 3, |r, c| points[r][c] - centroid[c]);
    let svd = centred.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegeneratePointSet)?;
    let lead = (0..svd.singular_values.len())
        .max_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .ok_or(Error::DegeneratePointSet)?;
    let mut direction = Vec3::new(v_t[(lead, 0)], v_t[(lead, 1)], v_t[(lead, 2)]);

    let along = (points[points.len() - 1] - points[0]).dot(&direction);
    let flip = if along.abs() > 1e-12 * spread {
        along < 0.0
    } else {
        tie_break_negative(&direction)
    };
    if flip {
        direction = -direction;
    }

    let line = Line3::new(centroid, direction)?;
    let per_point: Vec<f64> = points.iter().map(|p| line.distance_to(p)).collect();
    let residual = per_point.iter().sum::<f64>() / n;
    Ok(LineFit { line, residual_mm: residual, per_point_residuals_mm: per_point })
}

fn tie_break_negative(d: &Vec3) -> bool {
    for axis in [2, 1, 0] {
        if d[axis].abs() > 1e-12 {
            return d[axis] < 0.0;
        }
    }
    false
}

/// Full calibration: map the spot into every marker frame, then fit the beam.
///
/// The beam origin is the first sample projected onto the fitted line. The
/// direction is flipped, if needed, so the beam travels away from the marker
/// origin (the fibre mount sits behind the exit point).
pub fn calibrate(input: &CalibrationInput) -> Result<LaserCalibration> {
    let points = spots_in_marker_frame(input);
    let fit = fit_line_svd(&points)?;
    let first = points[0];
    let origin = fit.line.point_at(fit.line.project_parameter(&first));
    let mut line = Line3::new(origin, *fit.line.direction())?;
    if fit.line.origin().dot(line.direction()) < 0.0 {
        line = line.reversed();
    }
    Ok(LaserCalibration {
        line_marker: line,
        residual_mm: fit.residual_mm,
        per_point_residuals_mm: fit.per_point_residuals_mm,
    })
}

/// Beam in the camera frame for a marker → camera pose.
pub fn laser_line_in_camera(calib: &LaserCalibration, marker_to_camera: &RigidTransform) -> Line3 {
    calib.line_marker.transformed(marker_to_camera)
}

/// Beam in the camera frame for a stored camera → marker pose `F_MC`.
pub fn laser_line_for_marker_pose(calib: &LaserCalibration, camera_to_marker: &RigidTransform) -> Line3 {
    laser_line_in_camera(calib, &camera_to_marker.inverse())
}
