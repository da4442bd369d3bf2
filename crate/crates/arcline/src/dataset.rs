//! JSON dataset files (`"schema": "arcline/1"`).
//!
//! Lengths are millimetres and angles are degrees in files. Transforms are
//! 16-element row-major homogeneous matrices. [`DatasetFile`] mirrors the
//! document exactly so a read/write cycle reproduces every value; [`Dataset`]
//! is the validated, radian-based view used by the algorithms.

use std::path::Path;

use arcline_core::calibration::{calibrate, laser_line_for_marker_pose, CalibrationInput, LaserCalibration};
use arcline_core::registration::Pair;
use arcline_core::{Line3, PmObservation, RigidTransform, TrusGeometry, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA: &str = "arcline/1";
/// Orthonormality tolerance for transforms read from files.
pub const FILE_TRANSFORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub length: String,
    pub angle: String,
}

impl Default for Units {
    fn default() -> Self {
        Self { length: "mm".into(), angle: "deg".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryRecord {
    pub n_elements: usize,
    pub pitch_mm: f64,
    pub radius_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub scan_angle_deg: f64,
    pub lateral_mm: f64,
    pub radius_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    pub origin_mm: [f64; 3],
    pub direction: [f64; 3],
    pub residual_mm: f64,
}

/// Raw pivot acquisitions: camera → marker poses and the fixed aimed spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSession {
    pub marker_poses: Vec<[f64; 16]>,
    pub spot_camera_mm: [f64; 3],
}

/// Ground truth carried by simulated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub f_reg: [f64; 16],
    pub delta_theta_deg: Vec<f64>,
    pub lambda_mm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub schema: String,
    #[serde(default)]
    pub units: Units,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub geometry: GeometryRecord,
    /// Camera → marker transform of each acquisition.
    pub marker_poses: Vec<[f64; 16]>,
    pub observations: Vec<ObservationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_session: Option<CalibrationSession>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthRecord>,
}

impl DatasetFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CliError::io(path.display().to_string(), e))
    }

    /// Checks units and shapes and converts to internal units.
    pub fn validate(&self) -> Result<Dataset> {
        if self.schema != SCHEMA {
            return Err(CliError::Dataset(format!("unsupported schema {:?}, expected {SCHEMA:?}", self.schema)));
        }
        if self.units.length != "mm" || self.units.angle != "deg" {
            return Err(CliError::Dataset(format!(
                "units must be mm/deg, found {}/{}",
                self.units.length, self.units.angle
            )));
        }
        if self.marker_poses.len() != self.observations.len() {
            return Err(CliError::Dataset(format!(
                "{} marker poses but {} observations",
                self.marker_poses.len(),
                self.observations.len()
            )));
        }
        let g = &self.geometry;
        let geometry = TrusGeometry::new(g.n_elements, g.pitch_mm, g.radius_mm)?;
        let marker_poses = parse_poses(&self.marker_poses, "marker_poses")?;
        let observations = self
            .observations
            .iter()
            .map(|o| PmObservation::new(o.scan_angle_deg.to_radians(), o.lateral_mm, o.radius_mm))
            .collect::<arcline_core::Result<Vec<_>>>()?;
        let calibration = match &self.calibration {
            Some(c) => Some(LaserCalibration {
                line_marker: Line3::new(Vec3::from(c.origin_mm), Vec3::from(c.direction))?,
                residual_mm: c.residual_mm,
                per_point_residuals_mm: Vec::new(),
            }),
            None => None,
        };
        let calibration_session = match &self.calibration_session {
            Some(s) => Some(CalibrationInput::new(
                parse_poses(&s.marker_poses, "calibration_session.marker_poses")?,
                Vec3::from(s.spot_camera_mm),
            )?),
            None => None,
        };
        if let Some(t) = &self.truth {
            if t.delta_theta_deg.len() != self.observations.len() || t.lambda_mm.len() != self.observations.len() {
                return Err(CliError::Dataset("truth arrays must match the observation count".into()));
            }
            RigidTransform::from_row_major(&t.f_reg, FILE_TRANSFORM_TOL)?;
        }
        Ok(Dataset { geometry, marker_poses, observations, calibration, calibration_session })
    }
}

fn parse_poses(raw: &[[f64; 16]], field: &str) -> Result<Vec<RigidTransform>> {
    raw.iter()
        .enumerate()
        .map(|(i, m)| {
            RigidTransform::from_row_major(m, FILE_TRANSFORM_TOL)
                .map_err(|e| CliError::Dataset(format!("{field}[{i}]: {e}")))
        })
        .collect()
}

/// Validated dataset in internal units (mm, rad).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geometry: TrusGeometry,
    /// Camera → marker.
    pub marker_poses: Vec<RigidTransform>,
    pub observations: Vec<PmObservation>,
    pub calibration: Option<LaserCalibration>,
    pub calibration_session: Option<CalibrationInput>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// The stored calibration, or one computed from the stored session.
    pub fn resolve_calibration(&self) -> Result<LaserCalibration> {
        if let Some(c) = &self.calibration {
            return Ok(c.clone());
        }
        match &self.calibration_session {
            Some(session) => Ok(calibrate(session)?),
            None => Err(CliError::Dataset("dataset has neither a calibration nor a calibration session".into())),
        }
    }

    /// Beam/detection pairs using the resolved calibration.
    pub fn pairs(&self) -> Result<Vec<Pair>> {
        let calib = self.resolve_calibration()?;
        Ok(self
            .marker_poses
            .iter()
            .zip(&self.observations)
            .map(|(pose, obs)| Pair { laser_line: laser_line_for_marker_pose(&calib, pose), obs: *obs })
            .collect())
    }
}

pub fn calibration_record(c: &LaserCalibration) -> CalibrationRecord {
    let o = c.line_marker.origin();
    let d = c.line_marker.direction();
    CalibrationRecord { origin_mm: [o.x, o.y, o.z], direction: [d.x, d.y, d.z], residual_mm: c.residual_mm }
}
