//! Simulation settings file. Every field has a default, so `{}` is a valid
//! file and `arcline config` prints the complete default document.

use std::path::Path;

use arcline_core::registration::{DescentDirection, SolverConfig};
use arcline_core::simulation::{AimBoard, CalibrationLayout, NoiseModel, SceneLayout, SimConfig};
use arcline_core::{Line3, TrusGeometry, Vec3};
use serde::{Deserialize, Serialize};

use crate::dataset::GeometryRecord;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSettings {
    pub marker_mean_mm: [f64; 3],
    pub marker_sigma_trans_mm: [f64; 3],
    pub marker_sigma_rot_rad: [f64; 3],
    pub aim_sigma_mm: [f64; 2],
}

impl Default for NoiseSettings {
    fn default() -> Self {
        let n = NoiseModel::default();
        Self {
            marker_mean_mm: n.marker_mean_mm,
            marker_sigma_trans_mm: n.marker_sigma_trans_mm,
            marker_sigma_rot_rad: n.marker_sigma_rot_rad,
            aim_sigma_mm: n.aim_sigma_mm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutSettings {
    pub scan_half_range_deg: f64,
    pub depth_range_mm: [f64; 2],
    pub standoff_range_mm: [f64; 2],
    pub beam_tilt_max_deg: f64,
    pub translation_box_mm: f64,
    pub lateral_fraction: f64,
    pub theta_quant_deg: Option<f64>,
}

impl Default for LayoutSettings {
    fn default() -> Self {
        let l = SceneLayout::default();
        Self {
            scan_half_range_deg: l.scan_half_range_rad.to_degrees(),
            depth_range_mm: l.depth_range_mm,
            standoff_range_mm: l.standoff_range_mm,
            beam_tilt_max_deg: l.beam_tilt_max_rad.to_degrees(),
            translation_box_mm: l.translation_box_mm,
            lateral_fraction: l.lateral_fraction,
            theta_quant_deg: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSettings {
    pub board_spot_mm: [f64; 3],
    pub board_u: [f64; 3],
    pub board_v: [f64; 3],
    pub standoff_range_mm: [f64; 2],
    pub cone_half_angle_deg: f64,
    pub validation_acquisitions: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        let c = CalibrationLayout::default();
        Self {
            board_spot_mm: c.board.spot.into(),
            board_u: c.board.u.into(),
            board_v: c.board.v.into(),
            standoff_range_mm: c.standoff_range_mm,
            cone_half_angle_deg: c.cone_half_angle_rad.to_degrees(),
            validation_acquisitions: c.validation_acquisitions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionSetting {
    Preconditioned,
    Steepest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol_rel: f64,
    pub max_outer: usize,
    pub inner_tol_rel: f64,
    pub max_inner: usize,
    pub armijo_c: f64,
    pub backtrack_shrink: f64,
    pub max_backtracks: usize,
    pub grad_tol: f64,
    pub direction: DirectionSetting,
    pub joint_angles: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self::from(&SolverConfig::default())
    }
}

impl From<&SolverConfig> for SolverSettings {
    fn from(s: &SolverConfig) -> Self {
        Self {
            tol_rel: s.tol_rel,
            max_outer: s.max_outer,
            inner_tol_rel: s.inner_tol_rel,
            max_inner: s.max_inner,
            armijo_c: s.armijo_c,
            backtrack_shrink: s.backtrack_shrink,
            max_backtracks: s.max_backtracks,
            grad_tol: s.grad_tol,
            direction: match s.direction {
                DescentDirection::Preconditioned => DirectionSetting::Preconditioned,
                DescentDirection::Steepest => DirectionSetting::Steepest,
            },
            joint_angles: s.joint_angles,
        }
    }
}

impl SolverSettings {
    pub fn to_config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            tol_rel: self.tol_rel,
            max_outer: self.max_outer,
            inner_tol_rel: self.inner_tol_rel,
            max_inner: self.max_inner,
            armijo_c: self.armijo_c,
            backtrack_shrink: self.backtrack_shrink,
            max_backtracks: self.max_backtracks,
            grad_tol: self.grad_tol,
            direction: match self.direction {
                DirectionSetting::Preconditioned => DescentDirection::Preconditioned,
                DirectionSetting::Steepest => DescentDirection::Steepest,
            },
            freeze_pose: false,
            joint_angles: self.joint_angles,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sweep grids and the scene settings that differ between studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub calibration_poses: Vec<usize>,
    pub deviations_deg: Vec<f64>,
    /// Registration sweep: solve with `|Δθ| ≤ deviation` instead of `theta_bound_deg`.
    pub match_bound_to_deviation: bool,
    pub fit_sizes: Vec<usize>,
    pub fit_dataset_size: usize,
    /// Detectable range used for the fit-size and tracking studies.
    pub detectable_deviation_deg: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            calibration_poses: vec![5, 10, 20, 30, 40],
            deviations_deg: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            match_bound_to_deviation: true,
            fit_sizes: (4..=10).collect(),
            fit_dataset_size: 15,
            detectable_deviation_deg: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub master_seed: u64,
    pub trials: usize,
    pub n_pairs: usize,
    pub n_holdout: usize,
    pub deviation_range_deg: f64,
    pub theta_bound_deg: f64,
    pub apply_detectability_gate: bool,
    pub lambda_init_mm: f64,
    pub geometry: GeometryRecord,
    pub tool_origin_mm: [f64; 3],
    pub tool_direction: [f64; 3],
    pub noise: NoiseSettings,
    pub layout: LayoutSettings,
    pub calibration: CalibrationSettings,
    pub solver: SolverSettings,
    pub sweeps: SweepSettings,
}

impl Default for SimSettings {
    fn default() -> Self {
        let c = SimConfig::default();
        Self {
            master_seed: c.master_seed,
            trials: c.trials,
            n_pairs: c.n_pairs,
            n_holdout: c.n_holdout,
            deviation_range_deg: c.deviation_range_rad.to_degrees(),
            theta_bound_deg: c.theta_bound_rad.to_degrees(),
            apply_detectability_gate: c.apply_detectability_gate,
            lambda_init_mm: c.lambda_init_mm,
            geometry: GeometryRecord { n_elements: c.geometry.n_elements(), pitch_mm: c.geometry.pitch_mm(), radius_mm: c.geometry.radius_mm() },
            tool_origin_mm: (*c.tool_line.origin()).into(),
            tool_direction: (*c.tool_line.direction()).into(),
            noise: NoiseSettings::default(),
            layout: LayoutSettings::default(),
            calibration: CalibrationSettings::default(),
            solver: SolverSettings::default(),
            sweeps: SweepSettings::default(),
        }
    }
}

impl SimSettings {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Converts to the simulator's configuration (radians) and validates it.
    pub fn to_config(&self) -> Result<SimConfig> {
        let n = &self.noise;
        let l = &self.layout;
        let c = &self.calibration;
        let g = &self.geometry;
        let cfg = SimConfig {
            n_pairs: self.n_pairs,
            n_holdout: self.n_holdout,
            deviation_range_rad: self.deviation_range_deg.to_radians(),
            noise: NoiseModel {
                marker_mean_mm: n.marker_mean_mm,
                marker_sigma_trans_mm: n.marker_sigma_trans_mm,
                marker_sigma_rot_rad: n.marker_sigma_rot_rad,
                aim_sigma_mm: n.aim_sigma_mm,
            },
            trials: self.trials,
            master_seed: self.master_seed,
            theta_bound_rad: self.theta_bound_deg.to_radians(),
            apply_detectability_gate: self.apply_detectability_gate,
            lambda_init_mm: self.lambda_init_mm,
            geometry: TrusGeometry::new(g.n_elements, g.pitch_mm, g.radius_mm)?,
            tool_line: Line3::new(Vec3::from(self.tool_origin_mm), Vec3::from(self.tool_direction))?,
            layout: SceneLayout {
                scan_half_range_rad: l.scan_half_range_deg.to_radians(),
                depth_range_mm: l.depth_range_mm,
                standoff_range_mm: l.standoff_range_mm,
                beam_tilt_max_rad: l.beam_tilt_max_deg.to_radians(),
                translation_box_mm: l.translation_box_mm,
                lateral_fraction: l.lateral_fraction,
                theta_quant_rad: l.theta_quant_deg.map(f64::to_radians),
            },
            calibration: CalibrationLayout {
                board: board(c)?,
                standoff_range_mm: c.standoff_range_mm,
                cone_half_angle_rad: c.cone_half_angle_deg.to_radians(),
                validation_acquisitions: c.validation_acquisitions,
            },
            solver: self.solver.to_config()?,
        };
        cfg.validate()?;
        if self.sweeps.fit_sizes.iter().any(|&n| n + 1 > self.sweeps.fit_dataset_size) {
            return Err(CliError::Usage("every fit size must leave at least one holdout pair".into()));
        }
        Ok(cfg)
    }
}

fn board(c: &CalibrationSettings) -> Result<AimBoard> {
    let u = Vec3::from(c.board_u);
    let v = Vec3::from(c.board_v);
    let orthonormal = (u.norm() - 1.0).abs() < 1e-9 && (v.norm() - 1.0).abs() < 1e-9 && u.dot(&v).abs() < 1e-9;
    if !orthonormal {
        return Err(CliError::Usage("calibration board axes must be orthonormal".into()));
    }
    Ok(AimBoard { spot: Vec3::from(c.board_spot_mm), u, v })
}
