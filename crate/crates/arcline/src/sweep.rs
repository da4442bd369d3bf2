//! Monte-Carlo studies. Trials run in parallel but every trial draws from its
//! own `trial_rng(master_seed, trial)` stream and results are collected in
//! trial order, so output does not depend on the thread count. All points of
//! one sweep share the same trial streams.

use std::io::Write;

use arcline_core::evaluation::mean_std;
use arcline_core::simulation::{
    generate_scene, perturb_marker_pose, simulate_calibration_poses, simulate_calibration_trial,
    simulate_fit_size_trial, simulate_registration_trial, simulate_tracking_trial, trial_rng, SimConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::SimSettings;
use crate::dataset::{DatasetFile, GeometryRecord, ObservationRecord, TruthRecord, Units, CalibrationSession, SCHEMA};
use crate::error::Result;

/// Smallest solver bound used when the bound follows a zero deviation range.
pub const MIN_MATCHED_BOUND_RAD: f64 = 1e-9;

/// Mean and sample standard deviation of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub n_poses: usize,
    pub trial: usize,
    /// Out-of-sample residual (mm).
    pub residual_mm: f64,
    pub fit_residual_mm: f64,
    pub direction_error_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistrationRow {
    pub deviation_deg: f64,
    pub trial: usize,
    /// Holdout error measured against the true transform (mm).
    pub tre_mm: f64,
    /// Holdout arc-to-line distance after solving each holdout's `λ, θ′` (mm).
    pub holdout_tre_mm: f64,
    pub final_cost_mm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSizeRow {
    pub n_fit: usize,
    pub trial: usize,
    pub tre_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingRow {
    pub trial: usize,
    pub query: usize,
    pub angle_error_deg: f64,
}

fn par_trials<T: Send>(trials: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..trials).into_par_iter().map(f).collect()
}

fn summarize<R>(rows: &[R], xs: &[f64], x_of: impl Fn(&R) -> f64, y_of: impl Fn(&R) -> f64) -> Vec<SweepPoint> {
    xs.iter()
        .map(|&x| {
            let ys: Vec<f64> = rows.iter().filter(|r| x_of(r) == x).map(&y_of).collect();
            let (mean, std) = mean_std(&ys);
            SweepPoint { x, mean, std, n: ys.len() }
        })
        .collect()
}

pub fn run_calibration_sweep(settings: &SimSettings) -> Result<(Vec<CalibrationRow>, Vec<SweepPoint>)> {
    let cfg = settings.to_config()?;
    let sizes = &settings.sweeps.calibration_poses;
    let per_trial = par_trials(settings.trials, |trial| {
        sizes
            .iter()
            .map(|&n| {
                let mut rng = trial_rng(cfg.master_seed, trial as u64);
                let t = simulate_calibration_trial(&cfg, n, &mut rng)?;
                Ok(CalibrationRow {
                    n_poses: n,
                    trial,
                    residual_mm: t.validation_residual_mm,
                    fit_residual_mm: t.calibration.residual_mm,
                    direction_error_deg: t.direction_error_rad.to_degrees(),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = transpose(per_trial, sizes.len());
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let summary = summarize(&rows, &xs, |r| r.n_poses as f64, |r| r.residual_mm);
    Ok((rows, summary))
}

pub fn run_registration_sweep(settings: &SimSettings) -> Result<(Vec<RegistrationRow>, Vec<SweepPoint>)> {
    let base = settings.to_config()?;
    let deviations = &settings.sweeps.deviations_deg;
    let configs: Vec<SimConfig> = deviations
        .iter()
        .map(|&d| {
            let mut cfg = base;
            cfg.deviation_range_rad = d.to_radians();
            if settings.sweeps.match_bound_to_deviation {
                cfg.theta_bound_rad = cfg.deviation_range_rad.max(MIN_MATCHED_BOUND_RAD);
            }
            cfg
        })
        .collect();
    let per_trial = par_trials(settings.trials, |trial| {
        configs
            .iter()
            .zip(deviations)
            .map(|(cfg, &d)| {
                let mut rng = trial_rng(cfg.master_seed, trial as u64);
                let t = simulate_registration_trial(cfg, &mut rng)?;
                Ok(RegistrationRow {
                    deviation_deg: d,
                    trial,
                    tre_mm: t.truth_tre_mm,
                    holdout_tre_mm: t.tre_mm,
                    final_cost_mm: t.final_cost_mm,
                    iterations: t.outer_iterations,
                    converged: t.converged,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = transpose(per_trial, deviations.len());
    let summary = summarize(&rows, deviations, |r| r.deviation_deg, |r| r.tre_mm);
    Ok((rows, summary))
}

/// Scene settings for studies restricted to detectable sources.
fn detectable_config(settings: &SimSettings) -> Result<SimConfig> {
    let mut cfg = settings.to_config()?;
    cfg.deviation_range_rad = settings.sweeps.detectable_deviation_deg.to_radians();
    cfg.theta_bound_rad = cfg.deviation_range_rad;
    cfg.apply_detectability_gate = true;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run_fit_size_sweep(settings: &SimSettings) -> Result<(Vec<FitSizeRow>, Vec<SweepPoint>)> {
    let cfg = detectable_config(settings)?;
    let sizes = &settings.sweeps.fit_sizes;
    let per_trial = par_trials(settings.trials, |trial| {
        let mut rng = trial_rng(cfg.master_seed, trial as u64);
        let reports = simulate_fit_size_trial(&cfg, settings.sweeps.fit_dataset_size, sizes, &mut rng)?;
        Ok(reports
            .iter()
            .zip(sizes)
            .map(|(r, &n_fit)| FitSizeRow { n_fit, trial, tre_mm: r.tre_mean_mm })
            .collect::<Vec<_>>())
    })?;
    let rows = transpose(per_trial, sizes.len());
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let summary = summarize(&rows, &xs, |r| r.n_fit as f64, |r| r.tre_mm);
    Ok((rows, summary))
}

/// Returns the per-query rows and the mean absolute angle error (deg).
pub fn run_tracking_study(settings: &SimSettings) -> Result<(Vec<TrackingRow>, SweepPoint)> {
    let cfg = detectable_config(settings)?;
    let per_trial = par_trials(settings.trials, |trial| {
        let mut rng = trial_rng(cfg.master_seed, trial as u64);
        let t = simulate_tracking_trial(&cfg, &mut rng)?;
        if !t.registration_converged {
            log::warn!("tracking trial {trial}: registration did not converge");
        }
        Ok(t.angle_errors_rad
            .iter()
            .enumerate()
            .map(|(query, e)| TrackingRow { trial, query, angle_error_deg: e.to_degrees() })
            .collect::<Vec<_>>())
    })?;
    let rows: Vec<TrackingRow> = per_trial.into_iter().flatten().collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.angle_error_deg).collect();
    let (mean, std) = mean_std(&errors);
    Ok((rows, SweepPoint { x: settings.sweeps.detectable_deviation_deg, mean, std, n: errors.len() }))
}

/// Sweep-point-major order: all trials of the first point, then the next.
fn transpose<T>(per_trial: Vec<Vec<T>>, points: usize) -> Vec<T> {
    let mut columns: Vec<Vec<T>> = (0..points).map(|_| Vec::with_capacity(per_trial.len())).collect();
    for trial in per_trial {
        for (k, v) in trial.into_iter().enumerate() {
            columns[k].push(v);
        }
    }
    columns.into_iter().flatten().collect()
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| crate::error::CliError::io("csv output", e))?;
    Ok(())
}

/// Simulated dataset file: noisy marker poses, detections, a pivot session and
/// the ground truth. Uses trial 0 of the configured seed.
pub fn simulate_dataset(settings: &SimSettings, calibration_poses: usize) -> Result<DatasetFile> {
    let cfg = settings.to_config()?;
    let mut rng = trial_rng(cfg.master_seed, 0);
    let scene = generate_scene(&cfg, cfg.n_pairs + cfg.n_holdout, &mut rng)?;
    let marker_poses = scene
        .fiber_poses_true
        .iter()
        .map(|p| perturb_marker_pose(p, &cfg.noise, &mut rng).inverse().to_row_major())
        .collect();
    let session = simulate_calibration_poses(&cfg.tool_line, &cfg.calibration, &cfg.noise, calibration_poses, &mut rng);
    let g = &cfg.geometry;
    Ok(DatasetFile {
        schema: SCHEMA.into(),
        units: Units::default(),
        description: format!("simulated, {} pairs", scene.len()),
        seed: Some(cfg.master_seed),
        geometry: GeometryRecord { n_elements: g.n_elements(), pitch_mm: g.pitch_mm(), radius_mm: g.radius_mm() },
        marker_poses,
        observations: scene
            .pm_truth
            .iter()
            .map(|t| ObservationRecord {
                scan_angle_deg: t.obs.scan_angle_rad.to_degrees(),
                lateral_mm: t.obs.lateral_mm,
                radius_mm: t.obs.radius_mm,
            })
            .collect(),
        calibration: None,
        calibration_session: Some(CalibrationSession {
            marker_poses: session.iter().map(|p| p.to_row_major()).collect(),
            spot_camera_mm: cfg.calibration.board.spot.into(),
        }),
        truth: Some(TruthRecord {
            f_reg: scene.f_reg_true.to_row_major(),
            delta_theta_deg: scene.pm_truth.iter().map(|t| t.delta_theta_rad.to_degrees()).collect(),
            lambda_mm: scene.pm_truth.iter().map(|t| t.lambda_mm).collect(),
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_groups_by_point() {
        let v = transpose(vec![vec![1, 2], vec![3, 4], vec![5, 6]], 2);
        assert_eq!(v, vec![1, 3, 5, 2, 4, 6]);
    }

    #[test]
    fn summary_uses_sample_std() {
        let rows = [(1.0, 2.0), (1.0, 4.0), (2.0, 7.0)];
        let s = summarize(&rows, &[1.0, 2.0], |r| r.0, |r| r.1);
        assert_eq!(s[0], SweepPoint { x: 1.0, mean: 3.0, std: 2f64.sqrt(), n: 2 });
        assert_eq!((s[1].mean, s[1].std, s[1].n), (7.0, 0.0, 1));
    }

    #[test]
    fn simulated_dataset_validates() {
        let settings = SimSettings { n_pairs: 4, n_holdout: 1, ..SimSettings::default() };
        let file = simulate_dataset(&settings, 8).unwrap();
        let data = file.validate().unwrap();
        assert_eq!(data.len(), 5);
        assert_eq!(data.pairs().unwrap().len(), 5);
    }
}
