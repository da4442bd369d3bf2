//! Target registration error on pairs that were not used for fitting.

use alloc::vec::Vec;

use nalgebra::ComplexField;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, TrusGeometry};
use crate::registration::{
    register, Pair, RegistrationProblem, SolverConfig, DEFAULT_LAMBDA_INIT_MM, DEFAULT_THETA_BOUND_RAD,
};
use crate::tracking::{track, TrackingQuery, TrackingSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct TreStats {
    pub mean_mm: f64,
    /// Sample standard deviation; zero for a single point.
    pub std_mm: f64,
    pub per_point_mm: Vec<f64>,
}

impl TreStats {
    pub fn from_errors(per_point_mm: Vec<f64>) -> Result<Self> {
        if per_point_mm.is_empty() {
            return Err(Error::EmptyHoldout);
        }
        let (mean_mm, std_mm) = mean_std(&per_point_mm);
        Ok(Self { mean_mm, std_mm, per_point_mm })
    }
}

/// Mean and sample standard deviation (`n − 1` denominator, zero when `n < 2`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, ComplexField::sqrt(var))
}

/// Distances `‖F·p_laser(λᵢ) − pm(θ′ᵢ)‖` with caller-supplied `λᵢ, θ′ᵢ`.
pub fn tre(
    f_reg: &RigidTransform,
    pairs: &[Pair],
    lambdas: &[f64],
    thetas: &[f64],
    geometry: &TrusGeometry,
) -> Result<TreStats> {
    if pairs.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    for len in [lambdas.len(), thetas.len()] {
        if len != pairs.len() {
            return Err(Error::LengthMismatch { expected: pairs.len(), got: len });
        }
    }
    let errors = pairs
        .iter()
        .zip(lambdas.iter().zip(thetas))
        .map(|(p, (&l, &t))| (f_reg.transform_point(&p.laser_line.point_at(l)) - geometry.pm_position_at(&p.obs, t)).norm())
        .collect();
    TreStats::from_errors(errors)
}

/// Holdout error where each pair's `λ, θ′` is the best fit under `f_reg`.
///
/// A stalled solve still contributes its last iterate.
pub fn holdout_tre(
    f_reg: &RigidTransform,
    holdout: &[Pair],
    geometry: &TrusGeometry,
    theta_bound_rad: f64,
) -> Result<(TreStats, Vec<TrackingSolution>)> {
    if holdout.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    let mut solutions = Vec::with_capacity(holdout.len());
    for pair in holdout {
        let query = TrackingQuery { f_reg: *f_reg, laser_line: pair.laser_line, obs: pair.obs, geometry: *geometry, theta_bound_rad };
        let s = match track(&query) {
            Ok(s) => s,
            Err(Error::TrackingStalled { delta_theta_rad, lambda_mm, residual_mm }) => {
                log::warn!("holdout solve did not settle; using last iterate");
                TrackingSolution { delta_theta_rad, lambda_mm, residual_mm, iterations: 0 }
            }
            Err(e) => return Err(e),
        };
        solutions.push(s);
    }
    let lambdas: Vec<f64> = solutions.iter().map(|s| s.lambda_mm).collect();
    let thetas: Vec<f64> = holdout.iter().zip(&solutions).map(|(p, s)| p.obs.scan_angle_rad + s.delta_theta_rad).collect();
    Ok((tre(f_reg, holdout, &lambdas, &thetas, geometry)?, solutions))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub theta_bound_rad: f64,
    pub lambda_init_mm: f64,
    pub solver: SolverConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { theta_bound_rad: DEFAULT_THETA_BOUND_RAD, lambda_init_mm: DEFAULT_LAMBDA_INIT_MM, solver: SolverConfig::default() }
    }
}

/// One fit/holdout partition and its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub fit_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
    pub tre: TreStats,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tre_mean_mm: f64,
    pub tre_std_mm: f64,
    /// Holdout errors of every split, in split order.
    pub per_point_errors_mm: Vec<f64>,
    pub n_fit: usize,
    pub n_holdout: usize,
    pub splits: Vec<SplitOutcome>,
}

fn run_split(pairs: &[Pair], geometry: &TrusGeometry, mut fit_indices: Vec<usize>, settings: &EvalSettings) -> Result<SplitOutcome> {
    fit_indices.sort_unstable();
    let holdout_indices: Vec<usize> = (0..pairs.len()).filter(|i| fit_indices.binary_search(i).is_err()).collect();
    let fit: Vec<Pair> = fit_indices.iter().map(|&i| pairs[i]).collect();
    let holdout: Vec<Pair> = holdout_indices.iter().map(|&i| pairs[i]).collect();
    let prob = RegistrationProblem::new(fit, *geometry, settings.theta_bound_rad, settings.lambda_init_mm)?;
    let result = register(&prob, &settings.solver)?;
    let (tre, _) = holdout_tre(&result.f_reg, &holdout, geometry, settings.theta_bound_rad)?;
    Ok(SplitOutcome { fit_indices, holdout_indices, tre, converged: result.converged })
}

fn summarize(splits: Vec<SplitOutcome>, n_fit: usize, n_holdout: usize) -> EvalReport {
    let per_point_errors_mm: Vec<f64> = splits.iter().flat_map(|s| s.tre.per_point_mm.iter().copied()).collect();
    let (tre_mean_mm, tre_std_mm) = mean_std(&per_point_errors_mm);
    EvalReport { tre_mean_mm, tre_std_mm, per_point_errors_mm, n_fit, n_holdout, splits }
}

/// Registers on `n_fit` randomly chosen pairs and scores the rest, `repetitions` times.
pub fn fit_holdout_eval(
    pairs: &[Pair],
    geometry: &TrusGeometry,
    n_fit: usize,
    selection_seed: u64,
    settings: &EvalSettings,
    repetitions: usize,
) -> Result<EvalReport> {
    if n_fit < crate::registration::MIN_PAIRS {
        return Err(Error::TooFewPairs { got: n_fit, need: crate::registration::MIN_PAIRS });
    }
    if n_fit + 1 > pairs.len() {
        return Err(Error::InsufficientData { got: pairs.len(), need: n_fit + 1 });
    }
    if repetitions == 0 {
        return Err(Error::InvalidParameter("at least one repetition is needed"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(selection_seed);
    let mut splits = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let chosen = sample(&mut rng, pairs.len(), n_fit).into_vec();
        splits.push(run_split(pairs, geometry, chosen, settings)?);
    }
    Ok(summarize(splits, n_fit, pairs.len() - n_fit))
}

/// Leave-one-out: every pair is scored once by a registration on all others.
pub fn loocv(pairs: &[Pair], geometry: &TrusGeometry, settings: &EvalSettings) -> Result<EvalReport> {
    let need = crate::registration::MIN_PAIRS + 1;
    if pairs.len() < need {
        return Err(Error::InsufficientData { got: pairs.len(), need });
    }
    let splits = (0..pairs.len())
        .map(|k| run_split(pairs, geometry, (0..pairs.len()).filter(|&i| i != k).collect(), settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(splits, pairs.len() - 1, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Line3, PmObservation, Vec3};
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn pair(origin: Vec3, dir: Vec3, scan: f64, lateral: f64, r: f64) -> Pair {
        Pair { laser_line: Line3::new(origin, dir).unwrap(), obs: PmObservation::new(scan, lateral, r).unwrap() }
    }

    #[test]
    fn stats_use_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(m, 2.0);
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn empty_holdout_is_an_error() {
        let g = TrusGeometry::new(128, 0.3, 10.0).unwrap();
        assert_eq!(tre(&RigidTransform::identity(), &[], &[], &[], &g), Err(Error::EmptyHoldout));
        assert_eq!(holdout_tre(&RigidTransform::identity(), &[], &g, 0.1).unwrap_err(), Error::EmptyHoldout);
    }

    #[test]
    fn tre_of_exact_points_is_zero() {
        let g = TrusGeometry::new(128, 0.3, 10.0).unwrap();
        let obs = PmObservation::new(0.2, 1.5, 25.0).unwrap();
        let target = g.pm_position_at(&obs, 0.25);
        let p = pair(target - Vec3::new(0.0, 0.0, 30.0), Vec3::z(), 0.2, 1.5, 25.0);
        let s = tre(&RigidTransform::identity(), &[p], &[30.0], &[0.25], &g).unwrap();
        assert!(s.mean_mm < 1e-12);
        assert_eq!(s.std_mm, 0.0);
    }

    #[test]
    fn split_sizes_are_checked() {
        let g = TrusGeometry::new(128, 0.3, 10.0).unwrap();
        let p = pair(Vec3::zeros(), Vec3::z(), 0.0, 0.0, 20.0);
        let pairs = vec![p; 4];
        assert_eq!(
            fit_holdout_eval(&pairs, &g, 4, 1, &EvalSettings::default(), 1).unwrap_err(),
            Error::InsufficientData { got: 4, need: 5 }
        );
        assert_eq!(loocv(&pairs[..3], &g, &EvalSettings::default()).unwrap_err(), Error::InsufficientData { got: 3, need: 4 });
    }
}
