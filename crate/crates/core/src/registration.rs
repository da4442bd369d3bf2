//! Arc-to-line registration.
//!
//! Each acquisition pairs a laser beam seen from the camera (a line with an
//! unknown depth `λ`) with a photoacoustic detection in the transducer frame
//! (an arc of known radius with an unknown out-of-plane angle `θ′`). The
//! camera → transducer transform `F_reg` minimizes
//!
//! ```text
//! J(F, λ, θ′) = Σᵢ ‖F·(pᵢ + λᵢ·nᵢ) − pmᵢ(θ′ᵢ)‖₂
//! ```
//!
//! by alternating a descent step on `(F, λ)` with an exact per-pair update of
//! `θ′`, until `J` stops changing.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{ComplexField, DMatrix, DVector, RealField};

use crate::alignment::rigid_alignment;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Line3, PmObservation, RigidTransform, TrusGeometry, Vec3};

pub const MIN_PAIRS: usize = 3;
pub const RECOMMENDED_PAIRS: usize = 4;
/// Slice-thickness half-angle measured at 30 mm depth.
pub const DEFAULT_THETA_BOUND_RAD: f64 = 6.0 * core::f64::consts::PI / 180.0;
pub const DEFAULT_LAMBDA_INIT_MM: f64 = 50.0;

/// Summands with a residual below this contribute no gradient.
pub const ZERO_RESIDUAL_MM: f64 = 1e-12;

/// One acquisition: beam in the camera frame and the matching detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub laser_line: Line3,
    pub obs: PmObservation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationProblem {
    pairs: Vec<Pair>,
    geometry: TrusGeometry,
    theta_bound_rad: f64,
    lambda_init_mm: f64,
}

impl RegistrationProblem {
    pub fn new(pairs: Vec<Pair>, geometry: TrusGeometry, theta_bound_rad: f64, lambda_init_mm: f64) -> Result<Self> {
        if pairs.len() < MIN_PAIRS {
            return Err(Error::TooFewPairs { got: pairs.len(), need: MIN_PAIRS });
        }
        if !(theta_bound_rad.is_finite() && theta_bound_rad > 0.0) {
            return Err(Error::InvalidParameter("theta bound must be positive"));
        }
        if !(lambda_init_mm.is_finite() && lambda_init_mm > 0.0) {
            return Err(Error::InvalidParameter("initial lambda must be positive"));
        }
        if pairs.len() < RECOMMENDED_PAIRS {
            log::warn!("registering {} pairs: the transform is barely determined", pairs.len());
        }
        Ok(Self { pairs, geometry, theta_bound_rad, lambda_init_mm })
    }

    pub fn with_defaults(pairs: Vec<Pair>, geometry: TrusGeometry) -> Result<Self> {
        Self::new(pairs, geometry, DEFAULT_THETA_BOUND_RAD, DEFAULT_LAMBDA_INIT_MM)
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn geometry(&self) -> &TrusGeometry {
        &self.geometry
    }

    pub fn theta_bound_rad(&self) -> f64 {
        self.theta_bound_rad
    }

    pub fn lambda_init_mm(&self) -> f64 {
        self.lambda_init_mm
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Current estimate `(F_reg, λ, θ′)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationState {
    pub f_reg: RigidTransform,
    pub lambdas: Vec<f64>,
    /// Absolute arc angles `θ′ᵢ = θᵢ + Δθᵢ`.
    pub thetas: Vec<f64>,
}

/// How the `(F, λ)` step picks its search direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DescentDirection {
    /// Plain negative gradient.
    Steepest,
    /// Negative gradient scaled by the reweighted Gauss-Newton metric
    /// `Σ JᵢᵀJᵢ / ‖rᵢ‖` (the majorizer of the summed norms).
    #[default]
    Preconditioned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Outer loop stops when `|J_k − J_{k−1}| / max(J_{k−1}, 1e-12)` drops below this.
    pub tol_rel: f64,
    pub max_outer: usize,
    pub inner_tol_rel: f64,
    pub max_inner: usize,
    pub armijo_c: f64,
    pub backtrack_shrink: f64,
    pub max_backtracks: usize,
    /// Gradient norm treated as stationary.
    pub grad_tol: f64,
    pub direction: DescentDirection,
    /// Hold `F_reg` fixed and only move `λ` in the pose step.
    pub freeze_pose: bool,
    /// Let the descent step move `θ′` together with `(F, λ)`. The exact angle
    /// update still follows every step. Without this the alternation can lock
    /// onto a kink of the summed norms far from the optimum.
    pub joint_angles: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_rel: 1e-8,
            max_outer: 200,
            inner_tol_rel: 1e-10,
            max_inner: 500,
            armijo_c: 1e-4,
            backtrack_shrink: 0.5,
            max_backtracks: 50,
            grad_tol: 1e-12,
            direction: DescentDirection::Preconditioned,
            freeze_pose: false,
            joint_angles: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol_rel >= 0.0
            && self.inner_tol_rel >= 0.0
            && self.max_outer >= 1
            && self.max_inner >= 1
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.backtrack_shrink > 0.0
            && self.backtrack_shrink < 1.0
            && self.grad_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("solver configuration out of range"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Camera → transducer transform.
    pub f_reg: RigidTransform,
    pub lambdas_mm: Vec<f64>,
    pub thetas_rad: Vec<f64>,
    pub final_cost_mm: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Cost after initialization followed by the cost after each outer iteration.
    pub cost_trace: Vec<f64>,
    /// Number of pose steps whose line search gave up.
    pub stalled_steps: usize,
}

impl RegistrationResult {
    pub fn state(&self) -> RegistrationState {
        RegistrationState { f_reg: self.f_reg, lambdas: self.lambdas_mm.clone(), thetas: self.thetas_rad.clone() }
    }
}

/// Gradient of the cost. `pose` holds `[ω; v]` for the left increment
/// `y ↦ exp(ω)·y + v` applied in the transducer frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGradient {
    pub pose: [f64; 6],
    pub lambdas: Vec<f64>,
    pub thetas: Vec<f64>,
}

impl CostGradient {
    pub fn max_abs(&self) -> f64 {
        self.pose.iter().chain(&self.lambdas).chain(&self.thetas).map(|g| g.abs()).fold(0.0, f64::max)
    }
}

fn check_lengths(lambdas: &[f64], thetas: &[f64], prob: &RegistrationProblem) -> Result<()> {
    for len in [lambdas.len(), thetas.len()] {
        if len != prob.len() {
            return Err(Error::LengthMismatch { expected: prob.len(), got: len });
        }
    }
    Ok(())
}

#[inline]
fn residual(f: &RigidTransform, pair: &Pair, geometry: &TrusGeometry, lambda: f64, theta: f64) -> Vec3 {
    f.transform_point(&pair.laser_line.point_at(lambda)) - geometry.pm_position_at(&pair.obs, theta)
}

/// Per-pair distances `‖F·p_laser(λᵢ) − pm(θ′ᵢ)‖`.
pub fn residual_norms(f: &RigidTransform, lambdas: &[f64], thetas: &[f64], prob: &RegistrationProblem) -> Result<Vec<f64>> {
    check_lengths(lambdas, thetas, prob)?;
    Ok(prob
        .pairs
        .iter()
        .zip(lambdas.iter().zip(thetas))
        .map(|(pair, (&l, &t))| residual(f, pair, &prob.geometry, l, t).norm())
        .collect())
}

/// Summed Euclidean distances between mapped laser points and arc points (mm).
pub fn cost(f: &RigidTransform, lambdas: &[f64], thetas: &[f64], prob: &RegistrationProblem) -> Result<f64> {
    Ok(residual_norms(f, lambdas, thetas, prob)?.iter().sum())
}

pub fn state_cost(state: &RegistrationState, prob: &RegistrationProblem) -> Result<f64> {
    cost(&state.f_reg, &state.lambdas, &state.thetas, prob)
}

/// Analytic gradient of [`cost`].
pub fn cost_gradient(state: &RegistrationState, prob: &RegistrationProblem) -> Result<CostGradient> {
    check_lengths(&state.lambdas, &state.thetas, prob)?;
    let g = &prob.geometry;
    let mut pose = [0.0; 6];
    let mut lambdas = vec![0.0; prob.len()];
    let mut thetas = vec![0.0; prob.len()];
    for (i, pair) in prob.pairs.iter().enumerate() {
        let y = state.f_reg.transform_point(&pair.laser_line.point_at(state.lambdas[i]));
        let r = y - g.pm_position_at(&pair.obs, state.thetas[i]);
        let norm = r.norm();
        if norm < ZERO_RESIDUAL_MM {
            continue;
        }
        let u = r / norm;
        let w = y.cross(&u);
        for k in 0..3 {
            pose[k] += w[k];
            pose[3 + k] += u[k];
        }
        lambdas[i] = u.dot(&state.f_reg.transform_vector(pair.laser_line.direction()));
        thetas[i] = -u.dot(&g.pm_tangent_at(&pair.obs, state.thetas[i]));
    }
    Ok(CostGradient { pose, lambdas, thetas })
}

/// Starting point: every `λ` at the nominal standoff, every `θ′` at its scan
/// angle, and `F_reg` from closed-form alignment of the two resulting point sets.
pub fn initialize(prob: &RegistrationProblem) -> Result<RegistrationState> {
    let lambdas = vec![prob.lambda_init_mm; prob.len()];
    let thetas: Vec<f64> = prob.pairs.iter().map(|p| p.obs.scan_angle_rad).collect();
    let camera: Vec<Vec3> = prob.pairs.iter().map(|p| p.laser_line.point_at(prob.lambda_init_mm)).collect();
    let trus: Vec<Vec3> = prob.pairs.iter().map(|p| prob.geometry.pm_position(&p.obs, 0.0)).collect();
    let f_reg = rigid_alignment(&camera, &trus)?;
    Ok(RegistrationState { f_reg, lambdas, thetas })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseStep {
    pub state: RegistrationState,
    pub cost: f64,
    pub iterations: usize,
    /// The line search ran out of backtracks before the step converged.
    pub stalled: bool,
}

/// Descent on `(F_reg, λ)`, and on `θ′` too when `cfg.joint_angles` is set.
///
/// Each iteration takes a projected step (`λ ≥ 0`, `θ′` inside its bound)
/// accepted by an Armijo backtracking search, so the returned cost never
/// exceeds the input cost.
pub fn solve_step_pose(state: &RegistrationState, prob: &RegistrationProblem, cfg: &SolverConfig) -> Result<PoseStep> {
    check_lengths(&state.lambdas, &state.thetas, prob)?;
    let n = prob.len();
    let mut current = state.clone();
    let mut current_cost = state_cost(&current, prob)?;
    let mut steepest_step = 1e-3;
    let mut iterations = 0;
    let mut stalled = false;

    while iterations < cfg.max_inner {
        iterations += 1;
        let mut model = LocalModel::build(&current, prob);
        if cfg.freeze_pose {
            model.freeze(0..6);
        }
        if cfg.freeze_pose || !cfg.joint_angles {
            model.freeze(6 + n..6 + 2 * n);
        }
        model.freeze_active_bounds(&current, prob);
        let grad_norm = model.gradient.norm();
        if grad_norm <= cfg.grad_tol {
            break;
        }
        let (direction, mut step) = match cfg.direction {
            DescentDirection::Preconditioned => match model.preconditioned_direction() {
                Some(d) => (d, 1.0),
                None => (-&model.gradient, steepest_step),
            },
            DescentDirection::Steepest => (-&model.gradient, steepest_step),
        };

        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial = apply_step(&current, prob, &direction, step);
            let trial_cost = state_cost(&trial, prob)?;
            let moved = displacement(&current, &trial, &direction, step, n);
            if trial_cost <= current_cost + cfg.armijo_c * model.gradient.dot(&moved) {
                accepted = Some((trial, trial_cost));
                break;
            }
            step *= cfg.backtrack_shrink;
        }

        let Some((trial, trial_cost)) = accepted else {
            stalled = true;
            break;
        };
        if cfg.direction == DescentDirection::Steepest || step != 1.0 {
            steepest_step = (step * 2.0).min(1e3);
        }
        let decrease = current_cost - trial_cost;
        current = trial;
        current_cost = trial_cost;
        if decrease <= cfg.inner_tol_rel * current_cost.max(1e-12) + f64::MIN_POSITIVE {
            break;
        }
    }
    Ok(PoseStep { state: current, cost: current_cost, iterations, stalled })
}

/// First-order model of the cost at a state: gradient and reweighted
/// Gauss-Newton metric over `[ω; v; λ₀ … λ_{n−1}; θ′₀ … θ′_{n−1}]`.
struct LocalModel {
    gradient: DVector<f64>,
    metric: DMatrix<f64>,
}

impl LocalModel {
    fn build(state: &RegistrationState, prob: &RegistrationProblem) -> Self {
        let n = prob.len();
        let dim = 6 + 2 * n;
        let mut gradient = DVector::zeros(dim);
        let mut metric = DMatrix::zeros(dim, dim);
        let g = &prob.geometry;

        let mut norms = Vec::with_capacity(n);
        let mut parts = Vec::with_capacity(n);
        for (i, pair) in prob.pairs.iter().enumerate() {
            let y = state.f_reg.transform_point(&pair.laser_line.point_at(state.lambdas[i]));
            let r = y - g.pm_position_at(&pair.obs, state.thetas[i]);
            let dir = state.f_reg.transform_vector(pair.laser_line.direction());
            let tangent = g.pm_tangent_at(&pair.obs, state.thetas[i]);
            norms.push(r.norm());
            parts.push((y, r, dir, tangent));
        }
        let mean = norms.iter().sum::<f64>() / n as f64;
        let floor = (1e-8 * mean).max(ZERO_RESIDUAL_MM);

        for (i, ((y, r, dir, tangent), norm)) in parts.iter().zip(&norms).enumerate() {
            // Jacobian of rᵢ: [−[y]ₓ | I | dir at column 6+i | −tangent at column 6+n+i].
            let mut jac = [[0.0; 8]; 3];
            let skew = [[0.0, -y.z, y.y], [y.z, 0.0, -y.x], [-y.y, y.x, 0.0]];
            for row in 0..3 {
                for col in 0..3 {
                    jac[row][col] = -skew[row][col];
                }
                jac[row][3 + row] = 1.0;
                jac[row][6] = dir[row];
                jac[row][7] = -tangent[row];
            }
            let index = |c: usize| match c {
                0..=5 => c,
                6 => 6 + i,
                _ => 6 + n + i,
            };

            if *norm >= ZERO_RESIDUAL_MM {
                for c in 0..8 {
                    let mut acc = 0.0;
                    for row in 0..3 {
                        acc += jac[row][c] * r[row];
                    }
                    gradient[index(c)] += acc / norm;
                }
            }
            let w = 1.0 / norm.max(floor);
            for a in 0..8 {
                for b in 0..8 {
                    let acc: f64 = jac.iter().map(|row| row[a] * row[b]).sum();
                    metric[(index(a), index(b))] += w * acc;
                }
            }
        }
        Self { gradient, metric }
    }

    /// Holds variables that sit on a bound while the gradient pushes them outward.
    fn freeze_active_bounds(&mut self, state: &RegistrationState, prob: &RegistrationProblem) {
        let n = prob.len();
        let eps = 1e-12;
        for i in 0..n {
            if state.lambdas[i] <= eps && self.gradient[6 + i] > 0.0 {
                self.freeze(6 + i..7 + i);
            }
            let scan = prob.pairs[i].obs.scan_angle_rad;
            let offset = state.thetas[i] - scan;
            let g = self.gradient[6 + n + i];
            // `scan ± bound` is rounded, so tiny bounds need an absolute slack.
            let edge = prob.theta_bound_rad * (1.0 - eps) - 4.0 * f64::EPSILON * scan.abs().max(1.0);
            let at_lower = offset <= -edge && g > 0.0;
            let at_upper = offset >= edge && g < 0.0;
            if at_lower || at_upper {
                self.freeze(6 + n + i..7 + n + i);
            }
        }
    }

    fn freeze(&mut self, coords: core::ops::Range<usize>) {
        let dim = self.metric.nrows();
        for k in coords {
            self.gradient[k] = 0.0;
            for j in 0..dim {
                self.metric[(k, j)] = 0.0;
                self.metric[(j, k)] = 0.0;
            }
            self.metric[(k, k)] = 1.0;
        }
    }

    fn preconditioned_direction(&self) -> Option<DVector<f64>> {
        let dim = self.metric.nrows();
        let scale = (0..dim).map(|i| self.metric[(i, i)]).fold(0.0, f64::max);
        if !(scale.is_finite() && scale > 0.0) {
            return None;
        }
        let mut damped = self.metric.clone();
        for i in 0..dim {
            damped[(i, i)] += 1e-12 * scale;
        }
        let chol = damped.cholesky()?;
        let d = -chol.solve(&self.gradient);
        if d.iter().all(|v| v.is_finite()) && d.dot(&self.gradient) < 0.0 {
            Some(d)
        } else {
            None
        }
    }
}

fn apply_step(state: &RegistrationState, prob: &RegistrationProblem, direction: &DVector<f64>, step: f64) -> RegistrationState {
    let n = prob.len();
    let omega = Vec3::new(direction[0], direction[1], direction[2]) * step;
    let v = Vec3::new(direction[3], direction[4], direction[5]) * step;
    let f_reg = state.f_reg.left_increment(&omega, &v);
    let lambdas = (0..n).map(|i| (state.lambdas[i] + step * direction[6 + i]).max(0.0)).collect();
    let thetas = (0..n)
        .map(|i| {
            let scan = prob.pairs[i].obs.scan_angle_rad;
            let moved = state.thetas[i] + step * direction[6 + n + i];
            moved.clamp(scan - prob.theta_bound_rad, scan + prob.theta_bound_rad)
        })
        .collect();
    RegistrationState { f_reg, lambdas, thetas }
}

/// Actual parameter change of a projected step, in the gradient's coordinates.
fn displacement(from: &RegistrationState, to: &RegistrationState, direction: &DVector<f64>, step: f64, n: usize) -> DVector<f64> {
    let mut moved = DVector::zeros(6 + 2 * n);
    for k in 0..6 {
        moved[k] = step * direction[k];
    }
    for i in 0..n {
        moved[6 + i] = to.lambdas[i] - from.lambdas[i];
        moved[6 + n + i] = to.thetas[i] - from.thetas[i];
    }
    moved
}

/// Exact per-pair minimization over `θ′` with `F_reg` and `λ` fixed.
///
/// The summand is `‖q − e − r·[0, sin θ′, cos θ′]‖`, which is unimodal on the
/// circle with its minimum at `atan2(q_y − e_y, q_z − e_z)`. The result is
/// clamped to `θ ± bound`; ties go to the smaller angle.
pub fn solve_step_angles(state: &RegistrationState, prob: &RegistrationProblem) -> Result<Vec<f64>> {
    check_lengths(&state.lambdas, &state.thetas, prob)?;
    Ok(prob
        .pairs
        .iter()
        .zip(&state.lambdas)
        .map(|(pair, &lambda)| {
            let q = state.f_reg.transform_point(&pair.laser_line.point_at(lambda));
            best_arc_angle(&prob.geometry, &pair.obs, &q, prob.theta_bound_rad)
        })
        .collect())
}

/// Arc angle within `scan ± bound` whose arc point is closest to `q`.
pub fn best_arc_angle(geometry: &TrusGeometry, obs: &PmObservation, q: &Vec3, bound: f64) -> f64 {
    let scan = obs.scan_angle_rad;
    let e = geometry.element_position(scan, obs.lateral_mm);
    let dy = q.y - e.y;
    let dz = q.z - e.z;
    let lower = scan - bound;
    let upper = scan + bound;
    if obs.radius_mm == 0.0 || ComplexField::hypot(dy, dz) < 1e-15 {
        return lower;
    }
    let offset = wrap_angle(RealField::atan2(dy, dz) - scan);
    if offset.abs() <= bound {
        return scan + offset;
    }
    let to_lower = wrap_angle(lower - (scan + offset)).abs();
    let to_upper = wrap_angle(upper - (scan + offset)).abs();
    if to_lower <= to_upper + 1e-12 {
        lower
    } else {
        upper
    }
}

/// Alternates [`solve_step_pose`] and [`solve_step_angles`] from
/// [`initialize`] until the relative cost change falls below `tol_rel`.
///
/// Hitting `max_outer` is reported through `converged = false`, not an error.
pub fn register(prob: &RegistrationProblem, cfg: &SolverConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    let mut state = initialize(prob)?;
    let mut previous = state_cost(&state, prob)?;
    let mut cost_trace = vec![previous];
    let mut converged = false;
    let mut outer_iterations = 0;
    let mut stalled_steps = 0;

    while outer_iterations < cfg.max_outer {
        outer_iterations += 1;
        let step = solve_step_pose(&state, prob, cfg)?;
        if step.stalled {
            stalled_steps += 1;
        }
        state = step.state;
        let thetas = solve_step_angles(&state, prob)?;
        let candidate = RegistrationState { thetas, ..state.clone() };
        // The angle step is an exact argmin per pair; the guard only absorbs rounding.
        let mut current = state_cost(&candidate, prob)?;
        if current <= step.cost {
            state = candidate;
        } else {
            current = step.cost;
        }
        debug_assert!(state.lambdas.iter().all(|&l| l >= 0.0));
        debug_assert!(state
            .thetas
            .iter()
            .zip(prob.pairs())
            .all(|(t, p)| (t - p.obs.scan_angle_rad).abs()
                <= prob.theta_bound_rad + 4.0 * f64::EPSILON * p.obs.scan_angle_rad.abs().max(1.0)));
        cost_trace.push(current);
        let change = (previous - current).abs() / previous.max(1e-12);
        previous = current;
        if change < cfg.tol_rel {
            converged = true;
            break;
        }
    }

    let final_cost_mm = state_cost(&state, prob)?;
    Ok(RegistrationResult {
        f_reg: state.f_reg,
        lambdas_mm: state.lambdas,
        thetas_rad: state.thetas,
        final_cost_mm,
        outer_iterations,
        converged,
        cost_trace,
        stalled_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn geometry() -> TrusGeometry {
        TrusGeometry::new(128, 0.3, 10.0).unwrap()
    }

    fn single_pair_problem(pm_radius: f64) -> RegistrationProblem {
        let obs = PmObservation::new(0.0, 0.0, pm_radius).unwrap();
        let line = Line3::new(Vec3::new(0.0, 0.0, 0.0), Vec3::z()).unwrap();
        let pair = Pair { laser_line: line, obs };
        RegistrationProblem { pairs: vec![pair], geometry: geometry(), theta_bound_rad: DEFAULT_THETA_BOUND_RAD, lambda_init_mm: 50.0 }
    }

    #[test]
    fn cost_single_pair_examples() {
        let prob = single_pair_problem(30.0);
        let c = cost(&RigidTransform::identity(), &[40.0], &[0.0], &prob).unwrap();
        assert_abs_diff_eq!(c, 0.0, epsilon = 1e-12);
        let prob = single_pair_problem(33.0);
        let c = cost(&RigidTransform::identity(), &[40.0], &[0.0], &prob).unwrap();
        assert_abs_diff_eq!(c, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn cost_rejects_length_mismatch() {
        let prob = single_pair_problem(30.0);
        assert_eq!(
            cost(&RigidTransform::identity(), &[1.0, 2.0], &[0.0], &prob),
            Err(Error::LengthMismatch { expected: 1, got: 2 })
        );
    }

    #[test]
    fn problem_validation() {
        let prob = single_pair_problem(30.0);
        assert_eq!(
            RegistrationProblem::with_defaults(prob.pairs.clone(), geometry()),
            Err(Error::TooFewPairs { got: 1, need: 3 })
        );
        let three = vec![prob.pairs[0]; 3];
        assert!(RegistrationProblem::new(three.clone(), geometry(), 0.0, 50.0).is_err());
        assert!(RegistrationProblem::new(three, geometry(), 0.1, -1.0).is_err());
    }

    #[test]
    fn angle_step_interior_and_clamped() {
        let g = geometry();
        let scan = 0.2;
        let obs = PmObservation::new(scan, 1.0, 25.0).unwrap();
        let bound = 6f64.to_radians();
        let on_arc = g.pm_position_at(&obs, scan + 3f64.to_radians());
        assert_abs_diff_eq!(best_arc_angle(&g, &obs, &on_arc, bound), scan + 3f64.to_radians(), epsilon = 1e-12);
        let far = g.pm_position_at(&obs, scan + 10f64.to_radians());
        assert_abs_diff_eq!(best_arc_angle(&g, &obs, &far, bound), scan + bound, epsilon = 1e-15);
        let below = g.pm_position_at(&obs, scan - 10f64.to_radians());
        assert_abs_diff_eq!(best_arc_angle(&g, &obs, &below, bound), scan - bound, epsilon = 1e-15);
    }

    #[test]
    fn angle_step_ties_go_to_smaller_angle() {
        let g = geometry();
        let scan = 0.3;
        let obs = PmObservation::new(scan, 0.0, 20.0).unwrap();
        let bound = 6f64.to_radians();
        // Directly opposite the scan direction: both bounds are equally far.
        let e = g.element_position(scan, 0.0);
        let opposite = e - Vec3::new(0.0, scan.sin(), scan.cos()) * 5.0;
        assert_abs_diff_eq!(best_arc_angle(&g, &obs, &opposite, bound), scan - bound, epsilon = 1e-15);
        // On the arc centre every angle ties.
        assert_abs_diff_eq!(best_arc_angle(&g, &obs, &e, bound), scan - bound, epsilon = 1e-15);
    }

    #[test]
    fn pose_step_is_stationary_at_zero_cost() {
        let prob = single_pair_problem(30.0);
        let state = RegistrationState { f_reg: RigidTransform::identity(), lambdas: vec![40.0], thetas: vec![0.0] };
        let step = solve_step_pose(&state, &prob, &SolverConfig::default()).unwrap();
        assert_eq!(step.state, state);
        assert!(!step.stalled);
    }
}
