//! Checks against independent, deliberately naive re-implementations.

use arcline_core::alignment::rigid_alignment;
use arcline_core::calibration::{fit_line_svd, sum_squared_distance};
use arcline_core::registration::{
    cost, cost_gradient, register, Pair, RegistrationProblem, RegistrationState, SolverConfig,
};
use arcline_core::simulation::{generate_scene, perturb_marker_pose, trial_rng, NoiseModel, SimConfig};
use arcline_core::{Line3, PmObservation, RigidTransform, TrusGeometry, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

#[test]
fn line_fit_beats_random_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for instance in 0..40 {
        let n = 3 + instance % 8;
        let base = Line3::new(Vec3::new(rng.random_range(-20.0..20.0), 0.0, 5.0), random_unit(&mut rng)).unwrap();
        let pts: Vec<Vec3> = (0..n)
            .map(|_| {
                let jitter = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                base.point_at(rng.random_range(-30.0..30.0)) + jitter
            })
            .collect();
        let fit = fit_line_svd(&pts).unwrap();
        let best = fit.sum_squared_distance(&pts);
        let centroid = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / n as f64;
        let mut oracle = f64::INFINITY;
        for _ in 0..10_000 {
            let origin = centroid + Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let candidate = Line3::new(origin, random_unit(&mut rng)).unwrap();
            oracle = oracle.min(sum_squared_distance(&candidate, &pts));
        }
        assert!(best <= oracle + 1e-9, "instance {instance}: fit {best} vs oracle {oracle}");
    }
}

/// Straight transcription of the summed-distance cost with explicit trig.
fn naive_cost(f: &RigidTransform, pairs: &[Pair], g: &TrusGeometry, lambdas: &[f64], thetas: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let o = p.laser_line.origin();
        let d = p.laser_line.direction();
        let x = [o.x + lambdas[i] * d.x, o.y + lambdas[i] * d.y, o.z + lambdas[i] * d.z];
        let r = f.rotation();
        let t = f.translation();
        let mut y = [0.0; 3];
        for row in 0..3 {
            y[row] = r[(row, 0)] * x[0] + r[(row, 1)] * x[1] + r[(row, 2)] * x[2] + t[row];
        }
        let th = p.obs.scan_angle_rad;
        let pm = [
            p.obs.lateral_mm,
            g.radius_mm() * th.sin() + p.obs.radius_mm * thetas[i].sin(),
            g.radius_mm() * th.cos() + p.obs.radius_mm * thetas[i].cos(),
        ];
        total += ((y[0] - pm[0]).powi(2) + (y[1] - pm[1]).powi(2) + (y[2] - pm[2]).powi(2)).sqrt();
    }
    total
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (RegistrationProblem, RegistrationState) {
    let g = TrusGeometry::new(128, 0.3, 10.0).unwrap();
    let pairs: Vec<Pair> = (0..n)
        .map(|_| Pair {
            laser_line: Line3::new(
                Vec3::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0)),
                random_unit(rng),
            )
            .unwrap(),
            obs: PmObservation::new(rng.random_range(-0.6..0.6), rng.random_range(-17.0..17.0), rng.random_range(10.0..60.0)).unwrap(),
        })
        .collect();
    let bound = 6f64.to_radians();
    let state = RegistrationState {
        f_reg: RigidTransform::from_rotation_vector(random_unit(rng) * rng.random_range(0.0..3.0), random_unit(rng) * 50.0),
        lambdas: (0..n).map(|_| rng.random_range(5.0..90.0)).collect(),
        thetas: pairs.iter().map(|p| p.obs.scan_angle_rad + rng.random_range(-bound..bound)).collect(),
    };
    (RegistrationProblem::new(pairs, g, bound, 50.0).unwrap(), state)
}

#[test]
fn cost_matches_naive_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let (prob, s) = random_problem(&mut rng, 8);
        let fast = cost(&s.f_reg, &s.lambdas, &s.thetas, &prob).unwrap();
        let slow = naive_cost(&s.f_reg, prob.pairs(), prob.geometry(), &s.lambdas, &s.thetas);
        assert!((fast - slow).abs() <= 1e-12 * slow.max(1.0), "{fast} vs {slow}");
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (prob, s) = random_problem(&mut rng, 6);
        let g = cost_gradient(&s, &prob).unwrap();
        let n = prob.len();
        let eval = |k: usize, step: f64| {
            let mut t = s.clone();
            match k {
                0..=2 => {
                    let mut w = Vec3::zeros();
                    w[k] = step;
                    t.f_reg = t.f_reg.left_increment(&w, &Vec3::zeros());
                }
                3..=5 => {
                    let mut v = Vec3::zeros();
                    v[k - 3] = step;
                    t.f_reg = t.f_reg.left_increment(&Vec3::zeros(), &v);
                }
                _ if k < 6 + n => t.lambdas[k - 6] += step,
                _ => t.thetas[k - 6 - n] += step,
            }
            cost(&t.f_reg, &t.lambdas, &t.thetas, &prob).unwrap()
        };
        let analytic: Vec<f64> = g.pose.iter().chain(&g.lambdas).chain(&g.thetas).copied().collect();
        let numeric: Vec<f64> = (0..6 + 2 * n).map(|k| (eval(k, h) - eval(k, -h)) / (2.0 * h)).collect();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
    }
    assert!(worst < 1e-5, "worst relative gradient error {worst}");
}

#[test]
fn alignment_recovers_random_motions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n = rng.random_range(3..20);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
            .collect();
        let truth = RigidTransform::from_rotation_vector(random_unit(&mut rng) * rng.random_range(0.0..3.1), random_unit(&mut rng) * 100.0);
        let moved: Vec<Vec3> = pts.iter().map(|p| truth.transform_point(p)).collect();
        let est = rigid_alignment(&pts, &moved).unwrap();
        assert!(est.max_abs_diff(&truth) < 1e-9);
    }
}

fn noiseless_pairs(seed: u64, n: usize) -> (SimConfig, Vec<Pair>, RigidTransform) {
    let cfg = SimConfig {
        noise: NoiseModel::none(),
        deviation_range_rad: 6f64.to_radians(),
        apply_detectability_gate: true,
        ..SimConfig::default()
    };
    let mut rng = trial_rng(seed, 0);
    let scene = generate_scene(&cfg, n, &mut rng).unwrap();
    assert!(scene.consistency_error() < 1e-9);
    let pairs = scene.observed_pairs(&cfg.noise, &mut rng);
    (cfg, pairs, scene.f_reg_true)
}

#[test]
fn frozen_pose_step_matches_closed_form_depths() {
    let (cfg, pairs, truth) = noiseless_pairs(3, 8);
    let prob = RegistrationProblem::new(pairs.clone(), cfg.geometry, cfg.theta_bound_rad, 50.0).unwrap();
    let solver = SolverConfig { freeze_pose: true, max_outer: 1, ..SolverConfig::default() };
    let thetas: Vec<f64> = pairs.iter().map(|p| p.obs.scan_angle_rad).collect();
    let state = RegistrationState { f_reg: truth, lambdas: vec![50.0; pairs.len()], thetas: thetas.clone() };
    let step = arcline_core::registration::solve_step_pose(&state, &prob, &solver).unwrap();
    assert_eq!(step.state.f_reg, truth);
    for (i, p) in pairs.iter().enumerate() {
        let mapped = p.laser_line.transformed(&truth);
        let target = cfg.geometry.pm_position_at(&p.obs, thetas[i]);
        let expected = mapped.project_parameter(&target).max(0.0);
        assert!((step.state.lambdas[i] - expected).abs() < 1e-6, "pair {i}: {} vs {expected}", step.state.lambdas[i]);
    }
}

#[test]
fn noiseless_scenes_are_recovered() {
    let mut exact = 0;
    for seed in 0..100 {
        let (cfg, pairs, truth) = noiseless_pairs(100 + seed, 10);
        let prob = RegistrationProblem::new(pairs.clone(), cfg.geometry, cfg.theta_bound_rad, 50.0).unwrap();
        let r = register(&prob, &SolverConfig::default()).unwrap();
        let worst = pairs
            .iter()
            .map(|p| {
                let q = p.laser_line.point_at(40.0);
                (r.f_reg.transform_point(&q) - truth.transform_point(&q)).norm()
            })
            .fold(0.0, f64::max);
        if r.final_cost_mm < 1e-6 && worst < 0.01 {
            exact += 1;
        } else {
            assert!(!r.converged || r.final_cost_mm > 1e-6, "silent wrong answer on seed {seed}");
        }
    }
    assert!(exact >= 95, "{exact}/100 exact");
}

#[test]
fn registration_is_gauge_equivariant_and_monotone() {
    let mut cfg = SimConfig { deviation_range_rad: 6f64.to_radians(), apply_detectability_gate: true, ..SimConfig::default() };
    // Tight stopping so both runs settle on the same optimum, not just near it.
    cfg.solver.tol_rel = 1e-14;
    cfg.solver.max_outer = 5000;
    for seed in 0..10 {
        let mut rng = trial_rng(seed, 1);
        let scene = generate_scene(&cfg, 10, &mut rng).unwrap();
        let pairs = scene.observed_pairs(&cfg.noise, &mut rng);
        let gauge = RigidTransform::from_rotation_vector(Vec3::new(0.3, -0.8, 1.1), Vec3::new(40.0, -25.0, 10.0));
        let moved: Vec<Pair> = pairs.iter().map(|p| Pair { laser_line: p.laser_line.transformed(&gauge), obs: p.obs }).collect();
        let a = register(&RegistrationProblem::new(pairs, cfg.geometry, cfg.theta_bound_rad, 50.0).unwrap(), &cfg.solver).unwrap();
        let b = register(&RegistrationProblem::new(moved, cfg.geometry, cfg.theta_bound_rad, 50.0).unwrap(), &cfg.solver).unwrap();
        assert!((a.final_cost_mm - b.final_cost_mm).abs() < 1e-6, "{} vs {}", a.final_cost_mm, b.final_cost_mm);
        let gap = b.f_reg.max_abs_diff(&a.f_reg.compose(&gauge.inverse()));
        // The optimum is flat along some directions, so poses agree less tightly than costs.
        assert!(gap < 5e-3, "seed {seed}: pose gap {gap}");
        for r in [&a, &b] {
            assert!(r.cost_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            assert!(r.final_cost_mm <= r.cost_trace[0]);
        }
    }
}

#[test]
fn marker_noise_has_requested_moments() {
    let noise = NoiseModel::default();
    let pose = RigidTransform::from_rotation_vector(Vec3::new(0.2, 0.4, -1.0), Vec3::new(10.0, 20.0, 300.0));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let mut sum = Vec3::zeros();
    let mut sq = Vec3::zeros();
    let mut angle_sq = 0.0;
    for _ in 0..n {
        let p = perturb_marker_pose(&pose, &noise, &mut rng);
        let d = p.translation() - pose.translation();
        sum += d;
        sq += d.component_mul(&d);
        angle_sq += pose.rotation_angle_to(&p).powi(2);
    }
    let mean = sum / n as f64;
    for k in 0..3 {
        let sigma = noise.marker_sigma_trans_mm[k];
        let var = sq[k] / n as f64 - mean[k] * mean[k];
        assert!((mean[k] - noise.marker_mean_mm[k]).abs() < 5.0 * sigma / (n as f64).sqrt());
        assert!((var.sqrt() - sigma).abs() < 0.02 * sigma);
    }
    // Three independent small rotations: E[angle²] ≈ Σσ².
    let expected: f64 = noise.marker_sigma_rot_rad.iter().map(|s| s * s).sum();
    assert!((angle_sq / n as f64 - expected).abs() < 0.03 * expected);
}
