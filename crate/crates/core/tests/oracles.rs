//! Library results checked against independent closed forms and brute-force computations.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use tfilter::bench::{simulate_scalar_walk, ScalarWalkConfig};
use tfilter::calibration::{moment_matching_factor, optimal_scale_factor, ScaleObjective};
use tfilter::distributions::{tail_probability, BlockPartition, Gaussian, StudentT};
use tfilter::gaussian::{kf_run, rts_smooth, KfOptions};
use tfilter::grid::{grid_moments, run_oracle, GridSpec, OracleNoise};
use tfilter::model::LinearModel;
use tfilter::student::{tf_measurement_update, ApproximationStrategy, TBelief};

/// `F(t)` of the standard t distribution with three degrees of freedom.
fn t3_cdf(t: f64) -> f64 {
    let s = 3f64.sqrt();
    0.5 + (t / (s * (1.0 + t * t / 3.0)) + (t / s).atan()) / PI
}

#[test]
fn tail_probabilities_match_closed_forms() {
    let g = tail_probability(&Gaussian::scalar(0.0, 1.0).unwrap(), 3.0).unwrap();
    assert!((g - erfc(3.0 / 2f64.sqrt())).abs() < 1e-9);
    let t = tail_probability(&StudentT::scalar(0.0, 0.8, 3.0).unwrap(), 3.0).unwrap();
    assert!((t - 2.0 * (1.0 - t3_cdf(3.0 / 0.8f64.sqrt()))).abs() < 1e-9);
    let cauchy = tail_probability(&StudentT::scalar(1.0, 4.0, 1.0).unwrap(), 3.0).unwrap();
    assert!((cauchy - (1.0 - 2.0 / PI * (1.5f64).atan())).abs() < 1e-7);
    // Reported values: 0.0027 for the normal, 0.044 for St(0, 0.8, 3).
    assert!((g - 0.0027).abs() < 2e-4 && (t - 0.044).abs() < 1e-3);
}

#[test]
fn t3_density_matches_closed_form() {
    let d = StudentT::scalar(0.0, 1.0, 3.0).unwrap();
    for x in [-7.0f64, -1.0, 0.0, 0.3, 2.5] {
        let exact = 6.0 * 3f64.sqrt() / (PI * (3.0 + x * x).powi(2));
        assert!((d.pdf(&DVector::from_element(1, x)).unwrap() - exact).abs() < 1e-14);
    }
}

/// `KL(N(0, I_n) || St(0, c·I_n, nu))` up to a constant, by quadrature over `r² ~ χ²(n)`.
fn gaussian_to_t_cross_entropy(n: usize, nu: f64, c: f64) -> f64 {
    let half = 0.5 * n as f64;
    let ln_norm = -half * (2f64).ln() - ln_gamma(half);
    let (steps, top) = (200_000, 400.0);
    let h = top / steps as f64;
    let mut acc = 0.0;
    for i in 1..steps {
        let s = i as f64 * h;
        let chi = (ln_norm + (half - 1.0) * s.ln() - 0.5 * s).exp();
        acc += chi * (s / (nu * c)).ln_1p();
    }
    let expectation = acc * h;
    half * c.ln() + 0.5 * (nu + n as f64) * expectation
}

fn brute_force_scale(n: usize, nu: f64) -> f64 {
    (1..=1000)
        .map(|i| i as f64 * 1e-3 + 0.2)
        .min_by(|a, b| gaussian_to_t_cross_entropy(n, nu, *a).total_cmp(&gaussian_to_t_cross_entropy(n, nu, *b)))
        .unwrap()
}

#[test]
fn monte_carlo_scale_factor_matches_quadrature() {
    for n in [1usize, 2, 4] {
        let exact = brute_force_scale(n, 3.0);
        let mc = optimal_scale_factor(n, 1e6, 3.0, 400_000, 21).unwrap();
        assert!((mc - exact).abs() < 0.01, "n = {n}: {mc} vs {exact}");
    }
    // Reported value c = 0.63 for n = 1.
    assert!((brute_force_scale(1, 3.0) - 0.63).abs() < 0.01);
}

#[test]
fn scale_objective_differences_match_quadrature() {
    let obj = ScaleObjective::new(2, 1e6, 400_000, 4).unwrap();
    let (a, b) = (0.5, 0.9);
    let mc = obj.eval(3.0, a) - obj.eval(3.0, b);
    let exact = gaussian_to_t_cross_entropy(2, 3.0, a) - gaussian_to_t_cross_entropy(2, 3.0, b);
    assert!((mc - exact).abs() < 5.0 * (obj.std_error(3.0, a) + obj.std_error(3.0, b)), "{mc} vs {exact}");
}

#[test]
fn moment_matching_limits() {
    assert_eq!(moment_matching_factor(f64::INFINITY, 3.0).unwrap(), 1.0 / 3.0);
    assert!((moment_matching_factor(1e12, 3.0).unwrap() - 1.0 / 3.0).abs() < 1e-9);
    assert!((moment_matching_factor(10.0, 4.0).unwrap() - 0.625).abs() < 1e-15);
}

#[test]
fn t_measurement_update_is_the_exact_joint_conditional() {
    // With equal dofs the joint of (x, y) is exactly t, so the update must equal its conditional.
    let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let h = DMatrix::from_row_slice(1, 2, &[1.0, -0.5]);
    let r = DMatrix::from_element(1, 1, 0.7);
    let prior = StudentT::new(DVector::from_vec(vec![1.0, -1.0]), p.clone(), 4.0).unwrap();
    let model = LinearModel::new(DMatrix::identity(2, 2), h.clone(), DMatrix::identity(2, 2), r.clone(), 4.0, 4.0, prior.clone()).unwrap();
    let belief = TBelief::new(prior.mean().clone(), p.clone(), 4.0);
    let y = DVector::from_element(1, 3.2);
    let (post, _) = tf_measurement_update(&belief, &y, &model, &ApproximationStrategy::Conservative, 1).unwrap();

    let mut scale = DMatrix::zeros(3, 3);
    scale.view_mut((0, 0), (2, 2)).copy_from(&p);
    let ph = &p * h.transpose();
    scale.view_mut((0, 2), (2, 1)).copy_from(&ph);
    scale.view_mut((2, 0), (1, 2)).copy_from(&ph.transpose());
    scale.view_mut((2, 2), (1, 1)).copy_from(&(&h * &ph + &r));
    let mean = DVector::from_vec(vec![1.0, -1.0, (&h * prior.mean())[0]]);
    let joint = StudentT::new(mean, scale, 4.0).unwrap();
    let cond = joint.conditional(&BlockPartition::new(2, 1), &y).unwrap();
    assert!((&post.xhat - cond.dist.mean()).amax() < 1e-12);
    assert!((&post.p - cond.dist.scale()).amax() < 1e-12);
    assert_eq!(post.eta, cond.dist.dof());
}

#[test]
fn scalar_kalman_filter_matches_hand_recursion() {
    let cfg = ScalarWalkConfig { steps: 10, prior_dof: 1e6, gamma: 1e6, delta: 1e6, q: 0.5, r: 2.0, seed: 8, ..Default::default() };
    let w = simulate_scalar_walk(&cfg).unwrap();
    let hist = kf_run(&cfg.model().unwrap(), &w.measurement_vectors(), &KfOptions::default()).unwrap();
    let (mut x, mut p) = (0.0, 1.0);
    for (y, step) in w.measurements.iter().zip(&hist.steps) {
        p += 0.5;
        let k = p / (p + 2.0);
        x += k * (y - x);
        p *= 1.0 - k;
        assert!((step.filtered.xhat[0] - x).abs() < 1e-12 && (step.filtered.p[(0, 0)] - p).abs() < 1e-12);
    }
}

#[test]
fn grid_oracle_matches_kalman_and_rts() {
    let cfg = ScalarWalkConfig { steps: 12, prior_dof: 1e6, gamma: 1e6, delta: 1e6, q: 0.3, r: 1.5, seed: 12, ..Default::default() };
    let model = cfg.model().unwrap();
    let w = simulate_scalar_walk(&cfg).unwrap();
    let run = run_oracle(&model, &w.measurements, GridSpec::oracle_default(), OracleNoise::Gaussian, 0).unwrap();
    let kf = kf_run(&model, &w.measurement_vectors(), &KfOptions::default()).unwrap();
    let rts = rts_smooth(&kf, &model).unwrap();
    for (d, b) in run.filtered.iter().zip(kf.filtered()).chain(run.smoothed.iter().zip(rts)) {
        let (m, v) = grid_moments(d);
        assert!((m - b.xhat[0]).abs() < 1e-6 && (v - b.p[(0, 0)]).abs() < 1e-6);
    }
    // Evidence of a Gaussian model: product of innovation densities.
    let ln_evidence: f64 = kf
        .steps
        .iter()
        .map(|s| {
            let (e, v) = (s.diagnostics.innovation[0], s.diagnostics.s[(0, 0)]);
            -0.5 * ((2.0 * PI * v).ln() + e * e / v)
        })
        .sum();
    assert!((run.log_evidence - ln_evidence).abs() < 1e-6);
}
