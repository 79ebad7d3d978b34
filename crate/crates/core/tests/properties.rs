use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tfilter::bench::{kde, position_rmse, sign_test, simulate_drone, simulate_scalar_walk, DroneScenario, ScalarWalkConfig};
use tfilter::calibration::{moment_matching_factor, ScaleFactorEntry, ScaleFactorTable};
use tfilter::distributions::{Block, BlockPartition, Density, StudentT};
use tfilter::gaussian::{kf_run, rts_smooth, KfOptions};
use tfilter::grid::{grid_predict, grid_smooth, grid_update, GridDensity, GridSpec, TransitionKernel};
use tfilter::model::LinearModel;
use tfilter::student::{innovation_factor, tf_measurement_update, tf_run, ts_smooth, ApproximationStrategy, TBelief};

/// `A Aᵀ + s·I` from `n²` entries.
fn spd(n: usize, entries: &[f64], s: f64) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(n, n, &entries[..n * n]);
    &a * a.transpose() + DMatrix::identity(n, n) * s
}

fn spd3() -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.5f64..1.5, 9), 0.1f64..2.0).prop_map(|(e, s)| spd(3, &e, s))
}

fn vec3() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0f64..3.0, 3).prop_map(DVector::from_vec)
}

fn random_model(n: usize, m: usize, entries: &[f64], dofs: (f64, f64, f64)) -> LinearModel {
    let f = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.3 * entries[i * n + j] });
    let h = DMatrix::from_fn(m, n, |i, j| if i == j { 1.0 } else { 0.5 * entries[(i + j) % entries.len()] });
    let q = spd(n, entries, 0.2);
    let r = spd(m, &entries[1..], 0.3);
    let prior = StudentT::new(DVector::zeros(n), spd(n, &entries[2..], 0.5), dofs.0).unwrap();
    LinearModel::new(f, h, q, r, dofs.1, dofs.2, prior).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_density_factors_into_marginal_and_conditional(
        sigma in spd3(), mu in vec3(), x in vec3(), nu in 0.5f64..40.0, n1 in 1usize..3,
    ) {
        let d = StudentT::new(mu, sigma, nu).unwrap();
        let part = BlockPartition::new(n1, 3 - n1);
        let x1 = x.rows(0, n1).into_owned();
        let x2 = x.rows(n1, 3 - n1).into_owned();
        let marginal = d.marginal(&part, Block::Second).unwrap();
        let cond = d.conditional(&part, &x2).unwrap();
        let lhs = d.logpdf(&x).unwrap();
        let rhs = marginal.logpdf(&x2).unwrap() + cond.dist.logpdf(&x1).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        prop_assert!(cond.scale_factor > 0.0);
        prop_assert_eq!(cond.dist.dof(), nu + (3 - n1) as f64);
    }

    #[test]
    fn invertible_transform_rescales_density(
        sigma in spd3(), mu in vec3(), x in vec3(), b in vec3(), nu in 0.5f64..40.0, a in spd3(),
    ) {
        let d = StudentT::new(mu, sigma, nu).unwrap();
        let y = d.linear_transform(&a, &b).unwrap();
        let lhs = y.logpdf(&(&a * &x + &b)).unwrap();
        let rhs = d.logpdf(&x).unwrap() - a.determinant().abs().ln();
        prop_assert!((lhs - rhs).abs() < 1e-7 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn unit_nis_per_dimension_keeps_the_scale(m in 1usize..6, eta in 0.1f64..1e6) {
        prop_assert!((innovation_factor(m as f64, m, eta) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moment_matching_preserves_covariance(nu in 2.05f64..1e4, frac in 0.0f64..1.0) {
        let nu_prime = 2.01 + frac * (nu - 2.01);
        let c = moment_matching_factor(nu, nu_prime).unwrap();
        let before = nu / (nu - 2.0);
        let after = c * nu_prime / (nu_prime - 2.0);
        prop_assert!((before - after).abs() < 1e-9 * before);
        prop_assert!(c <= 1.0 + 1e-12);
    }

    #[test]
    fn t_filter_update_invariants(
        entries in prop::collection::vec(-1.0f64..1.0, 16), ys in prop::collection::vec(-20.0f64..20.0, 2 * 6),
        eta0 in 1.0f64..30.0, gamma in 1.0f64..30.0, delta in 1.0f64..30.0,
    ) {
        let model = random_model(3, 2, &entries, (eta0, gamma, delta));
        let ys: Vec<DVector<f64>> = ys.chunks(2).map(DVector::from_column_slice).collect();
        for strategy in [ApproximationStrategy::Conservative, ApproximationStrategy::MomentMatched] {
            let Ok(run) = tf_run(&model, &ys, &strategy) else {
                // Moment matching is undefined for dofs at or below 2.
                prop_assert!(matches!(strategy, ApproximationStrategy::MomentMatched));
                continue;
            };
            for r in &run.records {
                let d = &r.diagnostics;
                let p = &r.filtered.p;
                prop_assert!((p - p.transpose()).amax() <= 1e-12 * p.amax().max(1.0));
                prop_assert!(p.symmetric_eigenvalues().min() >= -1e-9 * p.amax());
                prop_assert_eq!(d.eta_dprime, d.eta_prime.min(delta));
                prop_assert_eq!(r.filtered.eta, d.eta_dprime + 2.0);
                prop_assert!((d.d_factor() - (d.eta_dprime + d.nis) / (d.eta_dprime + 2.0)).abs() < 1e-12);
                prop_assert!(d.nis >= 0.0);
            }
        }
    }

    #[test]
    fn large_dofs_reduce_to_the_kalman_filter(
        entries in prop::collection::vec(-1.0f64..1.0, 16), ys in prop::collection::vec(-5.0f64..5.0, 2 * 8),
    ) {
        let model = random_model(3, 2, &entries, (1e9, 1e9, 1e9));
        let ys: Vec<DVector<f64>> = ys.chunks(2).map(DVector::from_column_slice).collect();
        let t = tf_run(&model, &ys, &ApproximationStrategy::Conservative).unwrap();
        let kf = kf_run(&model, &ys, &KfOptions::default()).unwrap();
        let ts = ts_smooth(&t, &model).unwrap();
        let rts = rts_smooth(&kf, &model).unwrap();
        for (a, b) in t.filtered().iter().zip(kf.filtered()) {
            prop_assert!((&a.xhat - &b.xhat).amax() < 1e-5 && (&a.p - &b.p).amax() < 1e-5);
        }
        for (a, b) in ts.iter().zip(&rts) {
            prop_assert!((&a.xhat - &b.xhat).amax() < 1e-5 && (&a.p - &b.p).amax() < 1e-5);
        }
    }

    #[test]
    fn rts_variance_never_exceeds_the_filter(
        q in 0.01f64..5.0, r in 0.01f64..5.0, ys in prop::collection::vec(-20.0f64..20.0, 1..30),
    ) {
        let model = LinearModel::scalar_random_walk(q, r, 1e6, 1e6, StudentT::scalar(0.0, 1.0, 1e6).unwrap()).unwrap();
        let ys: Vec<DVector<f64>> = ys.iter().map(|y| DVector::from_element(1, *y)).collect();
        let kf = kf_run(&model, &ys, &KfOptions::default()).unwrap();
        let sm = rts_smooth(&kf, &model).unwrap();
        for (s, f) in sm.iter().zip(kf.filtered()) {
            prop_assert!(s.p.trace() <= f.p.trace() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn smoother_ends_at_the_filter_and_shrinks_unless_a_later_step_inflated(
        entries in prop::collection::vec(-1.0f64..1.0, 16), ys in prop::collection::vec(-5.0f64..5.0, 2 * 8), nu in 3.0f64..20.0,
    ) {
        let model = random_model(3, 2, &entries, (nu, nu, nu));
        let ys: Vec<DVector<f64>> = ys.chunks(2).map(DVector::from_column_slice).collect();
        let run = tf_run(&model, &ys, &ApproximationStrategy::Conservative).unwrap();
        let sm = ts_smooth(&run, &model).unwrap();
        let filtered = run.filtered();
        prop_assert_eq!(&sm.last().unwrap().xhat, &filtered.last().unwrap().xhat);
        // A large innovation can push P_k+1|L above P_k+1|k, and the backward pass carries that along.
        let psd = |a: &DMatrix<f64>| a.symmetric_eigenvalues().min() >= -1e-9 * a.amax().max(1e-300);
        for (k, rec) in run.records.iter().enumerate() {
            if psd(&(&rec.predicted.p - &sm[k + 1].p)) {
                prop_assert!(psd(&(&rec.p_prime_prev - &sm[k].p)), "step {}", k);
            }
        }
    }

    #[test]
    fn measurement_update_is_invariant_to_measurement_scaling(
        p in 0.1f64..10.0, r in 0.1f64..10.0, y in -10.0f64..10.0, eta in 1.0f64..20.0, scale in 0.1f64..10.0,
    ) {
        // Rescaling y, H and R together leaves the posterior unchanged.
        let prior = StudentT::scalar(0.0, p, eta).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let base = LinearModel::new(one.clone(), one.clone(), one.clone(), one.clone() * r, eta, eta, prior.clone()).unwrap();
        let scaled = LinearModel::new(one.clone(), one.clone() * scale, one.clone(), one * (r * scale * scale), eta, eta, prior).unwrap();
        let b = TBelief::new(DVector::zeros(1), DMatrix::from_element(1, 1, p), eta);
        let s = ApproximationStrategy::Conservative;
        let (a, _) = tf_measurement_update(&b, &DVector::from_element(1, y), &base, &s, 1).unwrap();
        let (c, _) = tf_measurement_update(&b, &DVector::from_element(1, y * scale), &scaled, &s, 1).unwrap();
        prop_assert!((a.xhat[0] - c.xhat[0]).abs() < 1e-9 * a.xhat[0].abs().max(1.0));
        prop_assert!((a.p[(0, 0)] - c.p[(0, 0)]).abs() < 1e-9 * a.p[(0, 0)]);
    }

    #[test]
    fn table_lookup_stays_between_corners(c_hi in 0.5f64..1.0, c_lo in 0.3f64..1.0, nu in 3.0f64..1e6) {
        let table = ScaleFactorTable::new(vec![
            ScaleFactorEntry { n: 2, nu: 5.0, nu_prime: 3.0, c: c_lo },
            ScaleFactorEntry { n: 2, nu: 1e6, nu_prime: 3.0, c: c_hi },
        ]).unwrap();
        let nu = nu.max(5.0);
        let c = table.lookup(2, nu, 3.0).unwrap();
        prop_assert!(c >= c_lo.min(c_hi) - 1e-12 && c <= c_lo.max(c_hi) + 1e-12);
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = ScaleFactorTable::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.entries(), table.entries());
    }

    #[test]
    fn sign_test_p_value_is_a_probability(a in prop::collection::vec(0.0f64..1.0, 1..60), shift in -0.5f64..0.5) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + shift * ((i % 3) as f64 - 0.5)).collect();
        let (wins, n, p) = sign_test(&a, &b).unwrap();
        prop_assert!(wins <= n && n <= a.len());
        prop_assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn rmse_is_zero_only_for_exact_estimates(offsets in prop::collection::vec(-2.0f64..2.0, 151)) {
        let truth: Vec<[f64; 2]> = (0..151).map(|k| [k as f64, -(k as f64)]).collect();
        let est: Vec<[f64; 2]> = truth.iter().zip(&offsets).map(|(p, o)| [p[0] + o, p[1]]).collect();
        let e = position_rmse(&truth, &est).unwrap();
        let expected = (offsets[5..].iter().map(|o| o * o).sum::<f64>() / 145.0).sqrt();
        prop_assert!((e - expected).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn kde_integrates_to_one(values in prop::collection::vec(-50.0f64..50.0, 2..200)) {
        prop_assume!(values.iter().any(|v| *v != values[0]));
        let k = kde(&values, None).unwrap();
        prop_assert!((k.integral() - 1.0).abs() < 1e-3);
        prop_assert!(k.grid.len() >= 512 && k.grid.len() <= 20_000);
    }

    #[test]
    fn grid_recursion_stays_normalized(nu in 1.0f64..30.0, y in -5.0f64..5.0, scale in 0.2f64..3.0) {
        let spec = GridSpec::new(-300.0, 300.0, 3001).unwrap();
        let noise = StudentT::scalar(0.0, scale, nu).unwrap();
        let kernel = TransitionKernel::additive(spec, 1.0, &noise).unwrap();
        let prior = GridDensity::from_density(spec, &StudentT::scalar(0.0, 1.0, nu).unwrap()).unwrap();
        let pred = grid_predict(&prior, &kernel).unwrap();
        let mut z = DVector::zeros(1);
        let (post, evidence) = grid_update(&pred, |x| {
            z[0] = y - x;
            noise.logpdf(&z).unwrap().exp()
        }).unwrap();
        prop_assert!(evidence > 0.0);
        for d in [&pred, &post] {
            prop_assert!((d.mass() - 1.0).abs() < 1e-9);
        }
        let sm = grid_smooth(&[prior, post.clone()], &[pred], &kernel).unwrap();
        prop_assert!((sm[0].mass() - 1.0).abs() < 1e-6);
        prop_assert_eq!(sm[1].pdf(), post.pdf());
    }

    #[test]
    fn simulations_repeat_per_seed(seed in any::<u64>()) {
        let s = DroneScenario::default();
        let a = simulate_drone(&s, seed).unwrap();
        prop_assert_eq!(&a, &simulate_drone(&s, seed).unwrap());
        for x in &a.states {
            prop_assert!(x[2].hypot(x[3]) <= s.speed_cap);
            prop_assert!((0.0..=s.yard).contains(&x[0]) && (0.0..=s.yard).contains(&x[1]));
        }
        let c = ScalarWalkConfig { seed, ..Default::default() };
        prop_assert_eq!(simulate_scalar_walk(&c).unwrap(), simulate_scalar_walk(&c).unwrap());
    }
}

#[test]
fn kld_strategy_uses_the_table() {
    let table = Arc::new(ScaleFactorTable::new(vec![ScaleFactorEntry { n: 1, nu: 4.0, nu_prime: 3.0, c: 0.5 }]).unwrap());
    let s = ApproximationStrategy::KldScaled(table);
    assert_eq!(s.factor(1, 4.0, 3.0).unwrap(), 0.5);
    assert_eq!(s.factor(1, 3.0, 3.0).unwrap(), 1.0);
    assert!(s.factor(2, 4.0, 3.0).is_err());
}
