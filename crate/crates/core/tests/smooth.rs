use afpca::quadrature::linspace;
use afpca::simulate::{ise, TruthSpec};
use afpca::smooth::{fit_smooth, signed_tuning, update_lambda, update_lambda_scalar, update_sigma2, SmoothConfig};
use afpca::TuningMode;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn fit(t: &[f64], y: &[f64], dim: usize, mode: TuningMode) -> afpca::SmoothFit {
    fit_smooth(t, y, &SmoothConfig { dim, mode, ..Default::default() }).unwrap()
}

#[test]
fn adaptive_beats_baseline_on_flat_then_oscillating_curve() {
    let truth = TruthSpec::piecewise();
    let t = linspace(0.0, 1.0, 100);
    let mu: Vec<f64> = t.iter().map(|&x| truth.mean(x)).collect();
    let fine = linspace(0.0, 1.0, 1001);
    let mu_fine: Vec<f64> = fine.iter().map(|&x| truth.mean(x)).collect();
    let noise = Normal::new(0.0, 0.1f64.sqrt()).unwrap();
    let mut wins = 0;
    for rep in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let y: Vec<f64> = mu.iter().map(|m| m + noise.sample(&mut rng)).collect();
        let a = fit(&t, &y, 40, TuningMode::Adaptive).predict(&fine).unwrap();
        let b = fit(&t, &y, 40, TuningMode::Baseline).predict(&fine).unwrap();
        if ise(&a, &mu_fine, &fine).unwrap() < ise(&b, &mu_fine, &fine).unwrap() {
            wins += 1;
        }
    }
    assert!(wins >= 80, "adaptive won {wins} of 100");
}

fn coefficients(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-5.0..5.0f64, Just(0.0)], p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adaptive_tuning_is_positive_and_unpenalized_on_null_space(beta in coefficients(12)) {
        let lambda = update_lambda(&DVector::from_vec(beta.clone()), 1e-6);
        prop_assert_eq!(lambda[0], 0.0);
        prop_assert_eq!(lambda[1], 0.0);
        for p in 2..12 {
            prop_assert!(lambda[p] > 0.0 && lambda[p].is_finite());
            prop_assert!(lambda[p] <= 1e12 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn baseline_tuning_is_a_single_positive_value(beta in coefficients(10)) {
        let lambda = update_lambda_scalar(&DVector::from_vec(beta), 1e-6);
        prop_assert!(lambda[2] > 0.0 && lambda[2].is_finite());
        for p in 3..10 {
            prop_assert_eq!(lambda[p], lambda[2]);
        }
    }

    #[test]
    fn signed_tuning_carries_coefficient_sign(beta in coefficients(8)) {
        let beta = DVector::from_vec(beta);
        let lambda = update_lambda(&beta, 1e-6);
        let signed = signed_tuning(&beta, &lambda);
        for p in 0..8 {
            prop_assert!((signed[p] * signed[p] - lambda[p]).abs() <= 1e-9 * lambda[p].max(1.0));
            if beta[p] != 0.0 && lambda[p] > 0.0 {
                prop_assert_eq!(signed[p].signum(), beta[p].signum());
            }
        }
    }

    #[test]
    fn sigma2_is_mean_square(r in prop::collection::vec(-10.0..10.0f64, 1..50)) {
        let s = update_sigma2(&r).unwrap();
        let expected = r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
        prop_assert!((s - expected).abs() <= 1e-12 * expected.max(1.0));
        prop_assert!(s >= 0.0);
    }

    #[test]
    fn smoother_reproduces_lines(a in -10.0..10.0f64, b in -10.0..10.0f64, dim in 6usize..16) {
        let t = linspace(0.0, 1.0, 60);
        let y: Vec<f64> = t.iter().map(|&x| a + b * x).collect();
        let f = fit(&t, &y, dim, TuningMode::Adaptive);
        for (u, v) in f.fitted.iter().zip(&y) {
            prop_assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_variance_and_objective_trace_are_sane(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let t = linspace(0.0, 1.0, 80);
        let y: Vec<f64> = t.iter().map(|&x| (7.0 * x).cos() + noise.sample(&mut rng)).collect();
        let f = fit(&t, &y, 15, TuningMode::Adaptive);
        prop_assert!(f.sigma2 > 0.0 && f.sigma2.is_finite());
        prop_assert!(f.objective_trace.iter().all(|v| v.is_finite()));
        prop_assert_eq!(f.objective_trace.len(), f.n_iter);
        prop_assert_eq!(f.beta.len(), 15);
    }
}
