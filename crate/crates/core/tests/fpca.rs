use afpca::basis::{make_knots, wand_transform, TransformedBasis};
use afpca::fpca::{
    blup_scores, fit_afpca, fpca_objective, initialize, orthogonalize, reconstruct, truncate_pve,
    update_coefficients, update_sigma2_fpca, update_tuning, Design, FpcaConfig, FunctionalDataset,
    QuadratureGrid, Subject, QUAD_POINTS,
};
use afpca::quadrature::linspace;
use afpca::TuningMode;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn basis(p: usize) -> TransformedBasis {
    wand_transform(&make_knots((0.0, 1.0), p).unwrap()).unwrap()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Three subjects on different 7-point grids.
fn tiny_dataset(rng: &mut ChaCha8Rng) -> FunctionalDataset {
    let subjects = (0..3)
        .map(|i| {
            let mut t: Vec<f64> = (0..7).map(|j| (j as f64 + 0.3 * i as f64) / 7.0).collect();
            t[0] = 0.0;
            let y = t.iter().map(|&x| (3.0 * x).sin() + 0.5 * i as f64 * x + 0.1 * normal(rng)).collect();
            Subject::new(format!("s{i}"), t, y)
        })
        .collect();
    FunctionalDataset::with_domain(subjects, (0.0, 1.0)).unwrap()
}

fn random_blocks(rng: &mut ChaCha8Rng, k: usize, p: usize) -> Vec<DVector<f64>> {
    (0..=k)
        .map(|_| DVector::from_fn(p, |q, _| if q < 2 { 0.0 } else { rng.random_range(0.1..3.0) }))
        .collect()
}

fn stack(beta_mu: &DVector<f64>, beta_phi: &DMatrix<f64>) -> DVector<f64> {
    let mut v: Vec<f64> = beta_mu.iter().copied().collect();
    v.extend(beta_phi.iter().copied());
    DVector::from_vec(v)
}

fn unstack(b: &DVector<f64>, p: usize) -> (DVector<f64>, DMatrix<f64>) {
    let k = b.len() / p - 1;
    (b.rows(0, p).into_owned(), DMatrix::from_column_slice(p, k, &b.as_slice()[p..]))
}

#[test]
fn mean_only_solve_is_pooled_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = tiny_dataset(&mut rng);
    let tb = basis(6);
    let design = Design::new(&data, &tb).unwrap();
    let scores = DMatrix::zeros(3, 0);
    let (beta_mu, beta_phi) = update_coefficients(&design, &scores, &[DVector::zeros(6)], 0.0).unwrap();
    assert_eq!(beta_phi.ncols(), 0);
    let t: Vec<f64> = data.subjects().iter().flat_map(|s| s.t.clone()).collect();
    let y: Vec<f64> = data.subjects().iter().flat_map(|s| s.y.clone()).collect();
    let w = tb.eval(&t, 0).unwrap().values;
    let ols = (w.transpose() * &w).lu().solve(&(w.transpose() * DVector::from_vec(y))).unwrap();
    assert!((beta_mu - ols).amax() < 1e-10);
}

#[test]
fn accumulated_normal_equations_match_kronecker_assembly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = tiny_dataset(&mut rng);
    let tb = basis(6);
    let design = Design::new(&data, &tb).unwrap();
    let scores = DMatrix::from_fn(3, 1, |_, _| normal(&mut rng));
    let lambda = random_blocks(&mut rng, 1, 6);
    let sigma2 = 0.3;
    let (beta_mu, beta_phi) = update_coefficients(&design, &scores, &lambda, sigma2).unwrap();

    let mut h = DMatrix::zeros(12, 12);
    let mut rhs = DVector::zeros(12);
    for (i, s) in data.subjects().iter().enumerate() {
        let w = tb.eval(&s.t, 0).unwrap().values;
        let theta = DMatrix::from_row_slice(1, 2, &[1.0, scores[(i, 0)]]);
        let big = theta.kronecker(&w);
        h += big.transpose() * &big;
        rhs += big.transpose() * DVector::from_column_slice(&s.y);
    }
    for (b, block) in lambda.iter().enumerate() {
        for q in 0..6 {
            h[(b * 6 + q, b * 6 + q)] += sigma2 * block[q];
        }
    }
    let direct = h.lu().solve(&rhs).unwrap();
    assert!((stack(&beta_mu, &beta_phi) - direct).amax() < 1e-10);
}

#[test]
fn coefficient_solution_zeroes_objective_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = tiny_dataset(&mut rng);
    let tb = basis(6);
    let design = Design::new(&data, &tb).unwrap();
    for k in [1usize, 2] {
        let scores = DMatrix::from_fn(3, k, |_, _| normal(&mut rng));
        let lambda = random_blocks(&mut rng, k, 6);
        let sigma2 = 0.5;
        let (beta_mu, beta_phi) = update_coefficients(&design, &scores, &lambda, sigma2).unwrap();
        let b = stack(&beta_mu, &beta_phi);
        let f = |v: &DVector<f64>| {
            let (m, phi) = unstack(v, 6);
            fpca_objective(&design, &m, &phi, &scores, &lambda, sigma2)
        };
        let h = 1e-3;
        for j in 0..b.len() {
            let mut up = b.clone();
            up[j] += h;
            let mut down = b.clone();
            down[j] -= h;
            let g = (f(&up) - f(&down)) / (2.0 * h);
            assert!(g.abs() < 1e-8, "K={k}, coordinate {j}: gradient {g}");
        }
    }
}

#[test]
fn blup_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let phi = DMatrix::from_fn(12, 2, |_, _| normal(&mut rng));
    let zero = blup_scores(&phi, &DVector::zeros(12), 0.2).unwrap();
    assert_eq!(zero.amax(), 0.0);
    let r = DVector::from_fn(12, |_, _| normal(&mut rng));
    assert!(blup_scores(&phi, &r, 1e8).unwrap().norm() < 1e-4);
}

#[test]
fn blup_matches_numerical_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let phi = DMatrix::from_fn(10, 2, |_, _| normal(&mut rng));
    let r = DVector::from_fn(10, |_, _| normal(&mut rng));
    let sigma2 = 0.4;
    let xi = blup_scores(&phi, &r, sigma2).unwrap();
    let f = |x: &DVector<f64>| (&r - &phi * x).norm_squared() / (2.0 * sigma2) + 0.5 * x.norm_squared();
    let grad = |x: &DVector<f64>| {
        let h = 1e-4;
        DVector::from_fn(x.len(), |j, _| {
            let mut up = x.clone();
            up[j] += h;
            let mut down = x.clone();
            down[j] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
    };
    let lipschitz = (phi.transpose() * &phi).norm() / sigma2 + 1.0;
    let mut x = DVector::zeros(2);
    for _ in 0..20_000 {
        let g = grad(&x);
        if g.amax() < 1e-12 {
            break;
        }
        x -= g / lipschitz;
    }
    assert!((&x - &xi).amax() < 1e-6, "{x} vs {xi}");
    assert!(grad(&xi).amax() < 1e-8);
}

#[test]
fn shrinkage_is_monotone_in_sigma2() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let phi = DMatrix::from_fn(15, 3, |_, _| normal(&mut rng));
        let r = DVector::from_fn(15, |_, _| normal(&mut rng));
        let s2 = rng.random_range(0.05..2.0);
        let big = blup_scores(&phi, &r, s2).unwrap().norm();
        let small = blup_scores(&phi, &r, s2 / 10.0).unwrap().norm();
        assert!(big <= small + 1e-12);
    }
}

#[test]
fn tuning_update_examples() {
    let p = 10;
    let mut beta_mu = DVector::from_element(p, 0.5);
    beta_mu[0] = 3.0;
    beta_mu[1] = -7.0;
    let beta_phi = DMatrix::from_element(p, 1, 1e-9);
    let (mu, phi) = update_tuning(&beta_mu, &beta_phi, 1e-6, TuningMode::Adaptive);
    assert_eq!((mu[0], mu[1]), (0.0, 0.0));
    assert!(mu.iter().skip(2).all(|v| (v - 4.0).abs() < 1e-12));
    assert!(phi[0].iter().skip(2).all(|v| (v - 1e12).abs() < 1.0));
    let (mu_b, _) = update_tuning(&beta_mu, &beta_phi, 1e-6, TuningMode::Baseline);
    assert!(mu_b.iter().skip(2).all(|v| (v - 4.0).abs() < 1e-9));
}

#[test]
fn pooled_sigma2() {
    let subjects = vec![
        Subject::new("a", vec![0.0, 0.3, 0.6, 1.0], vec![1.0; 4]),
        Subject::new("b", vec![0.0, 0.3, 0.6, 1.0], vec![1.0; 4]),
    ];
    let data = FunctionalDataset::new(subjects).unwrap();
    let tb = basis(6);
    let design = Design::new(&data, &tb).unwrap();
    let none = DMatrix::zeros(2, 0);
    let zero_phi = DMatrix::zeros(6, 0);
    assert_eq!(update_sigma2_fpca(&design, &DVector::zeros(6), &zero_phi, &none).unwrap(), 1.0);
    // the first basis column is constant 1/sqrt(P) at every abscissa
    let mut exact = DVector::zeros(6);
    exact[0] = 6f64.sqrt();
    assert!(update_sigma2_fpca(&design, &exact, &zero_phi, &none).unwrap() < 1e-28);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = tiny_dataset(&mut rng);
    let design = Design::new(&data, &tb).unwrap();
    let beta_mu = DVector::from_fn(6, |_, _| normal(&mut rng));
    let beta_phi = DMatrix::from_fn(6, 2, |_, _| normal(&mut rng));
    let scores = DMatrix::from_fn(3, 2, |_, _| normal(&mut rng));
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, s) in data.subjects().iter().enumerate() {
        for (&t, &y) in s.t.iter().zip(&s.y) {
            let w = tb.eval(&[t], 0).unwrap().values;
            let mut f = (&w * &beta_mu)[0];
            for k in 0..2 {
                f += scores[(i, k)] * (&w * beta_phi.column(k))[0];
            }
            total += (y - f).powi(2);
            count += 1;
        }
    }
    let got = update_sigma2_fpca(&design, &beta_mu, &beta_phi, &scores).unwrap();
    assert!((got - total / count as f64).abs() < 1e-12);
}

fn surfaces(beta_phi: &DMatrix<f64>, scores: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    w * beta_phi * scores.transpose()
}

#[test]
fn rotation_of_orthonormal_ordered_state_is_identity_up_to_sign() {
    let tb = basis(12);
    let quad = QuadratureGrid::new(&tb, QUAD_POINTS).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let start = DMatrix::from_fn(12, 2, |_, _| normal(&mut rng));
    let scores = DMatrix::from_fn(30, 2, |_, _| normal(&mut rng));
    let once = orthogonalize(&start, &scores, &quad).unwrap();
    let twice = orthogonalize(&once.beta_phi, &once.scores, &quad).unwrap();
    let w = tb.eval(&linspace(0.0, 1.0, 50), 0).unwrap().values;
    let a = surfaces(&once.beta_phi, &once.scores, &w);
    let b = surfaces(&twice.beta_phi, &twice.scores, &w);
    assert!((a - b).amax() < 1e-12);
    for k in 0..2 {
        let d1 = (once.beta_phi.column(k) - twice.beta_phi.column(k)).amax();
        let d2 = (once.beta_phi.column(k) + twice.beta_phi.column(k)).amax();
        assert!(d1.min(d2) < 1e-10);
    }
}

#[test]
fn rotation_makes_components_orthonormal_and_ordered() {
    let tb = basis(10);
    let quad = QuadratureGrid::new(&tb, QUAD_POINTS).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let obs = tb.eval(&linspace(0.0, 1.0, 37), 0).unwrap().values;
    for _ in 0..100 {
        let k = rng.random_range(1..=4);
        let beta_phi = DMatrix::from_fn(10, k, |_, _| normal(&mut rng));
        let scores = DMatrix::from_fn(25, k, |_, _| 3.0 * normal(&mut rng));
        let rot = orthogonalize(&beta_phi, &scores, &quad).unwrap();
        let gram = quad.function_gram(&rot.beta_phi);
        assert!((gram - DMatrix::identity(k, k)).amax() < 1e-8);
        let before = surfaces(&beta_phi, &scores, &obs);
        let after = surfaces(&rot.beta_phi, &rot.scores, &obs);
        assert!((before - after).amax() < 1e-8);
        assert!(rot.variances.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let values = &quad.values * &rot.beta_phi;
        for c in values.column_iter() {
            let (imax, _) = c.iter().enumerate().fold((0, 0.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
            assert!(c[imax] > 0.0);
        }
    }
}

#[test]
fn pve_truncation_examples() {
    let mut ev = vec![4.0, 1.0];
    ev.extend(std::iter::repeat_n(1e-6, 13));
    assert_eq!(truncate_pve(&ev, 0.99), 2);
    assert_eq!(truncate_pve(&ev, 1.0), 15);
    let mut one = vec![10.0];
    one.extend(std::iter::repeat_n(0.0, 14));
    for pve in [0.5, 0.99, 1.0 - 1e-12] {
        assert_eq!(truncate_pve(&one, pve), 1);
    }
    assert_eq!(truncate_pve(&[0.0, 0.0], 0.9), 1);
}

fn rank_one(n: usize) -> (FunctionalDataset, Vec<Vec<f64>>) {
    let t = linspace(0.0, 1.0, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut clean = Vec::new();
    let subjects = (0..n)
        .map(|i| {
            let xi = 2.0 * normal(&mut rng);
            let y: Vec<f64> =
                t.iter().map(|&x| (2.0 * x).cos() + xi * 2f64.sqrt() * (std::f64::consts::PI * x).sin()).collect();
            clean.push(y.clone());
            Subject::new(format!("{i}"), t.clone(), y)
        })
        .collect();
    (FunctionalDataset::new(subjects).unwrap(), clean)
}

#[test]
fn initial_state_examples() {
    let (data, _) = rank_one(20);
    let tb = basis(12);
    let quad = QuadratureGrid::new(&tb, QUAD_POINTS).unwrap();
    let design = Design::new(&data, &tb).unwrap();
    let state = initialize(&design, &quad, 5, 1).unwrap();
    let total: f64 = state.variances.iter().sum();
    assert!(state.variances[0] / total > 0.99);
    assert!(state.lambda_mu.iter().all(|v| *v == 0.0));

    let zero = initialize(&design, &quad, 0, 1).unwrap();
    let (ols, _) = update_coefficients(&design, &DMatrix::zeros(20, 0), &[DVector::zeros(12)], 0.0).unwrap();
    assert!((zero.beta_mu - ols).amax() < 1e-10);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let irregular: Vec<Subject> = (0..8)
        .map(|i| {
            let mut t: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
            t.sort_by(f64::total_cmp);
            let y = t.iter().map(|&x| x.sin() * i as f64).collect();
            Subject::new(format!("{i}"), t, y)
        })
        .collect();
    let data = FunctionalDataset::new(irregular).unwrap();
    let tb = wand_transform(&make_knots(data.domain(), 8).unwrap()).unwrap();
    let quad = QuadratureGrid::new(&tb, QUAD_POINTS).unwrap();
    let design = Design::new(&data, &tb).unwrap();
    assert!(!design.is_common_grid());
    let a = initialize(&design, &quad, 3, 99).unwrap();
    let b = initialize(&design, &quad, 3, 99).unwrap();
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.beta_phi, b.beta_phi);
    assert_eq!(a.sigma2.to_bits(), b.sigma2.to_bits());
}

#[test]
fn noise_free_rank_one_data_is_recovered() {
    let (data, clean) = rank_one(20);
    let model = fit_afpca(&data, &FpcaConfig { dim: 20, k_init: 5, ..Default::default() }).unwrap();
    assert!(model.n_components() >= 1);
    assert!(model.pve_cum[0] > 0.999);
    let grid = &data.subjects()[0].t;
    for (i, x) in clean.iter().enumerate() {
        let rec = reconstruct(&model, i, grid).unwrap();
        let sq: Vec<f64> = rec.values.iter().zip(x).map(|(a, b)| (a - b).powi(2)).collect();
        let ise = afpca::quadrature::trapezoid(grid, &sq);
        assert!(ise < 1e-4, "subject {i}: {ise}");
    }
}

fn noisy_dataset(seed: u64, n: usize) -> FunctionalDataset {
    let t = linspace(0.0, 1.0, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let subjects = (0..n)
        .map(|i| {
            let a = 2.0 * normal(&mut rng);
            let b = normal(&mut rng);
            let y = t
                .iter()
                .map(|&x| {
                    x + a * (std::f64::consts::PI * x).sin() + b * (3.0 * x).cos() + noise.sample(&mut rng)
                })
                .collect();
            Subject::new(format!("{i}"), t.clone(), y)
        })
        .collect();
    FunctionalDataset::new(subjects).unwrap()
}

#[test]
fn fitted_model_invariants() {
    let data = noisy_dataset(12, 30);
    let config = FpcaConfig { dim: 15, k_init: 6, pve: 0.999, ..Default::default() };
    let model = fit_afpca(&data, &config).unwrap();
    let quad = QuadratureGrid::new(&model.basis, QUAD_POINTS).unwrap();
    let k = model.n_components();
    assert!(k >= 1);
    assert!((quad.function_gram(&model.beta_phi) - DMatrix::identity(k, k)).amax() < 1e-6);
    assert!(model.eigenvalues.as_slice().windows(2).all(|w| w[0] >= w[1]));
    assert!(model.pve_cum.as_slice().windows(2).all(|w| w[0] <= w[1]));
    assert!(model.pve_cum[k - 1] <= 1.0);
    assert!(model.objective_trace.iter().all(|v| v.is_finite()));
    assert_eq!(model.n_iter, model.objective_trace.len());
    for l in std::iter::once(&model.lambda_mu).chain(&model.lambda_phi) {
        assert_eq!((l[0], l[1]), (0.0, 0.0));
    }
    let values = model.fpc_values(&quad.grid).unwrap();
    for c in values.column_iter() {
        let m = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(c.iter().any(|&v| v == m));
    }
    for l in model.lambda_mu_of_t(&linspace(0.0, 1.0, 200)).unwrap().into_iter().flatten() {
        assert!(l >= 0.0);
    }
}

#[test]
fn reconstruction_examples() {
    let data = noisy_dataset(13, 12);
    let model = fit_afpca(&data, &FpcaConfig { dim: 10, k_init: 3, pve: 1.0, ..Default::default() }).unwrap();
    let k = model.n_components();
    let grid = linspace(0.0, 1.0, 40);
    let mu = model.mean_values(&grid).unwrap();
    assert_eq!(model.curve(&vec![0.0; k], &grid).unwrap(), mu);

    let s = &data.subjects()[3];
    let rec = reconstruct(&model, 3, &s.t).unwrap();
    let w = model.basis.eval(&s.t, 0).unwrap().values;
    let theta: Vec<f64> = std::iter::once(1.0).chain(model.scores.row(3).iter().copied()).collect();
    let big = DMatrix::from_row_slice(1, k + 1, &theta).kronecker(&w);
    let coef = DVector::from_iterator(
        (k + 1) * model.basis.dim(),
        model.beta_mu.iter().chain(model.beta_phi.iter()).copied(),
    );
    let direct = big * coef;
    for (a, b) in rec.values.iter().zip(direct.iter()) {
        assert!((a - b).abs() < 1e-10);
    }

    let xi: Vec<f64> = model.scores.row(5).iter().copied().collect();
    let xi2: Vec<f64> = xi.iter().map(|v| 2.0 * v).collect();
    let one = model.curve(&xi, &grid).unwrap();
    let two = model.curve(&xi2, &grid).unwrap();
    for j in 0..grid.len() {
        assert!(((two[j] - mu[j]) - 2.0 * (one[j] - mu[j])).abs() < 1e-10);
    }
    assert!(reconstruct(&model, 0, &[1.5]).is_err());
}

#[test]
fn fitting_is_deterministic() {
    let data = noisy_dataset(14, 15);
    let config = FpcaConfig { dim: 12, k_init: 4, seed: 3, ..Default::default() };
    let a = fit_afpca(&data, &config).unwrap();
    let b = fit_afpca(&data, &config).unwrap();
    assert_eq!(a.beta_mu, b.beta_mu);
    assert_eq!(a.beta_phi, b.beta_phi);
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.sigma2.to_bits(), b.sigma2.to_bits());
    assert_eq!(a.objective_trace, b.objective_trace);
}

#[test]
fn flat_data_gives_mean_only_model() {
    let t = linspace(0.0, 1.0, 20);
    let subjects = (0..4).map(|i| Subject::new(format!("{i}"), t.clone(), vec![2.5; 20])).collect();
    let data = FunctionalDataset::new(subjects).unwrap();
    let model = fit_afpca(&data, &FpcaConfig { dim: 8, k_init: 2, ..Default::default() }).unwrap();
    assert_eq!(model.n_components(), 0);
    assert!(!model.warnings.is_empty());
    for v in model.mean_values(&t).unwrap() {
        assert!((v - 2.5).abs() < 1e-10);
    }
}

#[test]
fn component_count_is_capped_by_subjects() {
    let data = noisy_dataset(15, 4);
    let model = fit_afpca(&data, &FpcaConfig { dim: 10, k_init: 8, ..Default::default() }).unwrap();
    assert_eq!(model.k_init, 3);
    assert!(model.warnings.iter().any(|w| w.contains("K_init")));
}

#[test]
fn invalid_configurations_are_rejected() {
    let data = noisy_dataset(16, 5);
    for bad in [
        FpcaConfig { dim: 10, k_init: 0, ..Default::default() },
        FpcaConfig { dim: 10, k_init: 10, ..Default::default() },
        FpcaConfig { dim: 10, k_init: 2, pve: 0.0, ..Default::default() },
        FpcaConfig { dim: 10, k_init: 2, pve: 1.5, ..Default::default() },
        FpcaConfig { dim: 5, k_init: 2, ..Default::default() },
    ] {
        assert!(fit_afpca(&data, &bad).is_err());
    }
    assert!(FunctionalDataset::new(vec![Subject::new("a", vec![0.0, 1.0], vec![1.0, 2.0])]).is_err());
}

/// One extra iteration after convergence, compared through fitted means and
/// surfaces, for a converged run at `tol`.
fn extra_iteration_change(tol: f64) -> Option<f64> {
    let data = noisy_dataset(17, 20);
    let base = FpcaConfig { dim: 12, k_init: 3, pve: 1.0, tol, max_iter: 2000, ..Default::default() };
    let a = fit_afpca(&data, &base).unwrap();
    if !a.converged {
        return None;
    }
    let b = fit_afpca(&data, &FpcaConfig { tol: 1e-300, max_iter: a.n_iter + 1, ..base }).unwrap();
    assert_eq!(b.n_iter, a.n_iter + 1);
    let grid = linspace(0.0, 1.0, 50);
    let w = a.basis.eval(&grid, 0).unwrap().values;
    let dm = (&w * (&a.beta_mu - &b.beta_mu)).amax();
    let ds = (surfaces(&a.beta_phi, &a.scores, &w) - surfaces(&b.beta_phi, &b.scores, &w)).amax();
    Some(dm.max(ds))
}

#[test]
fn converged_fit_is_nearly_a_fixed_point() {
    let coarse = extra_iteration_change(1e-6).expect("converged at 1e-6");
    let fine = extra_iteration_change(1e-10).expect("converged at 1e-10");
    assert!(fine < 1e-2 * coarse.max(1e-12) || fine < 1e-9, "{fine} vs {coarse}");
}

#[test]
fn extra_iteration_moves_fit_less_than_ten_tol() {
    let d = extra_iteration_change(1e-6).expect("converged");
    assert!(d < 1e-5, "{d}");
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pve_truncation_is_minimal_and_monotone(
            mut vals in prop::collection::vec(0.0..10.0f64, 1..12),
            pve in 0.05..0.999f64,
        ) {
            vals.sort_by(|a, b| b.total_cmp(a));
            let total: f64 = vals.iter().sum();
            prop_assume!(total > 0.0);
            let k = truncate_pve(&vals, pve);
            prop_assert!(k >= 1 && k <= vals.len());
            let share = |m: usize| vals[..m].iter().sum::<f64>() / total;
            prop_assert!(share(k) >= pve - 1e-12);
            if k > 1 {
                prop_assert!(share(k - 1) < pve);
            }
            prop_assert!(truncate_pve(&vals, (pve + 0.5 * (1.0 - pve)).min(1.0)) >= k);
        }

        #[test]
        fn rotation_preserves_surface_and_orders_variances(seed in 0u64..10_000, k in 1usize..5, n in 6usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tb = basis(12);
            let quad = QuadratureGrid::new(&tb, QUAD_POINTS).unwrap();
            let beta_phi = DMatrix::from_fn(12, k, |_, _| normal(&mut rng));
            let scores = DMatrix::from_fn(n, k, |_, _| normal(&mut rng));
            let rot = orthogonalize(&beta_phi, &scores, &quad).unwrap();
            let before = &beta_phi * scores.transpose();
            let after = &rot.beta_phi * rot.scores.transpose();
            prop_assert!((before - after).amax() < 1e-8);
            let gram = quad.function_gram(&rot.beta_phi);
            prop_assert!((gram - DMatrix::identity(k, k)).amax() < 1e-6);
            for w in rot.variances.as_slice().windows(2) {
                prop_assert!(w[0] >= w[1] - 1e-12);
            }
            let again = orthogonalize(&rot.beta_phi, &rot.scores, &quad).unwrap();
            prop_assert!((again.beta_phi - &rot.beta_phi).amax() < 1e-6);
        }

        #[test]
        fn blup_is_stationary(seed in 0u64..10_000, k in 1usize..4, sigma2 in 0.01..2.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = DMatrix::from_fn(10, k, |_, _| normal(&mut rng));
            let r = DVector::from_fn(10, |_, _| normal(&mut rng));
            let xi = blup_scores(&phi, &r, sigma2).unwrap();
            let grad = -(phi.transpose() * (&r - &phi * &xi)) / sigma2 + &xi;
            prop_assert!(grad.amax() < 1e-9 * (1.0 + r.amax() / sigma2));
        }
    }
}
