mod common;

use common::{brute_pair_loss, fourier, stream, uniform_dataset};
use covfield::dataset::{FunctionalDataset, NoiseSpec};
use covfield::dnn::{arch_from_theory, init_params, loss_and_gradient, sym_eval, train, ArchRule, MlpField, MlpParams, Regime, TrainConfig};
use covfield::field::{clip, field_difference_sup, ConstantField, CovarianceField, EvalGrid, FnField};
use covfield::loclin::{epanechnikov, local_linear_fit, loclin_field, loclin_fit_at, pseudo_points, LoclinConfig, PseudoPoint};
use covfield::pairloss::{full_pair_loss, permutation_average_loss, split_pair_loss};
use covfield::rng::SeedSpec;
use covfield::spectral::{enumerate_index_set, fit_spectral};
use covfield::synth::{generate_dataset, make_psd_coeffs, SpectralCoefficients, TruthSpec};
use nalgebra::{DMatrix, DVector};

#[test]
fn clip_examples() {
    assert_eq!(clip(5.0, 2.0), 2.0);
    assert_eq!(clip(-0.3, 2.0), -0.3);
    assert_eq!(clip(-7.0, 2.0), -2.0);
}

#[test]
fn sup_difference_examples() {
    let grid = EvalGrid::uniform(33, 1);
    let one = ConstantField::new(1.0, 1);
    let zero = ConstantField::new(0.0, 1);
    assert_eq!(field_difference_sup(&one, &one, &grid), 0.0);
    assert_eq!(field_difference_sup(&one, &zero, &grid), 1.0);
    let psi22 = FnField::new(1, 10.0, |s: &[f64], t: &[f64]| fourier(2, s[0]) * fourier(2, t[0]));
    let mut expected: f64 = 0.0;
    for a in 0..33 {
        for b in 0..33 {
            let (s, t) = (a as f64 / 32.0, b as f64 / 32.0);
            expected = expected.max((fourier(2, s) * fourier(2, t)).abs());
        }
    }
    let got = field_difference_sup(&psi22, &zero, &grid);
    assert!((got - expected).abs() < 1e-12 && (got - 2.0).abs() < 1e-12, "{got}");
}

#[test]
fn pair_loss_examples() {
    let two = FunctionalDataset::new(1, 1, 2, vec![0.2, 0.7], vec![1.0, 2.0]).unwrap();
    assert_eq!(full_pair_loss(&two, &ConstantField::new(0.0, 1)).unwrap().value, 4.0);
    assert_eq!(full_pair_loss(&two, &ConstantField::new(2.0, 1)).unwrap().value, 0.0);
    assert_eq!(split_pair_loss(&two, &ConstantField::new(0.0, 1), &[vec![0, 1]]).unwrap().value, 4.0);

    let three = FunctionalDataset::new(1, 1, 3, vec![0.1, 0.5, 0.9], vec![1.0, -1.0, 2.0]).unwrap();
    let zero = ConstantField::new(0.0, 1);
    let brute = brute_pair_loss(&three, |_, _| 0.0);
    assert_eq!(brute, 3.0);
    let full = full_pair_loss(&three, &zero).unwrap();
    assert_eq!(full.value, brute);
    assert_eq!(full.pair_count, 6);
    let split = split_pair_loss(&three, &zero, &[vec![0, 1, 2]]).unwrap();
    assert_eq!((split.value, split.pair_count), (1.0, 1));
    assert_eq!(permutation_average_loss(&three, &zero).unwrap(), 3.0);
}

#[test]
fn pair_loss_errors() {
    let three = FunctionalDataset::new(1, 1, 3, vec![0.1, 0.5, 0.9], vec![1.0, -1.0, 2.0]).unwrap();
    let zero = ConstantField::new(0.0, 1);
    assert!(split_pair_loss(&three, &zero, &[vec![0, 0, 2]]).is_err());
    assert!(split_pair_loss(&three, &zero, &[vec![0, 1]]).is_err());
    let big = uniform_dataset(1, 7, 1, 3);
    assert!(permutation_average_loss(&big, &zero).unwrap_err().to_string().contains("oracle limited to small m"));
}

#[test]
fn full_loss_matches_double_loop_on_random_data() {
    let data = uniform_dataset(7, 6, 2, 11);
    let f = |s: &[f64], t: &[f64]| (s[0] * t[1] + t[0] * s[1]).sin() + 0.3;
    let field = FnField::new(2, 10.0, f);
    let got = full_pair_loss(&data, &field).unwrap();
    assert_eq!(got.pair_count, 7 * 6 * 5);
    assert!((got.value - brute_pair_loss(&data, f)).abs() < 1e-12);
}

#[test]
fn permutation_average_on_two_subjects_of_four() {
    let data = uniform_dataset(2, 4, 1, 5);
    let f = FnField::new(1, 10.0, |s: &[f64], t: &[f64]| s[0] * t[0] - 0.2);
    let avg = permutation_average_loss(&data, &f).unwrap();
    let mut total = 0.0;
    let perms = permutations(4);
    for p in &perms {
        for q in &perms {
            total += split_pair_loss(&data, &f, &[p.clone(), q.clone()]).unwrap().value;
        }
    }
    let independent = total / (perms.len() * perms.len()) as f64;
    assert!((avg - independent).abs() < 1e-12);
    assert!((avg - full_pair_loss(&data, &f).unwrap().value).abs() < 1e-12);
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn arch_examples() {
    let ones = ArchRule::default();
    assert_eq!(arch_from_theory(100, 10, Regime::Besov { beta_tilde: 1.0 }, &ones), (7, 23));
    let (_, w) = arch_from_theory(100, 10, Regime::TensorSobolev { alpha: 2.0 }, &ones);
    assert_eq!(w, (500f64.powf(0.2)).ceil() as usize);
    assert_eq!(w, 4);
}

#[test]
fn training_loss_matches_pair_loss_module() {
    let data = uniform_dataset(5, 4, 1, 21);
    let params = init_params(2, 6, 1, SeedSpec::new(3));
    let (loss, _) = loss_and_gradient(&params, &data).unwrap();
    let field = MlpField::unclipped(params.clone());
    let reference = full_pair_loss(&data, &field).unwrap().value;
    assert!((loss - reference).abs() < 1e-12);
    let independent = brute_pair_loss(&data, |s, t| sym_eval(&params, s, t));
    assert!((loss - independent).abs() < 1e-12);
}

#[test]
fn single_unit_network_by_hand() {
    let mut p = MlpParams::zeros(1, 1, 1);
    {
        let (w, b) = p.hidden_layer_mut(0);
        w.copy_from_slice(&[1.0, 1.0]);
        b[0] = 0.5;
    }
    p.output_layer_mut().0[0] = 2.0;
    assert_eq!(covfield::dnn::forward(&p, &[0.5, 0.5]), 2.0 * (1.0f64 - 0.5).max(0.0));
}

fn constant_truth() -> TruthSpec {
    TruthSpec::TensorSobolev { coefficients: SpectralCoefficients::from_entries(2.0, 21, &[(1, 1, 1.0)]).unwrap() }
}

/// Mean of `Z_i^2`, the best any estimator can do for a constant truth.
fn empirical_level(data: &FunctionalDataset) -> f64 {
    (0..data.n()).map(|i| data.value(i, 0).powi(2)).sum::<f64>() / data.n() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) }
}

#[test]
fn dnn_recovers_constant_truth() {
    let truth = constant_truth();
    let mut errors = Vec::new();
    for seed in 0..20 {
        let data = generate_dataset(&truth, 50, 5, NoiseSpec::none(), SeedSpec::new(seed)).unwrap();
        let cfg = TrainConfig { epochs: 300, seed: SeedSpec::new(seed + 100), ..TrainConfig::default() };
        let trained = train(&data, (2, 8), &cfg).unwrap();
        let v = trained.field.eval(&[0.5], &[0.5]);
        assert!((v - empirical_level(&data)).abs() <= 0.3, "seed {seed}: {v}");
        assert!(trained.running_min().last().unwrap() <= &trained.initial_loss());
        errors.push((v - 1.0).abs());
    }
    let med = median(errors);
    assert!(med <= 0.3, "median |K(0.5,0.5) - 1| = {med}");
}

#[test]
fn training_is_bit_deterministic() {
    let data = uniform_dataset(6, 4, 1, 41);
    let cfg = TrainConfig { epochs: 20, seed: SeedSpec::new(9), ..TrainConfig::default() };
    let a = train(&data, (2, 5), &cfg).unwrap();
    let b = train(&data, (2, 5), &cfg).unwrap();
    assert_eq!(a.field.params().flat(), b.field.params().flat());
    let one = TrainConfig { epochs: 1, ..cfg };
    let c = train(&data, (2, 5), &one).unwrap();
    assert!(c.field.eval(&[0.1], &[0.4]).is_finite());
}

/// Independent dense weighted least squares on `(1, u - s, v - t)`.
fn dense_wls(points: &[PseudoPoint], s: f64, t: f64, h: f64, ridge: f64) -> f64 {
    let rows: Vec<&PseudoPoint> = points.iter().collect();
    let x = DMatrix::from_fn(rows.len(), 3, |r, c| match c {
        0 => 1.0,
        1 => rows[r].u - s,
        _ => rows[r].v - t,
    });
    let w = DMatrix::from_diagonal(&DVector::from_iterator(
        rows.len(),
        rows.iter().map(|p| epan(p.u - s, h) * epan(p.v - t, h)),
    ));
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|p| p.r));
    let lhs = x.transpose() * &w * &x + DMatrix::identity(3, 3) * ridge;
    let rhs = x.transpose() * &w * y;
    lhs.lu().solve(&rhs).unwrap()[0]
}

fn epan(u: f64, h: f64) -> f64 {
    let z = u / h;
    if z.abs() < 1.0 {
        0.75 * (1.0 - z * z) / h
    } else {
        0.0
    }
}

#[test]
fn epanechnikov_matches_definition() {
    for &u in &[-0.3, -0.1, 0.0, 0.05, 0.2, 0.25] {
        assert!((epanechnikov(u, 0.25) - epan(u, 0.25)).abs() < 1e-15);
    }
}

#[test]
fn loclin_matches_dense_wls() {
    let data = uniform_dataset(12, 5, 1, 17);
    let points = pseudo_points(&data).unwrap();
    assert_eq!(points.len(), 12 * 5 * 4);
    let cfg = LoclinConfig { bandwidth: 0.35, ..LoclinConfig::default() };
    let mut rng = stream(4, "loclin-points");
    for _ in 0..10 {
        let (s, t) = (0.1 + 0.8 * rng.next_f64(), 0.1 + 0.8 * rng.next_f64());
        let got = loclin_fit_at(&data, &cfg, s, t).unwrap();
        let expected = dense_wls(&points, s, t, cfg.bandwidth, cfg.ridge);
        assert!((got - expected).abs() <= 1e-10 * expected.abs().max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn loclin_reproduces_affine_and_constant_surfaces() {
    let mut rng = stream(6, "affine");
    let points: Vec<PseudoPoint> = (0..400)
        .map(|_| {
            let (u, v) = (rng.next_f64(), rng.next_f64());
            PseudoPoint { u, v, r: 1.0 + 2.0 * u + 3.0 * v }
        })
        .collect();
    for h in [0.15, 0.3, 1.0] {
        let v = local_linear_fit(&points, 0.5, 0.5, h, 0.0).unwrap();
        assert!((v - 3.5).abs() < 1e-8, "h={h}: {v}");
    }
    let single = FunctionalDataset::new(1, 1, 2, vec![0.3, 0.6], vec![2.0, 1.5]).unwrap();
    let cfg = LoclinConfig { bandwidth: 1.0, ..LoclinConfig::default() };
    let v = loclin_fit_at(&single, &cfg, 0.45, 0.45).unwrap();
    assert!((v - 3.0).abs() < 1e-8, "{v}");
}

#[test]
fn loclin_singular_without_ridge() {
    let single = FunctionalDataset::new(1, 1, 2, vec![0.3, 0.6], vec![2.0, 1.5]).unwrap();
    let cfg = LoclinConfig { bandwidth: 0.05, ridge: 0.0, ..LoclinConfig::default() };
    let err = loclin_fit_at(&single, &cfg, 0.9, 0.1).unwrap_err();
    assert!(err.to_string().contains("insufficient local data"), "{err}");
}

#[test]
fn loclin_field_near_constant_truth() {
    let truth = constant_truth();
    let cfg = LoclinConfig { bandwidth: 0.25, ..LoclinConfig::default() };
    let mut errors = Vec::new();
    for seed in 0..20 {
        let data = generate_dataset(&truth, 100, 5, NoiseSpec::none(), SeedSpec::new(seed)).unwrap();
        let field = loclin_field(&data, &cfg).unwrap();
        let v = field.eval(&[0.5], &[0.5]);
        assert!((v - empirical_level(&data)).abs() <= 0.3, "seed {seed}: {v}");
        assert_eq!(field.eval(&[0.2], &[0.7]), field.eval(&[0.7], &[0.2]));
        let node = [16.0 / 64.0];
        assert_eq!(field.eval(&node, &node).to_bits(), field.eval(&node, &node).to_bits());
        errors.push((v - 1.0).abs());
    }
    let med = median(errors);
    assert!(med <= 0.25, "median |K(0.5,0.5) - 1| = {med}");
}

/// Explicit `n m (m-1) x |I_M|` design solved by QR.
fn explicit_spectral(data: &FunctionalDataset, level: usize) -> (Vec<(usize, usize)>, DMatrix<f64>, DVector<f64>) {
    let pairs = enumerate_index_set(level).pairs().to_vec();
    let (n, m) = (data.n(), data.m());
    let mut rows = Vec::new();
    let mut resp = Vec::new();
    for i in 0..n {
        for j in 0..m {
            for k in 0..m {
                if j == k {
                    continue;
                }
                let (s, t) = (data.location(i, j)[0], data.location(i, k)[0]);
                rows.extend(pairs.iter().map(|&(a, b)| fourier(a, s) * fourier(b, t)));
                resp.push(data.value(i, j) * data.value(i, k));
            }
        }
    }
    let x = DMatrix::from_row_slice(resp.len(), pairs.len(), &rows);
    (pairs, x, DVector::from_vec(resp))
}

#[test]
fn spectral_matches_explicit_design() {
    let truth = TruthSpec::TensorSobolev { coefficients: make_psd_coeffs(2.0, 21, 500.0, SeedSpec::new(2)).unwrap() };
    let data = generate_dataset(&truth, 40, 4, NoiseSpec::gaussian(0.3), SeedSpec::new(13)).unwrap();
    let level = 5;
    let fit = fit_spectral(&data, level, Some(0.0)).unwrap();
    let (pairs, x, y) = explicit_spectral(&data, level);
    let c = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    for (p, &(a, b)) in pairs.iter().enumerate() {
        let got = fit.coef(a, b).unwrap();
        assert!((got - c[p]).abs() < 1e-8, "c_{a}{b}: {got} vs {}", c[p]);
    }
    let chat = DVector::from_iterator(pairs.len(), pairs.iter().map(|&(a, b)| fit.coef(a, b).unwrap()));
    let resid = &y - &x * &chat;
    let ortho = x.transpose() * &resid;
    assert!(ortho.amax() < 1e-8 * y.len() as f64, "{}", ortho.amax());
    let loss = resid.norm_squared() / y.len() as f64;
    assert!((fit.train_loss().unwrap() - loss).abs() < 1e-9 * loss.max(1.0));
}

#[test]
fn spectral_rank_deficient_without_ridge() {
    let data = uniform_dataset(1, 3, 1, 2);
    let err = fit_spectral(&data, 12, Some(0.0)).unwrap_err();
    assert!(matches!(err, covfield::error::Error::RankDeficient), "{err}");
}

#[test]
fn simulated_products_have_truth_moments() {
    let coefficients = SpectralCoefficients::from_entries(
        2.0,
        5,
        &[(1, 1, 1.0), (2, 2, 0.5), (1, 2, 0.3), (2, 1, 0.3), (3, 3, 0.4)],
    )
    .unwrap();
    let truth = TruthSpec::TensorSobolev { coefficients: coefficients.clone() };
    let n = 40_000;
    let data = generate_dataset(&truth, n, 2, NoiseSpec::gaussian(0.5), SeedSpec::new(77)).unwrap();
    for (a, b) in [(1, 1), (1, 2), (2, 2), (3, 3), (2, 3), (4, 4)] {
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let (s, t) = (data.location(i, 0)[0], data.location(i, 1)[0]);
                data.value(i, 0) * data.value(i, 1) * fourier(a, s) * fourier(b, t)
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let target = coefficients.coef(a, b);
        assert!((mean - target).abs() < 4.5 * se, "c_{a}{b}: {mean} vs {target} (se {se})");
    }
}
