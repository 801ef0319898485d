//! Ground-truth covariance families and the repeated-measurement data
//! generator `Y_ij = X_i(T_ij) + eps_ij`.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FunctionalDataset, NoiseSpec};
use crate::error::{Error, Result};
use crate::field::CovarianceField;
use crate::rng::{SeedSpec, Stream};

/// Jitter added to the diagonal before Cholesky factorization.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// Default number of Fourier basis functions (frequencies 0..=10).
pub const DEFAULT_BASIS_SIZE: usize = 21;

/// Frequency of the `j`-th rearranged Fourier basis function.
#[inline]
pub fn basis_frequency(j: usize) -> usize {
    j / 2
}

/// `psi_1 = 1`, `psi_{2j} = sqrt2 cos(2 pi j t)`, `psi_{2j+1} = sqrt2 sin(2 pi j t)`.
pub fn basis_eval(j: usize, t: f64) -> f64 {
    assert!(j >= 1, "basis index starts at 1");
    if j == 1 {
        return 1.0;
    }
    let arg = 2.0 * PI * basis_frequency(j) as f64 * t;
    if j % 2 == 0 {
        SQRT_2 * arg.cos()
    } else {
        SQRT_2 * arg.sin()
    }
}

/// Fills `out[j - 1] = psi_j(t)` for `j = 1..=out.len()`.
pub fn basis_values(t: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    let mut freq = 1;
    while 2 * freq <= out.len() {
        let (sin, cos) = (2.0 * PI * freq as f64 * t).sin_cos();
        out[2 * freq - 1] = SQRT_2 * cos;
        if 2 * freq < out.len() {
            out[2 * freq] = SQRT_2 * sin;
        }
        freq += 1;
    }
}

/// `sup_t |psi_j(t)|`.
#[inline]
pub fn basis_sup(j: usize) -> f64 {
    if j == 1 {
        1.0
    } else {
        SQRT_2
    }
}

/// Periodic Sobolev eigenvalue `rho_j`: 1 for the constant, else
/// `(2 pi floor(j/2))^(-2 alpha)`.
pub fn sobolev_eigenvalue(alpha: f64, j: usize) -> f64 {
    if j == 1 {
        1.0
    } else {
        (2.0 * PI * basis_frequency(j) as f64).powf(-2.0 * alpha)
    }
}

/// Symmetric coefficient array `c_jk` on the first `J` basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoefficientsRepr", into = "CoefficientsRepr")]
pub struct SpectralCoefficients {
    alpha: f64,
    size: usize,
    c: Vec<f64>,
    rho: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CoefficientsRepr {
    alpha: f64,
    c: Vec<Vec<f64>>,
}

impl TryFrom<CoefficientsRepr> for SpectralCoefficients {
    type Error = Error;
    fn try_from(r: CoefficientsRepr) -> Result<Self> {
        let size = r.c.len();
        if r.c.iter().any(|row| row.len() != size) {
            return Err(Error::InvalidInput("coefficient matrix must be square".into()));
        }
        SpectralCoefficients::new(r.alpha, size, r.c.into_iter().flatten().collect())
    }
}

impl From<SpectralCoefficients> for CoefficientsRepr {
    fn from(s: SpectralCoefficients) -> Self {
        CoefficientsRepr {
            alpha: s.alpha,
            c: s.c.chunks(s.size).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl SpectralCoefficients {
    /// `c` is row-major `size x size` and must be exactly symmetric.
    pub fn new(alpha: f64, size: usize, c: Vec<f64>) -> Result<Self> {
        if size == 0 || c.len() != size * size {
            return Err(Error::InvalidInput("coefficient array must be J x J with J >= 1".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidInput("alpha must be positive".into()));
        }
        for j in 0..size {
            for k in 0..j {
                if c[j * size + k] != c[k * size + j] {
                    return Err(Error::InvalidInput("coefficient matrix must be symmetric".into()));
                }
            }
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        let rho = (1..=size).map(|j| sobolev_eigenvalue(alpha, j)).collect();
        Ok(Self { alpha, size, c, rho })
    }

    /// Zero matrix with the given entries set (1-based `(j, k)`, mirrored).
    pub fn from_entries(alpha: f64, size: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut c = vec![0.0; size * size];
        for &(j, k, v) in entries {
            if j == 0 || k == 0 || j > size || k > size {
                return Err(Error::InvalidInput(format!("entry ({j}, {k}) outside 1..={size}")));
            }
            c[(j - 1) * size + (k - 1)] = v;
            c[(k - 1) * size + (j - 1)] = v;
        }
        Self::new(alpha, size, c)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of basis functions `J`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// `c_jk` with 1-based indices.
    #[inline]
    pub fn coef(&self, j: usize, k: usize) -> f64 {
        self.c[(j - 1) * self.size + (k - 1)]
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.c
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.size, self.size, &self.c)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `sum_jk |c_jk| sup|psi_j| sup|psi_k|`, a bound on the induced field.
    pub fn sup_bound(&self) -> f64 {
        let mut b = 0.0;
        for j in 1..=self.size {
            for k in 1..=self.size {
                b += self.coef(j, k).abs() * basis_sup(j) * basis_sup(k);
            }
        }
        b
    }

    /// Lower-triangular Cholesky factor of `c + jitter I`.
    pub fn cholesky_factor(&self) -> Result<DMatrix<f64>> {
        let mut a = self.matrix();
        for j in 0..self.size {
            a[(j, j)] += CHOLESKY_JITTER;
        }
        a.cholesky().map(|ch| ch.l()).ok_or(Error::NotPsd)
    }
}

/// `sum_{j,k <= J} c_jk psi_j(s) psi_k(t)`, evaluated in a form that is
/// bitwise symmetric in `(s, t)`.
pub fn eval_tensor_cov(coeffs: &SpectralCoefficients, s: f64, t: f64) -> f64 {
    let size = coeffs.size;
    let mut a = vec![0.0; size];
    let mut b = vec![0.0; size];
    basis_values(s, &mut a);
    basis_values(t, &mut b);
    symmetric_bilinear(&coeffs.c, size, &a, &b)
}

/// `a^T C b` for symmetric `C` as `sum_j c_jj a_j b_j + sum_{j<k} c_jk (a_j b_k + a_k b_j)`.
pub(crate) fn symmetric_bilinear(c: &[f64], size: usize, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..size {
        let row = &c[j * size..(j + 1) * size];
        acc += row[j] * (a[j] * b[j]);
        for k in (j + 1)..size {
            acc += row[k] * (a[j] * b[k] + a[k] * b[j]);
        }
    }
    acc
}

/// `sum_jk c_jk^2 / (rho_j rho_k)`.
pub fn rkhs_norm_sq(coeffs: &SpectralCoefficients) -> f64 {
    let mut acc = 0.0;
    for j in 0..coeffs.size {
        for k in 0..coeffs.size {
            let c = coeffs.c[j * coeffs.size + k];
            acc += c * c / (coeffs.rho[j] * coeffs.rho[k]);
        }
    }
    acc
}

/// Random PSD member of the tensor Sobolev ball with RKHS norm `target_norm`.
///
/// `c = G diag(w) G^T` with `G_jr = s_j N_jr`, `N` standard normal,
/// `w_r = 1/r` and amplitude `s_j = (2 pi max(1, floor(j/2)))^(-alpha) / sqrt(j)`,
/// i.e. the kernel eigenvalue profile with the constant mode tied to the first
/// frequency. The matrix is then scaled so that `rkhs_norm_sq = target_norm^2`.
pub fn make_psd_coeffs(alpha: f64, size: usize, target_norm: f64, seed: SeedSpec) -> Result<SpectralCoefficients> {
    if size == 0 || !(target_norm > 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidInput("need J >= 1, alpha > 0 and target_norm > 0".into()));
    }
    let mut rng = seed.stream("psd-coeffs", 0);
    let amp: Vec<f64> = (1..=size)
        .map(|j| (2.0 * PI * basis_frequency(j).max(1) as f64).powf(-alpha) / (j as f64).sqrt())
        .collect();
    let mut g = vec![0.0; size * size];
    for j in 0..size {
        for r in 0..size {
            g[j * size + r] = amp[j] * rng.standard_normal();
        }
    }
    let mut c = vec![0.0; size * size];
    for j in 0..size {
        for k in 0..=j {
            let mut acc = 0.0;
            for r in 0..size {
                acc += g[j * size + r] * g[k * size + r] / (r + 1) as f64;
            }
            c[j * size + k] = acc;
            c[k * size + j] = acc;
        }
    }
    let raw = SpectralCoefficients::new(alpha, size, c)?;
    let scale = target_norm / rkhs_norm_sq(&raw).sqrt();
    let scaled = raw.c.iter().map(|x| x * scale).collect();
    SpectralCoefficients::new(alpha, size, scaled)
}

/// One sample path `X(t) = sum_j Z_j psi_j(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlPath {
    scores: Vec<f64>,
}

impl KlPath {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = self.scores[0];
        let mut freq = 1;
        while 2 * freq <= self.scores.len() {
            let (sin, cos) = (2.0 * PI * freq as f64 * t).sin_cos();
            acc += self.scores[2 * freq - 1] * SQRT_2 * cos;
            if 2 * freq < self.scores.len() {
                acc += self.scores[2 * freq] * SQRT_2 * sin;
            }
            freq += 1;
        }
        acc
    }
}

fn draw_scores(factor: &DMatrix<f64>, rng: &mut Stream) -> Vec<f64> {
    let xi = DVector::from_iterator(factor.nrows(), (0..factor.nrows()).map(|_| rng.standard_normal()));
    (factor * xi).iter().copied().collect()
}

/// `n` paths with Gaussian score vectors `Z_i ~ N(0, c)`; path `i` uses the
/// stream `("kl-path", i)`.
pub fn sample_paths_kl(coeffs: &SpectralCoefficients, n: usize, seed: SeedSpec) -> Result<Vec<KlPath>> {
    let factor = coeffs.cholesky_factor()?;
    Ok((0..n)
        .map(|i| {
            let mut rng = seed.stream("kl-path", i as u64);
            KlPath { scores: draw_scores(&factor, &mut rng) }
        })
        .collect())
}

/// Half-integer Matérn smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaternOrder {
    /// `nu = 1/2`, the exponential kernel.
    Half,
    ThreeHalves,
    #[default]
    FiveHalves,
}

/// Closed-form PSD kernel: `variance * prod_r matern(|s_r - t_r|; l_r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothKernel {
    pub variance: f64,
    pub length_scales: Vec<f64>,
    #[serde(default)]
    pub order: MaternOrder,
}

impl SmoothKernel {
    pub fn new(variance: f64, length_scales: Vec<f64>) -> Result<Self> {
        Self::with_order(variance, length_scales, MaternOrder::FiveHalves)
    }

    pub fn with_order(variance: f64, length_scales: Vec<f64>, order: MaternOrder) -> Result<Self> {
        if !(variance > 0.0) || length_scales.is_empty() || length_scales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidInput("need variance > 0 and positive length scales".into()));
        }
        Ok(Self { variance, length_scales, order })
    }

    pub fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        let mut k = self.variance;
        for ((a, b), l) in s.iter().zip(t).zip(&self.length_scales) {
            k *= matern((a - b).abs(), *l, self.order);
        }
        k
    }
}

/// Unit-variance Matérn correlation at distance `r`.
pub fn matern(r: f64, length: f64, order: MaternOrder) -> f64 {
    match order {
        MaternOrder::Half => (-r / length).exp(),
        MaternOrder::ThreeHalves => {
            let x = 3f64.sqrt() * r / length;
            (1.0 + x) * (-x).exp()
        }
        MaternOrder::FiveHalves => {
            let x = 5f64.sqrt() * r / length;
            (1.0 + x + x * x / 3.0) * (-x).exp()
        }
    }
}

/// Ground-truth covariance family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TruthSpec {
    /// Tensor periodic-Sobolev member, `d = 1`.
    TensorSobolev { coefficients: SpectralCoefficients },
    /// Product Matérn kernel with per-coordinate length scales.
    AnisotropicSmooth { kernel: SmoothKernel },
}

impl TruthSpec {
    pub fn dim(&self) -> usize {
        match self {
            TruthSpec::TensorSobolev { .. } => 1,
            TruthSpec::AnisotropicSmooth { kernel } => kernel.length_scales.len(),
        }
    }

    pub fn field(&self) -> TruthField<'_> {
        TruthField { spec: self }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TruthField<'a> {
    spec: &'a TruthSpec,
}

impl CovarianceField for TruthField<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn bound(&self) -> f64 {
        match self.spec {
            TruthSpec::TensorSobolev { coefficients } => coefficients.sup_bound(),
            TruthSpec::AnisotropicSmooth { kernel } => kernel.variance,
        }
    }

    fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        match self.spec {
            TruthSpec::TensorSobolev { coefficients } => eval_tensor_cov(coefficients, s[0], t[0]),
            TruthSpec::AnisotropicSmooth { kernel } => kernel.eval(s, t),
        }
    }
}

/// Samples the repeated-measurement model. Subject `i` draws its locations and
/// then its noise from the stream `("subject", i)`, and its path from
/// `("kl-path", i)` (tensor truths, matching `sample_paths_kl`) or
/// `("smooth-path", i)`. Paths therefore do not depend on `m`.
pub fn generate_dataset(
    truth: &TruthSpec,
    n: usize,
    m: usize,
    noise: NoiseSpec,
    seed: SeedSpec,
) -> Result<FunctionalDataset> {
    if n == 0 {
        return Err(Error::InvalidInput("need n >= 1".into()));
    }
    if m < 2 {
        return Err(Error::TooFewMeasurements);
    }
    let d = truth.dim();
    let factor = match truth {
        TruthSpec::TensorSobolev { coefficients } => Some(coefficients.cholesky_factor()?),
        TruthSpec::AnisotropicSmooth { .. } => None,
    };

    let subjects: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.stream("subject", i as u64);
            let locs: Vec<f64> = (0..m * d).map(|_| rng.next_f64()).collect();
            let mut vals = match truth {
                TruthSpec::TensorSobolev { .. } => {
                    let mut path_rng = seed.stream("kl-path", i as u64);
                    let path = KlPath {
                        scores: draw_scores(factor.as_ref().expect("tensor factor"), &mut path_rng),
                    };
                    locs.iter().map(|&t| path.eval(t)).collect()
                }
                TruthSpec::AnisotropicSmooth { kernel } => {
                    sample_smooth_at(kernel, &locs, d, &mut seed.stream("smooth-path", i as u64))?
                }
            };
            for v in vals.iter_mut() {
                *v += noise.sample(&mut rng);
            }
            Ok((locs, vals))
        })
        .collect::<Result<_>>()?;

    let mut locations = Vec::with_capacity(n * m * d);
    let mut values = Vec::with_capacity(n * m);
    for (l, v) in subjects {
        locations.extend(l);
        values.extend(v);
    }
    FunctionalDataset::new(d, n, m, locations, values)
}

fn sample_smooth_at(kernel: &SmoothKernel, locs: &[f64], d: usize, rng: &mut Stream) -> Result<Vec<f64>> {
    let m = locs.len() / d;
    let mut gram = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in 0..=a {
            let k = kernel.eval(&locs[a * d..(a + 1) * d], &locs[b * d..(b + 1) * d]);
            gram[(a, b)] = k;
            gram[(b, a)] = k;
        }
        gram[(a, a)] += CHOLESKY_JITTER * kernel.variance.max(1.0) + 1e-12;
    }
    let l = gram.cholesky().ok_or(Error::NotPsd)?.l();
    Ok(draw_scores(&l, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c22(v: f64, alpha: f64) -> SpectralCoefficients {
        SpectralCoefficients::from_entries(alpha, 3, &[(2, 2, v)]).unwrap()
    }

    #[test]
    fn basis_examples() {
        assert_eq!(basis_eval(1, 0.73), 1.0);
        assert!((basis_eval(2, 0.0) - 1.414_213_56).abs() < 1e-8);
        assert!((basis_eval(3, 0.25) - SQRT_2).abs() < 1e-12);
        let mut out = [0.0; 7];
        basis_values(0.37, &mut out);
        for (j, v) in out.iter().enumerate() {
            assert!((v - basis_eval(j + 1, 0.37)).abs() < 1e-14);
        }
    }

    #[test]
    fn tensor_cov_examples() {
        let one = SpectralCoefficients::from_entries(1.0, 1, &[(1, 1, 1.0)]).unwrap();
        assert_eq!(eval_tensor_cov(&one, 0.1, 0.9), 1.0);
        assert!(eval_tensor_cov(&c22(0.5, 1.0), 0.25, 0.0).abs() < 1e-15);
        assert!((eval_tensor_cov(&c22(0.5, 1.0), 0.0, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rkhs_norm_examples() {
        let one = SpectralCoefficients::from_entries(3.0, 2, &[(1, 1, 1.0)]).unwrap();
        assert_eq!(rkhs_norm_sq(&one), 1.0);
        let expected = 0.25 * (2.0 * PI).powi(4);
        assert!((rkhs_norm_sq(&c22(0.5, 1.0)) - expected).abs() < 1e-9);
        assert!((expected - 389.636).abs() < 1e-3);
        let zero = SpectralCoefficients::from_entries(1.0, 4, &[]).unwrap();
        assert_eq!(rkhs_norm_sq(&zero), 0.0);
    }

    #[test]
    fn psd_coeffs_contract() {
        let one = make_psd_coeffs(2.0, 1, 3.5, SeedSpec::new(4)).unwrap();
        assert!((one.coef(1, 1) - 3.5).abs() < 1e-12);
        for seed in 0..5 {
            let c = make_psd_coeffs(2.0, 9, 40.0, SeedSpec::new(seed)).unwrap();
            assert!(c.min_eigenvalue() >= -1e-10);
            assert!((rkhs_norm_sq(&c) - 1600.0).abs() < 1e-9 * 1600.0);
        }
    }

    #[test]
    fn eigenvalues_follow_frequencies() {
        let c = make_psd_coeffs(1.5, 7, 1.0, SeedSpec::new(1)).unwrap();
        assert_eq!(c.rho()[0], 1.0);
        assert_eq!(c.rho()[1], c.rho()[2]);
        assert!(c.rho()[3] < c.rho()[1]);
        assert!((c.rho()[1] - (2.0 * PI).powf(-3.0)).abs() < 1e-15);
    }

    #[test]
    fn basis_orthonormality_by_quadrature() {
        // 256-point midpoint rule is exact for trigonometric polynomials of
        // degree < 256 on the circle.
        let q = 256;
        for j in 1..=7 {
            for k in 1..=7 {
                let s: f64 = (0..q)
                    .map(|i| {
                        let t = (i as f64 + 0.5) / q as f64;
                        basis_eval(j, t) * basis_eval(k, t)
                    })
                    .sum::<f64>()
                    / q as f64;
                let delta = if j == k { 1.0 } else { 0.0 };
                assert!((s - delta).abs() < 1e-10, "({j},{k}) -> {s}");
            }
        }
    }

    #[test]
    fn constant_mode_paths() {
        let one = SpectralCoefficients::from_entries(1.0, 1, &[(1, 1, 1.0)]).unwrap();
        let paths = sample_paths_kl(&one, 5, SeedSpec::new(9)).unwrap();
        for p in &paths {
            assert_eq!(p.eval(0.1), p.eval(0.8));
        }
        assert!(sample_paths_kl(&one, 0, SeedSpec::new(9)).unwrap().is_empty());
    }

    #[test]
    fn non_psd_is_rejected() {
        let bad = SpectralCoefficients::from_entries(1.0, 2, &[(1, 1, 1.0), (2, 2, 1.0), (1, 2, 2.0)]).unwrap();
        assert!(matches!(sample_paths_kl(&bad, 3, SeedSpec::new(1)), Err(Error::NotPsd)));
    }

    #[test]
    fn score_covariance_monte_carlo() {
        let c = make_psd_coeffs(1.0, 4, 5.0, SeedSpec::new(21)).unwrap();
        let n = 10_000;
        let paths = sample_paths_kl(&c, n, SeedSpec::new(22)).unwrap();
        for j in 0..4 {
            for k in 0..4 {
                let prods: Vec<f64> = paths.iter().map(|p| p.scores()[j] * p.scores()[k]).collect();
                let mean = prods.iter().sum::<f64>() / n as f64;
                let var = prods.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                let se = (var / n as f64).sqrt();
                let target = c.coef(j + 1, k + 1);
                assert!((mean - target).abs() <= 3.0 * se + 1e-12, "({j},{k}) {mean} vs {target}");
            }
        }
    }

    #[test]
    fn noiseless_constant_truth_gives_constant_subjects() {
        let one = SpectralCoefficients::from_entries(1.0, 1, &[(1, 1, 1.0)]).unwrap();
        let truth = TruthSpec::TensorSobolev { coefficients: one };
        let ds = generate_dataset(&truth, 4, 6, NoiseSpec::none(), SeedSpec::new(2)).unwrap();
        for i in 0..4 {
            let v = ds.subject_values(i);
            assert!(v.iter().all(|&y| y == v[0]));
        }
        let again = generate_dataset(&truth, 4, 6, NoiseSpec::none(), SeedSpec::new(2)).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn pooled_variance_decomposition() {
        let one = SpectralCoefficients::from_entries(1.0, 1, &[(1, 1, 1.0)]).unwrap();
        let truth = TruthSpec::TensorSobolev { coefficients: one };
        let (n, m) = (200, 10);
        let ds = generate_dataset(&truth, n, m, NoiseSpec::gaussian(0.5), SeedSpec::new(5)).unwrap();
        // Var(Y) = 1 + 0.25; measurements within a subject share Z, so the
        // standard error of the pooled second moment is computed from the
        // subject-level means of Y^2.
        let per_subject: Vec<f64> = (0..n)
            .map(|i| ds.subject_values(i).iter().map(|y| y * y).sum::<f64>() / m as f64)
            .collect();
        let mean = per_subject.iter().sum::<f64>() / n as f64;
        let var = per_subject.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.25).abs() < 3.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn tensor_field_is_psd_on_point_sets() {
        let c = make_psd_coeffs(2.0, DEFAULT_BASIS_SIZE, 100.0, SeedSpec::new(3)).unwrap();
        let truth = TruthSpec::TensorSobolev { coefficients: c };
        let f = truth.field();
        let mut rng = SeedSpec::new(8).stream("pts", 0);
        let pts: Vec<f64> = (0..40).map(|_| rng.next_f64()).collect();
        let gram = DMatrix::from_fn(40, 40, |a, b| f.eval(&[pts[a]], &[pts[b]]));
        let min = SymmetricEigen::new(gram).eigenvalues.min();
        assert!(min >= -1e-8);
    }

    #[test]
    fn smooth_kernel_symmetry_and_bound() {
        let k = SmoothKernel::new(1.3, vec![0.2, 0.6]).unwrap();
        let truth = TruthSpec::AnisotropicSmooth { kernel: k };
        let f = truth.field();
        assert_eq!(f.eval(&[0.3, 0.4], &[0.3, 0.4]), 1.3);
        assert_eq!(f.eval(&[0.1, 0.9], &[0.6, 0.2]), f.eval(&[0.6, 0.2], &[0.1, 0.9]));
        let ds = generate_dataset(&truth, 3, 5, NoiseSpec::none(), SeedSpec::new(1)).unwrap();
        assert_eq!(ds.d(), 2);
    }
}
