//! Least-squares fit of `K(s,t) = sum_{(j,k) in I_M} c_jk psi_j(s) psi_k(t)`
//! over the hyperbolic cross `I_M = {(j,k) : j k <= M}`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::field::{clip, CovarianceField};
use crate::numeric::pairwise_sum_vecs;
use crate::synth::{basis_values, SpectralCoefficients};

/// Relative ridge used when none is configured: `DEFAULT_RIDGE_PER_ROW * n m (m-1)`.
pub const DEFAULT_RIDGE_PER_ROW: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSetM {
    m: usize,
    pairs: Vec<(usize, usize)>,
}

/// Pairs `(j, k)`, both 1-based, with `j k <= M`, sorted lexicographically.
pub fn enumerate_index_set(m: usize) -> IndexSetM {
    assert!(m >= 1, "M must be at least 1");
    let pairs = (1..=m).flat_map(|j| (1..=m / j).map(move |k| (j, k))).collect();
    IndexSetM { m, pairs }
}

impl IndexSetM {
    pub fn level(&self) -> usize {
        self.m
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Largest basis index appearing in the set (`M` itself, via `(M, 1)`).
    pub fn max_index(&self) -> usize {
        self.m
    }

    pub fn contains(&self, j: usize, k: usize) -> bool {
        j >= 1 && k >= 1 && j * k <= self.m
    }

    fn position(&self, j: usize, k: usize) -> Option<usize> {
        self.pairs.binary_search(&(j, k)).ok()
    }
}

/// `max(1, round(c_M (n floor(m/2))^(1/(2 alpha + 1))))`.
pub fn m_from_theory(n: usize, m: usize, alpha: f64, c_m: f64) -> usize {
    assert!(alpha > 0.0);
    let big_n = (n * (m / 2)) as f64;
    ((c_m * big_n.powf(1.0 / (2.0 * alpha + 1.0))).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFit {
    index: IndexSetM,
    chat: Vec<f64>,
    ridge: f64,
    train_loss: Option<f64>,
}

impl SpectralFit {
    pub fn index_set(&self) -> &IndexSetM {
        &self.index
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Coefficients in the order of `index_set().pairs()`.
    pub fn coefficients(&self) -> &[f64] {
        &self.chat
    }

    pub fn coef(&self, j: usize, k: usize) -> Option<f64> {
        self.index.position(j, k).map(|p| self.chat[p])
    }

    /// True coefficients restricted to `I_M` (zero outside the stored `J`).
    pub fn from_truth(coeffs: &SpectralCoefficients, m: usize) -> Self {
        let index = enumerate_index_set(m);
        let chat = index
            .pairs
            .iter()
            .map(|&(j, k)| {
                if j <= coeffs.size() && k <= coeffs.size() {
                    coeffs.coef(j, k)
                } else {
                    0.0
                }
            })
            .collect();
        Self { index, chat, ridge: 0.0, train_loss: None }
    }

    /// Full pairwise loss of the fitted (unclipped) expansion, computed from
    /// the normal equations. `None` for fits not estimated from data.
    pub fn train_loss(&self) -> Option<f64> {
        self.train_loss
    }

    pub fn coef_norm_sq(&self) -> f64 {
        self.chat.iter().map(|c| c * c).sum()
    }

    pub fn export(&self) -> SpectralExport {
        SpectralExport {
            kind: "spectral".into(),
            m: self.index.m,
            ridge: self.ridge,
            bound: None,
            entries: self
                .index
                .pairs
                .iter()
                .zip(&self.chat)
                .map(|(&(j, k), &c)| (j, k, c))
                .collect(),
        }
    }
}

/// Per-subject normal-equation blocks `(G^T G, G^T R)` for the ordered-pair
/// design, assembled from per-measurement basis sums.
fn subject_normal(data: &FunctionalDataset, i: usize, index: &IndexSetM, basis: &mut [f64]) -> Vec<f64> {
    let p = index.len();
    let jmax = index.max_index();
    let m = data.m();
    let t = data.subject_locations(i);
    let y = data.subject_values(i);
    // B: m x jmax basis values; P = B^T B; q = B^T y.
    let mut bvals = vec![0.0; m * jmax];
    for (r, &tr) in t.iter().enumerate() {
        basis_values(tr, &mut basis[..jmax]);
        bvals[r * jmax..(r + 1) * jmax].copy_from_slice(&basis[..jmax]);
    }
    let mut pmat = vec![0.0; jmax * jmax];
    let mut q = vec![0.0; jmax];
    for r in 0..m {
        let row = &bvals[r * jmax..(r + 1) * jmax];
        for a in 0..jmax {
            q[a] += row[a] * y[r];
            for c in 0..jmax {
                pmat[a * jmax + c] += row[a] * row[c];
            }
        }
    }
    // F: m x p products psi_j(T_r) psi_k(T_r) used for the diagonal j' = k'.
    let mut feat = vec![0.0; m * p];
    for r in 0..m {
        let row = &bvals[r * jmax..(r + 1) * jmax];
        for (col, &(j, k)) in index.pairs.iter().enumerate() {
            feat[r * p + col] = row[j - 1] * row[k - 1];
        }
    }
    let mut out = vec![0.0; p * p + p + 1];
    let sum2: f64 = y.iter().map(|v| v * v).sum();
    let sum4: f64 = y.iter().map(|v| v.powi(4)).sum();
    out[p * p + p] = sum2 * sum2 - sum4;
    for (x, &(a, b)) in index.pairs.iter().enumerate() {
        for (z, &(c, d)) in index.pairs.iter().enumerate().skip(x) {
            let mut diag = 0.0;
            for r in 0..m {
                diag += feat[r * p + x] * feat[r * p + z];
            }
            let v = pmat[(a - 1) * jmax + (c - 1)] * pmat[(b - 1) * jmax + (d - 1)] - diag;
            out[x * p + z] = v;
            out[z * p + x] = v;
        }
        let mut diag = 0.0;
        for r in 0..m {
            diag += feat[r * p + x] * y[r] * y[r];
        }
        out[p * p + x] = q[a - 1] * q[b - 1] - diag;
    }
    out
}

/// Solves the ridge-regularized pairwise least-squares problem on `I_M`, then
/// symmetrizes `c <- (c + c^T) / 2`. A `ridge` of `None` uses
/// `DEFAULT_RIDGE_PER_ROW * n m (m-1)`.
pub fn fit_spectral(data: &FunctionalDataset, m_level: usize, ridge: Option<f64>) -> Result<SpectralFit> {
    if data.d() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: data.d() });
    }
    if data.m() < 2 {
        return Err(Error::TooFewMeasurements);
    }
    if m_level == 0 {
        return Err(Error::InvalidInput("M must be at least 1".into()));
    }
    let rows = data.n() * data.m() * (data.m() - 1);
    let ridge = ridge.unwrap_or(DEFAULT_RIDGE_PER_ROW * rows as f64);
    if !(ridge >= 0.0) {
        return Err(Error::InvalidInput("ridge must be nonnegative".into()));
    }
    let index = enumerate_index_set(m_level);
    let p = index.len();
    let blocks: Vec<Vec<f64>> = (0..data.n())
        .into_par_iter()
        .map_init(
            || vec![0.0; index.max_index()],
            |basis, i| subject_normal(data, i, &index, basis),
        )
        .collect();
    let total = pairwise_sum_vecs(&blocks, p * p + p + 1);
    let mut gram = DMatrix::from_row_slice(p, p, &total[..p * p]);
    for d in 0..p {
        gram[(d, d)] += ridge;
    }
    let rhs = DVector::from_column_slice(&total[p * p..p * p + p]);
    let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
    if ridge == 0.0 {
        let l = chol.l_dirty();
        let diag = (0..p).map(|d| l[(d, d)] * l[(d, d)]);
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if lo <= 1e-12 * hi {
            return Err(Error::RankDeficient);
        }
    }
    let sol = chol.solve(&rhs);
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::RankDeficient);
    }
    let mut chat: Vec<f64> = sol.iter().copied().collect();
    let raw = chat.clone();
    for (x, &(j, k)) in index.pairs.iter().enumerate() {
        let mirror = index.position(k, j).expect("index set is symmetric");
        chat[x] = 0.5 * (raw[x] + raw[mirror]);
    }
    // Loss = (sum R^2 - 2 c'b + c'Gc) / rows with the unridged Gram matrix.
    let c = DVector::from_column_slice(&chat);
    let unridged = DMatrix::from_row_slice(p, p, &total[..p * p]);
    let quad = c.dot(&(&unridged * &c));
    let loss = ((total[p * p + p] - 2.0 * c.dot(&rhs) + quad) / rows as f64).max(0.0);
    Ok(SpectralFit { index, chat, ridge, train_loss: Some(loss) })
}

/// Field `sum c_jk psi_j(s) psi_k(t)`, clipped to `bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    /// Distinct basis indices used, `1..=jmax`.
    jmax: usize,
    /// `(j, k, c)` with `j <= k`, 0-based, off-diagonal entries stored once.
    terms: Vec<(usize, usize, f64)>,
    bound: f64,
}

pub fn spectral_field(fit: &SpectralFit, bound: f64) -> SpectralField {
    SpectralField::from_entries(
        fit.index.pairs.iter().zip(&fit.chat).map(|(&(j, k), &c)| (j, k, c)),
        bound,
    )
    .expect("fitted coefficients are symmetric")
}

impl SpectralField {
    /// Builds from `(j, k, c)` entries (1-based); both `(j,k)` and `(k,j)` must
    /// be present with equal values when `j != k`.
    pub fn from_entries(entries: impl IntoIterator<Item = (usize, usize, f64)>, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::InvalidInput("bound must be positive".into()));
        }
        let mut map = std::collections::BTreeMap::new();
        for (j, k, c) in entries {
            if j == 0 || k == 0 {
                return Err(Error::InvalidInput("basis indices start at 1".into()));
            }
            if map.insert((j, k), c).is_some() {
                return Err(Error::InvalidInput(format!("duplicate entry ({j}, {k})")));
            }
        }
        let mut terms = Vec::new();
        let mut jmax = 1;
        for (&(j, k), &c) in &map {
            if map.get(&(k, j)) != Some(&c) {
                return Err(Error::InvalidInput(format!("entries ({j}, {k}) and ({k}, {j}) differ")));
            }
            jmax = jmax.max(j).max(k);
            if j <= k {
                terms.push((j - 1, k - 1, c));
            }
        }
        Ok(Self { jmax, terms, bound })
    }

    pub fn from_truth(coeffs: &SpectralCoefficients, bound: f64) -> Self {
        let size = coeffs.size();
        let entries = (1..=size).flat_map(|j| (1..=size).map(move |k| (j, k))).map(|(j, k)| (j, k, coeffs.coef(j, k)));
        Self::from_entries(entries, bound).expect("truth coefficients are symmetric")
    }

    pub fn unclipped(&self, s: f64, t: f64) -> f64 {
        let mut a = vec![0.0; self.jmax];
        let mut b = vec![0.0; self.jmax];
        basis_values(s, &mut a);
        basis_values(t, &mut b);
        let mut acc = 0.0;
        for &(j, k, c) in &self.terms {
            if j == k {
                acc += c * (a[j] * b[j]);
            } else {
                acc += c * (a[j] * b[k] + a[k] * b[j]);
            }
        }
        acc
    }
}

impl CovarianceField for SpectralField {
    fn dim(&self) -> usize {
        1
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        clip(self.unclipped(s[0], t[0]), self.bound)
    }
}

/// JSON export `{kind, M, ridge, bound, entries: [[j, k, c], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralExport {
    pub kind: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub ridge: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SpectralExport {
    pub fn field(&self, default_bound: f64) -> Result<SpectralField> {
        SpectralField::from_entries(self.entries.iter().copied(), self.bound.unwrap_or(default_bound))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSpec;

    #[test]
    fn index_set_examples() {
        assert_eq!(enumerate_index_set(1).pairs(), &[(1, 1)]);
        assert_eq!(enumerate_index_set(3).pairs(), &[(1, 1), (1, 2), (1, 3), (2, 1), (3, 1)]);
        assert_eq!(enumerate_index_set(10).len(), 27);
        for m in 1..40 {
            let expected: usize = (1..=m).map(|j| m / j).sum();
            assert_eq!(enumerate_index_set(m).len(), expected);
        }
    }

    #[test]
    fn theory_level_examples() {
        assert_eq!(m_from_theory(100, 10, 2.0, 1.0), 3);
        assert_eq!(m_from_theory(100, 10, 2.0, 2.0), (2.0 * 500f64.powf(0.2)).round() as usize);
        let mut prev = 0;
        for n in 1..500 {
            let l = m_from_theory(n, 5, 2.0, 1.0);
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn level_one_is_mean_of_products() {
        let mut rng = SeedSpec::new(2).stream("d", 0);
        let (n, m) = (5, 4);
        let locs: Vec<f64> = (0..n * m).map(|_| rng.next_f64()).collect();
        let vals: Vec<f64> = (0..n * m).map(|_| rng.standard_normal()).collect();
        let ds = FunctionalDataset::new(1, n, m, locs, vals).unwrap();
        let fit = fit_spectral(&ds, 1, Some(0.0)).unwrap();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..m {
                for k in 0..m {
                    if j != k {
                        sum += ds.value(i, j) * ds.value(i, k);
                    }
                }
            }
        }
        let mean = sum / (n * m * (m - 1)) as f64;
        assert!((fit.coef(1, 1).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn constant_field_and_symmetry() {
        let f = SpectralField::from_entries([(1, 1, 1.5)], 10.0).unwrap();
        assert_eq!(f.eval(&[0.2], &[0.7]), 1.5);
        assert!(SpectralField::from_entries([(1, 2, 1.0), (2, 1, 0.5)], 10.0).is_err());
    }

    #[test]
    fn singular_design_without_ridge() {
        // One subject with m = 2 cannot identify the 5 coefficients of I_3.
        let ds = FunctionalDataset::new(1, 1, 2, vec![0.2, 0.7], vec![1.0, 2.0]).unwrap();
        assert!(matches!(fit_spectral(&ds, 3, Some(0.0)), Err(Error::RankDeficient)));
        assert!(fit_spectral(&ds, 3, Some(1e-6)).is_ok());
    }

    #[test]
    fn normal_equation_loss_matches_direct_loss() {
        let mut rng = SeedSpec::new(9).stream("d", 0);
        let (n, m) = (30, 6);
        let locs: Vec<f64> = (0..n * m).map(|_| rng.next_f64()).collect();
        let vals: Vec<f64> = (0..n * m).map(|_| rng.standard_normal()).collect();
        let ds = FunctionalDataset::new(1, n, m, locs, vals).unwrap();
        let fit = fit_spectral(&ds, 4, None).unwrap();
        let direct = crate::pairloss::full_pair_loss(&ds, &spectral_field(&fit, f64::INFINITY)).unwrap().value;
        assert!((fit.train_loss().unwrap() - direct).abs() < 1e-10 * direct);
    }
}
