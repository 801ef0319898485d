//! Local linear smoothing of the pseudo-observations
//! `((T_ij, T_ik), Y_ij Y_ik)`, `j != k`, on `[0,1]^2`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::field::{clip, CovarianceField};
use crate::pairloss::full_pair_loss;
use crate::postrisk::GridField;
use crate::rng::SeedSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoclinConfig {
    /// Common bandwidth on both axes.
    pub bandwidth: f64,
    /// Added to the diagonal of the 3x3 normal equations.
    pub ridge: f64,
    /// Grid nodes per axis for the memoized surface.
    pub grid: usize,
    pub bound: f64,
}

impl Default for LoclinConfig {
    fn default() -> Self {
        Self { bandwidth: 0.2, ridge: 1e-10, grid: 65, bound: 10.0 }
    }
}

impl LoclinConfig {
    pub fn with_bandwidth(self, bandwidth: f64) -> Self {
        Self { bandwidth, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !(self.ridge >= 0.0) || self.grid < 2 || !(self.bound > 0.0) {
            return Err(Error::InvalidInput(
                "loclin needs bandwidth > 0, ridge >= 0, grid >= 2 and bound > 0".into(),
            ));
        }
        Ok(())
    }
}

/// `K_h(u) = (3/4) (1 - (u/h)^2)_+ / h`.
#[inline]
pub fn epanechnikov(u: f64, h: f64) -> f64 {
    let z = u / h;
    if z.abs() >= 1.0 {
        0.0
    } else {
        0.75 * (1.0 - z * z) / h
    }
}

/// `c * (n m^2)^(-1/6)`, the bandwidth order for the equal-weight-per-pair
/// scheme.
pub fn rule_bandwidth(n: usize, m: usize, c: f64) -> f64 {
    c * ((n * m * m) as f64).powf(-1.0 / 6.0)
}

/// One pseudo-observation: response `r` at location `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoPoint {
    pub u: f64,
    pub v: f64,
    pub r: f64,
}

/// Accumulated weighted normal equations for the design `(1, u - s, v - t)`.
#[derive(Debug, Clone, Copy, Default)]
struct Normal {
    a: [[f64; 3]; 3],
    b: [f64; 3],
}

impl Normal {
    fn add(&mut self, w: f64, du: f64, dv: f64, r: f64) {
        let x = [1.0, du, dv];
        for p in 0..3 {
            self.b[p] += w * x[p] * r;
            for q in 0..3 {
                self.a[p][q] += w * x[p] * x[q];
            }
        }
    }

    /// Intercept of the ridge-regularized solve.
    fn intercept(mut self, ridge: f64) -> Result<f64> {
        for p in 0..3 {
            self.a[p][p] += ridge;
        }
        let scale = (0..3).map(|p| self.a[p][p].abs()).fold(0.0, f64::max);
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::InsufficientLocalData);
        }
        let mut a = self.a;
        let mut b = self.b;
        for col in 0..3 {
            let piv = (col..3)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .expect("nonempty range");
            if a[piv][col].abs() <= 1e-12 * scale && (ridge == 0.0 || a[piv][col] == 0.0) {
                return Err(Error::InsufficientLocalData);
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for row in (col + 1)..3 {
                let f = a[row][col] / a[col][col];
                for k in col..3 {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = [0.0; 3];
        for row in (0..3).rev() {
            let tail: f64 = ((row + 1)..3).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - tail) / a[row][row];
        }
        Ok(x[0])
    }
}

/// Local linear fit at `(s, t)` over explicit pseudo-points.
pub fn local_linear_fit(points: &[PseudoPoint], s: f64, t: f64, bandwidth: f64, ridge: f64) -> Result<f64> {
    let mut ne = Normal::default();
    for p in points {
        let w = epanechnikov(p.u - s, bandwidth) * epanechnikov(p.v - t, bandwidth);
        if w > 0.0 {
            ne.add(w, p.u - s, p.v - t, p.r);
        }
    }
    ne.intercept(ridge)
}

/// All ordered within-subject pseudo-observations of a `d = 1` dataset.
pub fn pseudo_points(data: &FunctionalDataset) -> Result<Vec<PseudoPoint>> {
    if data.d() != 1 {
        return Err(Error::LoclinDimension);
    }
    let m = data.m();
    let mut out = Vec::with_capacity(data.n() * m * (m - 1));
    for i in 0..data.n() {
        let t = data.subject_locations(i);
        let y = data.subject_values(i);
        for j in 0..m {
            for k in 0..m {
                if j != k {
                    out.push(PseudoPoint { u: t[j], v: t[k], r: y[j] * y[k] });
                }
            }
        }
    }
    Ok(out)
}

/// Local linear fit at `(s, t)` for a dataset.
///
/// Weights and responses factor over the pair, so each normal-equation entry
/// is a product of per-measurement sums minus the `j = k` diagonal; the cost
/// is `O(n m)` rather than `O(n m^2)`.
pub fn loclin_fit_at(data: &FunctionalDataset, cfg: &LoclinConfig, s: f64, t: f64) -> Result<f64> {
    if data.d() != 1 {
        return Err(Error::LoclinDimension);
    }
    cfg.validate()?;
    Ok(local_normal(data, cfg.bandwidth, s, t).intercept(cfg.ridge)?)
}

fn local_normal(data: &FunctionalDataset, h: f64, s: f64, t: f64) -> Normal {
    let mut ne = Normal::default();
    let m = data.m();
    for i in 0..data.n() {
        let loc = data.subject_locations(i);
        let y = data.subject_values(i);
        // Row sums over j (first argument) and k (second argument).
        let (mut a0, mut a1, mut a2, mut ay, mut auy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut b0, mut b1, mut b2, mut by, mut bvy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        // Diagonal corrections.
        let mut dg = [0.0f64; 9];
        for j in 0..m {
            let u = loc[j] - s;
            let v = loc[j] - t;
            let wu = epanechnikov(u, h);
            let wv = epanechnikov(v, h);
            if wu > 0.0 {
                a0 += wu;
                a1 += wu * u;
                a2 += wu * u * u;
                ay += wu * y[j];
                auy += wu * u * y[j];
            }
            if wv > 0.0 {
                b0 += wv;
                b1 += wv * v;
                b2 += wv * v * v;
                by += wv * y[j];
                bvy += wv * v * y[j];
            }
            let w = wu * wv;
            if w > 0.0 {
                let yy = y[j] * y[j];
                dg[0] += w;
                dg[1] += w * u;
                dg[2] += w * v;
                dg[3] += w * u * u;
                dg[4] += w * u * v;
                dg[5] += w * v * v;
                dg[6] += w * yy;
                dg[7] += w * u * yy;
                dg[8] += w * v * yy;
            }
        }
        let s00 = a0 * b0 - dg[0];
        let s0u = a1 * b0 - dg[1];
        let s0v = a0 * b1 - dg[2];
        let suu = a2 * b0 - dg[3];
        let suv = a1 * b1 - dg[4];
        let svv = a0 * b2 - dg[5];
        ne.a[0][0] += s00;
        ne.a[0][1] += s0u;
        ne.a[0][2] += s0v;
        ne.a[1][1] += suu;
        ne.a[1][2] += suv;
        ne.a[2][2] += svv;
        ne.b[0] += ay * by - dg[6];
        ne.b[1] += auy * by - dg[7];
        ne.b[2] += ay * bvy - dg[8];
    }
    ne.a[1][0] = ne.a[0][1];
    ne.a[2][0] = ne.a[0][2];
    ne.a[2][1] = ne.a[1][2];
    ne
}

/// Local linear surface memoized on a `g x g` grid of `[0,1]^2` with bilinear
/// interpolation between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LoclinField {
    g: usize,
    values: Vec<f64>,
    bound: f64,
    bandwidth: f64,
}

/// Fits the grid upper triangle `s <= t` and mirrors it.
pub fn loclin_field(data: &FunctionalDataset, cfg: &LoclinConfig) -> Result<LoclinField> {
    if data.d() != 1 {
        return Err(Error::LoclinDimension);
    }
    cfg.validate()?;
    let g = cfg.grid;
    let node = |i: usize| i as f64 / (g - 1) as f64;
    let upper: Vec<(usize, usize)> = (0..g).flat_map(|a| (a..g).map(move |b| (a, b))).collect();
    let fitted: Vec<f64> = upper
        .par_iter()
        .map(|&(a, b)| local_normal(data, cfg.bandwidth, node(a), node(b)).intercept(cfg.ridge))
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; g * g];
    for (&(a, b), v) in upper.iter().zip(fitted) {
        values[a * g + b] = v;
        values[b * g + a] = v;
    }
    Ok(LoclinField { g, values, bound: cfg.bound, bandwidth: cfg.bandwidth })
}

impl LoclinField {
    pub fn grid_size(&self) -> usize {
        self.g
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Unclipped fitted value at grid node `(a, b)`.
    pub fn node_value(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.g + b]
    }

    pub fn node_values(&self) -> &[f64] {
        &self.values
    }

    /// The same surface as a `GridField`; evaluations agree bit for bit.
    pub fn to_grid_field(&self) -> GridField {
        GridField::from_values(self.g, 1, DMatrix::from_row_slice(self.g, self.g, &self.values), self.bound)
            .expect("loclin grid is symmetric and finite")
    }
}

/// Bilinear interpolation on a symmetric `g x g` node array over `[0,1]^2`.
pub(crate) fn bilinear(values: &[f64], g: usize, s: f64, t: f64) -> f64 {
    let locate = |x: f64| {
        let pos = x.clamp(0.0, 1.0) * (g - 1) as f64;
        let i = (pos.floor() as usize).min(g - 2);
        (i, pos - i as f64)
    };
    let (i, fs) = locate(s);
    let (j, ft) = locate(t);
    let v00 = values[i * g + j];
    let v01 = values[i * g + j + 1];
    let v10 = values[(i + 1) * g + j];
    let v11 = values[(i + 1) * g + j + 1];
    (1.0 - fs) * ((1.0 - ft) * v00 + ft * v01) + fs * ((1.0 - ft) * v10 + ft * v11)
}

impl CovarianceField for LoclinField {
    fn dim(&self) -> usize {
        1
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        let (a, b) = if s[0] <= t[0] { (s[0], t[0]) } else { (t[0], s[0]) };
        clip(bilinear(&self.values, self.g, a, b), self.bound)
    }
}

/// Subject-level K-fold cross-validation of the held-out full pairwise loss.
/// Ties go to the larger bandwidth.
pub fn select_bandwidth(
    data: &FunctionalDataset,
    base: &LoclinConfig,
    candidates: &[f64],
    folds: usize,
    seed: SeedSpec,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no bandwidth candidates".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidInput("need at least two folds".into()));
    }
    if data.d() != 1 {
        return Err(Error::LoclinDimension);
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let folds = folds.min(data.n());
    if folds < 2 {
        return Err(Error::InvalidInput("need at least two subjects for cross-validation".into()));
    }
    let order = seed.stream("cv-folds", 0).permutation(data.n());
    let splits: Vec<(FunctionalDataset, FunctionalDataset)> = (0..folds)
        .map(|f| {
            let (test, train): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
                order.iter().copied().enumerate().partition(|(pos, _)| pos % folds == f);
            let pick = |v: Vec<(usize, usize)>| v.into_iter().map(|(_, i)| i).collect::<Vec<_>>();
            Ok((data.select_subjects(&pick(train))?, data.select_subjects(&pick(test))?))
        })
        .collect::<Result<_>>()?;

    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut best: Option<(f64, f64)> = None;
    for h in sorted {
        let cfg = base.with_bandwidth(h);
        let score: Result<f64> = splits.iter().try_fold(0.0, |acc, (train, test)| {
            let field = loclin_field(train, &cfg)?;
            Ok(acc + full_pair_loss(test, &field)?.value)
        });
        if let Ok(score) = score {
            if best.map_or(true, |(b, _)| score < b) {
                best = Some((score, h));
            }
        }
    }
    best.map(|(_, h)| h).ok_or(Error::BandwidthSelection)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_support_and_mass() {
        assert_eq!(epanechnikov(0.3, 0.3), 0.0);
        assert_eq!(epanechnikov(-0.5, 0.3), 0.0);
        let q = 10_000;
        let mass: f64 = (0..q).map(|i| epanechnikov(-0.2 + 0.4 * (i as f64 + 0.5) / q as f64, 0.2)).sum::<f64>()
            * 0.4
            / q as f64;
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reproduces_affine_surface() {
        let mut pts = Vec::new();
        let mut rng = SeedSpec::new(1).stream("pts", 0);
        for _ in 0..400 {
            let (u, v) = (rng.next_f64(), rng.next_f64());
            pts.push(PseudoPoint { u, v, r: 1.0 + 2.0 * u + 3.0 * v });
        }
        let fit = local_linear_fit(&pts, 0.5, 0.5, 0.3, 0.0).unwrap();
        assert!((fit - 3.5).abs() < 1e-8);
    }

    #[test]
    fn constant_products_single_subject() {
        let ds = FunctionalDataset::new(1, 1, 2, vec![0.3, 0.6], vec![2.0, 1.5]).unwrap();
        let cfg = LoclinConfig { bandwidth: 1.0, ..LoclinConfig::default() };
        let fit = loclin_fit_at(&ds, &cfg, 0.45, 0.45).unwrap();
        assert!((fit - 3.0).abs() < 1e-8);
    }

    #[test]
    fn singular_without_ridge() {
        let ds = FunctionalDataset::new(1, 1, 2, vec![0.1, 0.15], vec![1.0, 1.0]).unwrap();
        let cfg = LoclinConfig { bandwidth: 0.05, ridge: 0.0, ..LoclinConfig::default() };
        assert!(matches!(loclin_fit_at(&ds, &cfg, 0.9, 0.9), Err(Error::InsufficientLocalData)));
        let cfg = LoclinConfig { ridge: 1e-10, ..cfg };
        assert_eq!(loclin_fit_at(&ds, &cfg, 0.9, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn rejects_multivariate_data() {
        let ds = FunctionalDataset::new(2, 1, 2, vec![0.1, 0.2, 0.3, 0.4], vec![1.0, 1.0]).unwrap();
        assert!(matches!(loclin_field(&ds, &LoclinConfig::default()), Err(Error::LoclinDimension)));
    }

    #[test]
    fn bilinear_hits_nodes() {
        let g = 3;
        let vals: Vec<f64> = (0..9).map(|i| ((i / 3) * (i % 3)) as f64).collect();
        assert_eq!(bilinear(&vals, g, 0.5, 1.0), 2.0);
        assert_eq!(bilinear(&vals, g, 1.0, 1.0), 4.0);
        assert!((bilinear(&vals, g, 0.75, 0.75) - 2.25).abs() < 1e-15);
    }
}
