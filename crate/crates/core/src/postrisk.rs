//! Squared L2 risk under the uniform design and PSD projection on a grid.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{clip, needs_swap, CovarianceField};
use crate::numeric::pairwise_sum;
use crate::rng::SeedSpec;

pub const DEFAULT_GL_NODES: usize = 64;
pub const DEFAULT_QMC_POINTS: usize = 1 << 16;

/// Gauss–Legendre nodes and weights on `[0, 1]`, by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMethod {
    GaussLegendre,
    Qmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskValue {
    pub value: f64,
    pub method: RiskMethod,
    /// Nodes per axis (Gauss–Legendre) or total points (QMC).
    pub nodes: usize,
}

/// `||a - b||_2^2` under the uniform measure on `[0,1]^d x [0,1]^d`.
///
/// `d = 1` uses a `nodes x nodes` tensor Gauss–Legendre rule; `d >= 2` uses
/// `nodes^2` points of a Halton sequence in `2d` dimensions with a fixed
/// Cranley–Patterson shift.
pub fn l2_risk<A, B>(a: &A, b: &B, d: usize, nodes: usize) -> Result<RiskValue>
where
    A: CovarianceField + ?Sized,
    B: CovarianceField + ?Sized,
{
    if nodes < 4 {
        return Err(Error::InvalidInput("need at least 4 quadrature nodes".into()));
    }
    if a.dim() != d || b.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: if a.dim() != d { a.dim() } else { b.dim() } });
    }
    if d == 1 {
        let (x, w) = gauss_legendre(nodes);
        let rows: Vec<f64> = (0..nodes)
            .into_par_iter()
            .map(|i| {
                let row: Vec<f64> = (0..nodes)
                    .map(|j| {
                        let diff = a.eval(&[x[i]], &[x[j]]) - b.eval(&[x[i]], &[x[j]]);
                        w[j] * diff * diff
                    })
                    .collect();
                w[i] * pairwise_sum(&row)
            })
            .collect();
        Ok(RiskValue { value: pairwise_sum(&rows), method: RiskMethod::GaussLegendre, nodes })
    } else {
        let count = nodes * nodes;
        let points = halton_points(count, 2 * d, SeedSpec::new(0x5EED_0F_2D));
        let terms: Vec<f64> = points
            .par_chunks(2 * d)
            .map(|p| {
                let diff = a.eval(&p[..d], &p[d..]) - b.eval(&p[..d], &p[d..]);
                diff * diff
            })
            .collect();
        Ok(RiskValue { value: pairwise_sum(&terms) / count as f64, method: RiskMethod::Qmc, nodes: count })
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Shifted Halton points, `count x dims` row-major, skipping index 0.
pub fn halton_points(count: usize, dims: usize, seed: SeedSpec) -> Vec<f64> {
    assert!(dims <= PRIMES.len(), "Halton sequence supports up to {} dimensions", PRIMES.len());
    let mut rng = seed.stream("halton-shift", dims as u64);
    let shift: Vec<f64> = (0..dims).map(|_| rng.next_f64()).collect();
    let mut out = Vec::with_capacity(count * dims);
    for i in 0..count {
        for (k, sh) in shift.iter().enumerate() {
            let v = radical_inverse(i as u64 + 1, PRIMES[k]) + sh;
            out.push(v - v.floor());
        }
    }
    out
}

/// Field sampled on `g` uniform points per axis of `[0,1]^d`, stored as a
/// `g^d x g^d` symmetric matrix and interpolated multilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    g: usize,
    d: usize,
    values: DMatrix<f64>,
    bound: f64,
    asymmetry: f64,
}

impl GridField {
    pub fn from_values(g: usize, d: usize, values: DMatrix<f64>, bound: f64) -> Result<Self> {
        let size = g.pow(d as u32);
        if g < 2 || values.nrows() != size || values.ncols() != size {
            return Err(Error::InvalidInput(format!("grid values must be {size} x {size} with g >= 2")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite grid value".into()));
        }
        let mut asym = 0.0f64;
        for a in 0..size {
            for b in 0..a {
                asym = asym.max((values[(a, b)] - values[(b, a)]).abs());
            }
        }
        let mut values = values;
        if asym > 0.0 {
            values = (&values + values.transpose()) * 0.5;
        }
        Ok(Self { g, d, values, bound, asymmetry: asym })
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Largest `|V_ab - V_ba|` seen before symmetrization.
    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    /// Node coordinate along each axis.
    pub fn node(&self, i: usize) -> f64 {
        i as f64 / (self.g - 1) as f64
    }

    /// Coordinates of flat grid point `idx`.
    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        (0..self.d)
            .map(|_| {
                let c = self.node(idx % self.g);
                idx /= self.g;
                c
            })
            .collect()
    }

    fn corners(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0f64)];
        let mut stride = 1;
        for &xi in x {
            let pos = xi.clamp(0.0, 1.0) * (self.g - 1) as f64;
            let i = (pos.floor() as usize).min(self.g - 2);
            let f = pos - i as f64;
            let mut next = Vec::with_capacity(out.len() * 2);
            for &(idx, w) in &out {
                next.push((idx + i * stride, w * (1.0 - f)));
                next.push((idx + (i + 1) * stride, w * f));
            }
            out = next;
            stride *= self.g;
        }
        out
    }

    pub fn unclipped(&self, s: &[f64], t: &[f64]) -> f64 {
        let (s, t) = if needs_swap(s, t) { (t, s) } else { (s, t) };
        let cs = self.corners(s);
        let ct = self.corners(t);
        let mut acc = 0.0;
        for &(a, wa) in &cs {
            let mut row = 0.0;
            for &(b, wb) in &ct {
                row += wb * self.values[(a, b)];
            }
            acc += wa * row;
        }
        acc
    }

    pub fn export(&self) -> GridHeader {
        GridHeader { kind: "grid".into(), g: self.g, d: self.d, bound: self.bound, values_csv: None }
    }

    /// `s_index,t_index,value` rows with a header line; values use the
    /// shortest round-trip decimal form.
    pub fn to_csv(&self) -> String {
        let size = self.values.nrows();
        let mut out = String::from("s_index,t_index,value\n");
        for a in 0..size {
            for b in 0..size {
                out.push_str(&format!("{a},{b},{:?}\n", self.values[(a, b)]));
            }
        }
        out
    }

    pub fn from_csv(header: &GridHeader, csv_text: &str) -> Result<Self> {
        let size = header.g.pow(header.d as u32);
        let mut values = DMatrix::from_element(size, size, f64::NAN);
        let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            let parse = |k: usize| rec.get(k).ok_or_else(|| Error::Format("short grid row".into()));
            let a: usize = parse(0)?.parse().map_err(|_| Error::Format("bad s_index".into()))?;
            let b: usize = parse(1)?.parse().map_err(|_| Error::Format("bad t_index".into()))?;
            let v: f64 = parse(2)?.parse().map_err(|_| Error::Format("bad value".into()))?;
            if a >= size || b >= size {
                return Err(Error::Format(format!("grid index ({a}, {b}) out of range")));
            }
            values[(a, b)] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Format("grid CSV is missing entries".into()));
        }
        Self::from_values(header.g, header.d, values, header.bound)
    }
}

impl CovarianceField for GridField {
    fn dim(&self) -> usize {
        self.d
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        clip(self.unclipped(s, t), self.bound)
    }
}

/// JSON header accompanying a grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub kind: String,
    pub g: usize,
    pub d: usize,
    pub bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values_csv: Option<String>,
}

pub fn to_grid<F: CovarianceField + ?Sized>(field: &F, g: usize, d: usize) -> Result<GridField> {
    if g < 2 {
        return Err(Error::InvalidInput("grid needs at least 2 points per axis".into()));
    }
    if field.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: field.dim() });
    }
    let size = g.pow(d as u32);
    let proto = GridField { g, d, values: DMatrix::zeros(1, 1), bound: field.bound(), asymmetry: 0.0 };
    let points: Vec<Vec<f64>> = (0..size).map(|i| proto.point(i)).collect();
    let rows: Vec<Vec<f64>> = points
        .par_iter()
        .map(|s| points.iter().map(|t| field.eval(s, t)).collect())
        .collect();
    let values = DMatrix::from_fn(size, size, |a, b| rows[a][b]);
    GridField::from_values(g, d, values, field.bound())
}

/// Nearest PSD matrix in Frobenius norm: clip negative eigenvalues to zero.
pub fn psd_project(gf: &GridField) -> Result<GridField> {
    let size = gf.values.nrows();
    let eig = SymmetricEigen::try_new(gf.values.clone(), f64::EPSILON, 10_000).ok_or(Error::Eigen)?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (c, lam) in clipped.iter().enumerate() {
        scaled.column_mut(c).scale_mut(*lam);
    }
    let recon = &scaled * u.transpose();
    let sym = DMatrix::from_fn(size, size, |a, b| 0.5 * (recon[(a, b)] + recon[(b, a)]));
    GridField::from_values(gf.g, gf.d, sym, gf.bound)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ConstantField;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        // int_0^1 t^k = 1/(k+1) for k <= 15.
        for k in 0..16 {
            let q: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(k)).sum();
            assert!((q - 1.0 / (k + 1) as f64).abs() < 1e-14, "k = {k}");
        }
        let (x, _) = gauss_legendre(5);
        assert!((x[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_difference_risk() {
        let a = ConstantField::new(0.75, 1);
        let b = ConstantField::new(0.25, 1);
        assert!((l2_risk(&a, &b, 1, 16).unwrap().value - 0.25).abs() < 1e-14);
        assert!(l2_risk(&a, &a, 1, 16).unwrap().value <= 1e-14);
        let a2 = ConstantField::new(0.75, 2);
        let b2 = ConstantField::new(0.25, 2);
        let r = l2_risk(&a2, &b2, 2, 16).unwrap();
        assert_eq!(r.method, RiskMethod::Qmc);
        assert!((r.value - 0.25).abs() < 1e-14);
        assert!(l2_risk(&a, &b, 1, 3).is_err());
    }

    #[test]
    fn toy_projection_keeps_positive_part() {
        // [[0.5, 1.5], [1.5, 0.5]] has eigenvalues 2 and -1.
        let v = DMatrix::from_row_slice(2, 2, &[0.5, 1.5, 1.5, 0.5]);
        let gf = GridField::from_values(2, 1, v, 10.0).unwrap();
        let p = psd_project(&gf).unwrap();
        for x in p.values().iter() {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_grid_is_all_ones_and_interpolates() {
        let gf = to_grid(&ConstantField::new(1.0, 1), 5, 1).unwrap();
        assert!(gf.values().iter().all(|v| *v == 1.0));
        assert_eq!(gf.asymmetry(), 0.0);
        assert_eq!(gf.eval(&[0.33], &[0.71]), 1.0);
    }

    #[test]
    fn halton_points_in_unit_cube() {
        let p = halton_points(100, 4, SeedSpec::new(1));
        assert!(p.iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn csv_round_trip() {
        let v = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.2, 1.0 / 3.0]);
        let gf = GridField::from_values(2, 1, v, 5.0).unwrap();
        let back = GridField::from_csv(&gf.export(), &gf.to_csv()).unwrap();
        assert_eq!(back, gf);
    }
}
