//! The evaluatable covariance-field abstraction shared by the ground truth and
//! every estimator.

use std::sync::Arc;

/// Saturate `x` into `[-beta, beta]`.
#[inline]
pub fn clip(x: f64, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    x.clamp(-beta, beta)
}

/// A symmetric function on `[0,1]^d x [0,1]^d` with a uniform bound.
///
/// Implementations must be exactly symmetric in floating point:
/// `eval(s, t) == eval(t, s)` bit for bit.
pub trait CovarianceField: Send + Sync {
    /// Input dimension `d` of each argument.
    fn dim(&self) -> usize;

    /// Uniform sup-norm bound `B_K` for `|eval(s, t)|`.
    fn bound(&self) -> f64;

    fn eval(&self, s: &[f64], t: &[f64]) -> f64;
}

impl<F: CovarianceField + ?Sized> CovarianceField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn bound(&self) -> f64 {
        (**self).bound()
    }
    fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        (**self).eval(s, t)
    }
}

impl<F: CovarianceField + ?Sized> CovarianceField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn bound(&self) -> f64 {
        (**self).bound()
    }
    fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        (**self).eval(s, t)
    }
}

impl<F: CovarianceField + ?Sized> CovarianceField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn bound(&self) -> f64 {
        (**self).bound()
    }
    fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        (**self).eval(s, t)
    }
}

/// `true` when `s` should be swapped with `t` to reach the canonical
/// (lexicographically ordered) argument pair.
#[inline]
pub(crate) fn needs_swap(s: &[f64], t: &[f64]) -> bool {
    for (a, b) in s.iter().zip(t) {
        if a < b {
            return false;
        }
        if a > b {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantField {
    pub value: f64,
    pub d: usize,
}

impl ConstantField {
    pub fn new(value: f64, d: usize) -> Self {
        Self { value, d }
    }
}

impl CovarianceField for ConstantField {
    fn dim(&self) -> usize {
        self.d
    }
    fn bound(&self) -> f64 {
        self.value.abs().max(f64::MIN_POSITIVE)
    }
    fn eval(&self, _s: &[f64], _t: &[f64]) -> f64 {
        self.value
    }
}

/// Wraps a closure; the caller is responsible for symmetry.
pub struct FnField<F> {
    f: F,
    d: usize,
    bound: f64,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    pub fn new(d: usize, bound: f64, f: F) -> Self {
        Self { f, d, bound }
    }
}

impl<F> CovarianceField for FnField<F>
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.d
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        (self.f)(s, t)
    }
}

/// Points of `[0,1]^d` on which fields are compared.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub d: usize,
    points: Vec<f64>,
}

impl EvalGrid {
    /// `g` equally spaced points per axis including both endpoints.
    pub fn uniform(g: usize, d: usize) -> Self {
        assert!(g >= 1 && d >= 1);
        let axis: Vec<f64> = if g == 1 {
            vec![0.5]
        } else {
            (0..g).map(|i| i as f64 / (g - 1) as f64).collect()
        };
        let total = g.pow(d as u32);
        let mut points = Vec::with_capacity(total * d);
        for mut idx in 0..total {
            for _ in 0..d {
                points.push(axis[idx % g]);
                idx /= g;
            }
        }
        Self { d, points }
    }

    pub fn from_points(d: usize, points: Vec<f64>) -> Self {
        assert!(d >= 1 && points.len() % d == 0);
        Self { d, points }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }
}

/// Max of `|a - b|` over all grid pairs; a lower bound on the sup-norm.
pub fn field_difference_sup<A, B>(a: &A, b: &B, grid: &EvalGrid) -> f64
where
    A: CovarianceField + ?Sized,
    B: CovarianceField + ?Sized,
{
    assert!(!grid.is_empty(), "grid must be nonempty");
    let mut sup = 0.0_f64;
    for s in grid.iter() {
        for t in grid.iter() {
            sup = sup.max((a.eval(s, t) - b.eval(s, t)).abs());
        }
    }
    sup
}
