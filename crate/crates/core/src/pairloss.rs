//! Pairwise least-squares objective over within-subject pairs.
//!
//! The full loss averages `(Y_ij Y_ik - K(T_ij, T_ik))^2` over all ordered
//! pairs `j != k`; the split loss uses the `floor(m/2)` disjoint pairs
//! `(order[j], order[floor(m/2) + j])` of a permutation, and averaging it over
//! all `m!` permutations recovers the full loss.

use itertools::Itertools;
use rayon::prelude::*;

use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::field::CovarianceField;
use crate::numeric::pairwise_sum;

/// Largest `m` accepted by the permutation oracle.
pub const ORACLE_MAX_M: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLossValue {
    pub value: f64,
    /// Number of ordered pairs entering the average.
    pub pair_count: usize,
}

fn subject_full_sum<K: CovarianceField + ?Sized>(data: &FunctionalDataset, k: &K, i: usize) -> f64 {
    let m = data.m();
    let y = data.subject_values(i);
    let mut acc = 0.0;
    for j in 0..m {
        let tj = data.location(i, j);
        for l in 0..m {
            if l == j {
                continue;
            }
            let r = y[j] * y[l] - k.eval(tj, data.location(i, l));
            acc += r * r;
        }
    }
    acc
}

pub fn full_pair_loss<K: CovarianceField + ?Sized>(data: &FunctionalDataset, k: &K) -> Result<PairLossValue> {
    let m = data.m();
    if m < 2 {
        return Err(Error::TooFewMeasurements);
    }
    let per_subject: Vec<f64> = (0..data.n())
        .into_par_iter()
        .map(|i| subject_full_sum(data, k, i))
        .collect();
    let pair_count = data.n() * m * (m - 1);
    Ok(PairLossValue {
        value: pairwise_sum(&per_subject) / pair_count as f64,
        pair_count,
    })
}

fn check_permutation(order: &[usize], m: usize) -> bool {
    if order.len() != m {
        return false;
    }
    let mut seen = vec![false; m];
    for &o in order {
        if o >= m || seen[o] {
            return false;
        }
        seen[o] = true;
    }
    true
}

/// Split-pair loss with a 0-based permutation of `0..m` per subject.
pub fn split_pair_loss<K: CovarianceField + ?Sized>(
    data: &FunctionalDataset,
    k: &K,
    orders: &[Vec<usize>],
) -> Result<PairLossValue> {
    let m = data.m();
    if m < 2 {
        return Err(Error::TooFewMeasurements);
    }
    if orders.len() != data.n() {
        return Err(Error::InvalidInput(format!(
            "expected {} permutations, got {}",
            data.n(),
            orders.len()
        )));
    }
    if let Some(subject) = orders.iter().position(|o| !check_permutation(o, m)) {
        return Err(Error::InvalidPermutation { subject });
    }
    let half = m / 2;
    let per_subject: Vec<f64> = (0..data.n())
        .into_par_iter()
        .map(|i| split_subject_sum(data, k, i, &orders[i], half))
        .collect();
    let pair_count = data.n() * half;
    Ok(PairLossValue {
        value: pairwise_sum(&per_subject) / pair_count as f64,
        pair_count,
    })
}

fn split_subject_sum<K: CovarianceField + ?Sized>(
    data: &FunctionalDataset,
    k: &K,
    i: usize,
    order: &[usize],
    half: usize,
) -> f64 {
    let y = data.subject_values(i);
    let mut acc = 0.0;
    for j in 0..half {
        let (a, b) = (order[j], order[half + j]);
        let r = y[a] * y[b] - k.eval(data.location(i, a), data.location(i, b));
        acc += r * r;
    }
    acc
}

/// Average of the split loss over all `m!` permutations, the same
/// permutation applied to every subject. Exponential in `m`; oracle use only.
pub fn permutation_average_loss<K: CovarianceField + ?Sized>(data: &FunctionalDataset, k: &K) -> Result<f64> {
    let m = data.m();
    if m < 2 {
        return Err(Error::TooFewMeasurements);
    }
    if m > ORACLE_MAX_M {
        return Err(Error::OracleLimit(m));
    }
    let half = m / 2;
    let mut totals = Vec::new();
    for perm in (0..m).permutations(m) {
        let per_subject: Vec<f64> = (0..data.n())
            .map(|i| split_subject_sum(data, k, i, &perm, half))
            .collect();
        totals.push(pairwise_sum(&per_subject) / (data.n() * half) as f64);
    }
    Ok(pairwise_sum(&totals) / totals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ConstantField;

    fn toy(y: &[f64]) -> FunctionalDataset {
        let m = y.len();
        let locs = (0..m).map(|j| j as f64 / m as f64).collect();
        FunctionalDataset::new(1, 1, m, locs, y.to_vec()).unwrap()
    }

    #[test]
    fn full_loss_examples() {
        let ds = toy(&[1.0, 2.0]);
        let l = full_pair_loss(&ds, &ConstantField::new(0.0, 1)).unwrap();
        assert_eq!(l.value, 4.0);
        assert_eq!(l.pair_count, 2);
        assert_eq!(full_pair_loss(&ds, &ConstantField::new(2.0, 1)).unwrap().value, 0.0);
        let ds3 = toy(&[1.0, -1.0, 2.0]);
        let l3 = full_pair_loss(&ds3, &ConstantField::new(0.0, 1)).unwrap();
        assert!((l3.value - 3.0).abs() < 1e-15);
        assert_eq!(l3.pair_count, 6);
    }

    #[test]
    fn split_loss_examples() {
        let zero = ConstantField::new(0.0, 1);
        let ds = toy(&[1.0, 2.0]);
        assert_eq!(split_pair_loss(&ds, &zero, &[vec![0, 1]]).unwrap().value, 4.0);
        let ds3 = toy(&[1.0, -1.0, 2.0]);
        let l = split_pair_loss(&ds3, &zero, &[vec![0, 1, 2]]).unwrap();
        assert_eq!(l.value, 1.0);
        assert_eq!(l.pair_count, 1);
        let exact = ConstantField::new(-1.0, 1);
        assert_eq!(split_pair_loss(&ds3, &exact, &[vec![0, 1, 2]]).unwrap().value, 0.0);
    }

    #[test]
    fn split_loss_rejects_bad_permutations() {
        let ds = toy(&[1.0, 2.0, 3.0]);
        let zero = ConstantField::new(0.0, 1);
        assert!(matches!(
            split_pair_loss(&ds, &zero, &[vec![0, 0, 2]]),
            Err(Error::InvalidPermutation { subject: 0 })
        ));
        assert!(split_pair_loss(&ds, &zero, &[vec![0, 1]]).is_err());
    }

    #[test]
    fn permutation_average_examples() {
        let zero = ConstantField::new(0.0, 1);
        let ds2 = toy(&[1.0, 2.0]);
        assert_eq!(
            permutation_average_loss(&ds2, &zero).unwrap(),
            full_pair_loss(&ds2, &zero).unwrap().value
        );
        let ds3 = toy(&[1.0, -1.0, 2.0]);
        assert!((permutation_average_loss(&ds3, &zero).unwrap() - 3.0).abs() < 1e-15);
        let ds7 = toy(&[1.0; 7]);
        assert!(matches!(permutation_average_loss(&ds7, &zero), Err(Error::OracleLimit(7))));
    }
}
