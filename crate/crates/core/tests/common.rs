#![allow(dead_code)]

use covfield::dataset::FunctionalDataset;
use covfield::rng::{SeedSpec, Stream};

pub fn uniform_dataset(n: usize, m: usize, d: usize, seed: u64) -> FunctionalDataset {
    let mut rng = SeedSpec::new(seed).stream("test-data", 0);
    let locations = (0..n * m * d).map(|_| rng.next_f64()).collect();
    let values = (0..n * m).map(|_| rng.standard_normal()).collect();
    FunctionalDataset::new(d, n, m, locations, values).unwrap()
}

pub fn stream(seed: u64, tag: &str) -> Stream {
    SeedSpec::new(seed).stream(tag, 0)
}

/// Ordered-pair double loop, written independently of the library.
pub fn brute_pair_loss(data: &FunctionalDataset, k: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let (n, m) = (data.n(), data.m());
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..m {
            for l in 0..m {
                if j != l {
                    let r = data.value(i, j) * data.value(i, l) - k(data.location(i, j), data.location(i, l));
                    sum += r * r;
                }
            }
        }
    }
    sum / (n * m * (m - 1)) as f64
}

pub fn fourier(j: usize, t: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    if j == 1 {
        1.0
    } else if j % 2 == 0 {
        2f64.sqrt() * (tau * (j / 2) as f64 * t).cos()
    } else {
        2f64.sqrt() * (tau * (j / 2) as f64 * t).sin()
    }
}
