use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// `n` subjects, each observed at `m` locations in `[0,1]^d`.
///
/// Locations are stored subject-major as `n * m * d` coordinates and values as
/// `n * m` measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    d: usize,
    n: usize,
    m: usize,
    locations: Vec<f64>,
    values: Vec<f64>,
}

impl FunctionalDataset {
    pub fn new(d: usize, n: usize, m: usize, locations: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::InvalidInput("need n >= 1 and d >= 1".into()));
        }
        if m < 2 {
            return Err(Error::TooFewMeasurements);
        }
        if locations.len() != n * m * d || values.len() != n * m {
            return Err(Error::InvalidInput(format!(
                "expected {} coordinates and {} values, got {} and {}",
                n * m * d,
                n * m,
                locations.len(),
                values.len()
            )));
        }
        if let Some(bad) = locations.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidInput(format!(
                "location coordinate {} of subject {} lies outside [0, 1]",
                locations[bad],
                bad / (m * d)
            )));
        }
        if values.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidInput("non-finite measurement".into()));
        }
        Ok(Self { d, n, m, locations, values })
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn location(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.m + j) * self.d;
        &self.locations[start..start + self.d]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    /// All locations of subject `i`, `m * d` coordinates.
    pub fn subject_locations(&self, i: usize) -> &[f64] {
        let w = self.m * self.d;
        &self.locations[i * w..(i + 1) * w]
    }

    pub fn subject_values(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Dataset restricted to the given subjects, in the given order.
    pub fn select_subjects(&self, subjects: &[usize]) -> Result<Self> {
        let mut locs = Vec::with_capacity(subjects.len() * self.m * self.d);
        let mut vals = Vec::with_capacity(subjects.len() * self.m);
        for &i in subjects {
            if i >= self.n {
                return Err(Error::InvalidInput(format!("subject {i} out of range")));
            }
            locs.extend_from_slice(self.subject_locations(i));
            vals.extend_from_slice(self.subject_values(i));
        }
        Self::new(self.d, subjects.len(), self.m, locs, vals)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
}

/// Additive measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub kind: NoiseKind,
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64) -> Self {
        assert!(sigma >= 0.0, "sigma must be nonnegative");
        Self { kind: NoiseKind::Gaussian, sigma }
    }

    pub fn none() -> Self {
        Self::gaussian(0.0)
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => {
                if self.sigma == 0.0 {
                    0.0
                } else {
                    self.sigma * rng.standard_normal()
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            FunctionalDataset::new(1, 1, 1, vec![0.5], vec![1.0]),
            Err(Error::TooFewMeasurements)
        ));
        assert!(FunctionalDataset::new(1, 1, 2, vec![0.5], vec![1.0, 2.0]).is_err());
        assert!(FunctionalDataset::new(1, 1, 2, vec![0.5, 1.5], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn accessors() {
        let ds = FunctionalDataset::new(2, 2, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        assert_eq!(ds.location(1, 0), &[0.5, 0.6]);
        assert_eq!(ds.value(1, 1), 4.0);
        let sub = ds.select_subjects(&[1]).unwrap();
        assert_eq!(sub.n(), 1);
        assert_eq!(sub.subject_values(0), &[3.0, 4.0]);
    }
}
