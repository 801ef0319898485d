//! Versioned run configuration shared by the command-line subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::NoiseSpec;
use crate::error::{Error, Result};
use crate::estimator::{unknown_estimator, EstimatorSpec};
use crate::rng::SeedSpec;
use crate::sweep::{ExperimentPlan, RiskConfig, TheoryConfig};
use crate::synth::{make_psd_coeffs, SmoothKernel, SpectralCoefficients, TruthSpec, DEFAULT_BASIS_SIZE};

pub const SCHEMA_VERSION: u32 = 1;

fn default_size() -> usize {
    DEFAULT_BASIS_SIZE
}

/// Ground truth as written in a config: explicit coefficients, a seeded
/// random tensor member, or a Matérn kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthConfig {
    TensorSobolev { coefficients: SpectralCoefficients },
    TensorSobolevRandom {
        alpha: f64,
        #[serde(default = "default_size")]
        size: usize,
        target_norm: f64,
        seed: SeedSpec,
    },
    AnisotropicSmooth { kernel: SmoothKernel },
}

impl TruthConfig {
    pub fn resolve(&self) -> Result<TruthSpec> {
        Ok(match self {
            TruthConfig::TensorSobolev { coefficients } => TruthSpec::TensorSobolev { coefficients: coefficients.clone() },
            TruthConfig::TensorSobolevRandom { alpha, size, target_norm, seed } => TruthSpec::TensorSobolev {
                coefficients: make_psd_coeffs(*alpha, *size, *target_norm, *seed)?,
            },
            TruthConfig::AnisotropicSmooth { kernel } => {
                SmoothKernel::with_order(kernel.variance, kernel.length_scales.clone(), kernel.order)?;
                TruthSpec::AnisotropicSmooth { kernel: kernel.clone() }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub replicates: usize,
    #[serde(default)]
    pub theory: TheoryConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: SeedSpec,
    pub truth: TruthConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn config_error(pointer: &str, message: impl Into<String>) -> Error {
    Error::Config { pointer: pointer.to_string(), message: message.into() }
}

/// JSON pointer of a `serde_path_to_error` path: `a.b[2]` becomes `/a/b/2`.
fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

impl RunConfig {
    /// Parses and validates; errors carry the JSON pointer of the offending
    /// value.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer_of(e.path());
            config_error(&pointer, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error("/", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(
                "/schema_version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let truth = self.truth.resolve().map_err(|e| config_error("/truth", e.to_string()))?;
        let d = &self.data;
        if d.n == 0 {
            return Err(config_error("/data/n", "must be at least 1"));
        }
        if d.m < 2 {
            return Err(config_error("/data/m", "must be at least 2"));
        }
        if d.d != truth.dim() {
            return Err(config_error("/data/d", format!("truth has dimension {}, config says {}", truth.dim(), d.d)));
        }
        if !(d.noise.sigma >= 0.0) {
            return Err(config_error("/data/noise/sigma", "must be nonnegative"));
        }
        if self.risk.nodes < 4 {
            return Err(config_error("/risk/nodes", "must be at least 4"));
        }
        if let Some(sw) = &self.sweep {
            if sw.n_grid.is_empty() || sw.n_grid.contains(&0) {
                return Err(config_error("/sweep/n_grid", "must be a nonempty list of positive integers"));
            }
            if sw.m_grid.is_empty() || sw.m_grid.iter().any(|&m| m < 2) {
                return Err(config_error("/sweep/m_grid", "must be a nonempty list of integers >= 2"));
            }
            if sw.replicates == 0 {
                return Err(config_error("/sweep/replicates", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn truth_spec(&self) -> Result<TruthSpec> {
        self.truth.resolve()
    }

    /// The configured estimator with this name, or its defaults.
    pub fn estimator(&self, name: &str) -> Result<EstimatorSpec> {
        if let Some(spec) = self.estimators.iter().find(|e| e.name() == name) {
            return Ok(spec.clone());
        }
        EstimatorSpec::default_for(name).map_err(|_| unknown_estimator(name))
    }

    pub fn plan(&self) -> Result<ExperimentPlan> {
        let sw = self.sweep.as_ref().ok_or_else(|| config_error("/sweep", "a sweep section is required"))?;
        if self.estimators.is_empty() {
            return Err(config_error("/estimators", "a sweep needs at least one estimator"));
        }
        Ok(ExperimentPlan {
            truth: self.truth_spec()?,
            noise: self.data.noise,
            estimators: self.estimators.clone(),
            n_grid: sw.n_grid.clone(),
            m_grid: sw.m_grid.clone(),
            replicates: sw.replicates,
            seed: self.seed,
            risk: self.risk,
            theory: sw.theory,
        })
    }
}

/// Hex SHA-256 of the compact JSON serialization of a truth.
pub fn truth_digest(truth: &TruthSpec) -> String {
    let json = serde_json::to_string(truth).expect("truth serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "seed": 7,
        "truth": {"family": "tensor_sobolev_random", "alpha": 2.0, "target_norm": 100.0, "seed": 3},
        "data": {"n": 4, "m": 3, "d": 1, "noise": {"sigma": 0.5}}
    }"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.data.m, 3);
        assert_eq!(cfg.estimator("spectral").unwrap().name(), "spectral");
        assert!(cfg.estimator("svm").is_err());
        assert!(cfg.plan().is_err());
    }

    #[test]
    fn errors_carry_pointers() {
        let bad = MINIMAL.replace(r#""m": 3"#, r#""m": "three""#);
        match RunConfig::from_json(&bad) {
            Err(Error::Config { pointer, .. }) => assert_eq!(pointer, "/data/m"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = MINIMAL.replace(r#""m": 3"#, r#""m": 1"#);
        match RunConfig::from_json(&bad) {
            Err(Error::Config { pointer, .. }) => assert_eq!(pointer, "/data/m"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = MINIMAL.replace(r#""d": 1"#, r#""d": 2"#);
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config { .. })));
        let bad = MINIMAL.replace(r#""seed": 7"#, r#""seed": 7, "extra": true"#);
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config { .. })));
    }

    #[test]
    fn digest_is_stable_hex() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        let t = cfg.truth_spec().unwrap();
        let a = truth_digest(&t);
        assert_eq!(a.len(), 64);
        assert_eq!(a, truth_digest(&t));
    }
}
