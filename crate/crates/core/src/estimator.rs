//! Uniform configuration and dispatch for the three estimators.

use serde::{Deserialize, Serialize};

use crate::dataset::FunctionalDataset;
use crate::dnn::{arch_from_theory, train, ArchRule, MlpField, Regime, TrainConfig};
use crate::error::{Error, Result};
use crate::field::CovarianceField;
use crate::loclin::{loclin_field, rule_bandwidth, select_bandwidth, LoclinConfig, LoclinField};
use crate::pairloss::full_pair_loss;
use crate::rng::SeedSpec;
use crate::spectral::{fit_spectral, m_from_theory, spectral_field, SpectralFit, SpectralField};

pub const ESTIMATOR_NAMES: [&str; 3] = ["dnn", "loclin", "spectral"];

/// Truncation level of the spectral estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevelRule {
    Fixed { level: usize },
    /// `m_from_theory(n, m, alpha, c_m)`.
    Theory { alpha: f64, c_m: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum BandwidthRule {
    Fixed { h: f64 },
    /// `c (n m^2)^(-1/6)`.
    Order { c: f64 },
    /// Subject-level cross-validation over `candidates`.
    Cv { candidates: Vec<f64>, folds: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ArchChoice {
    Fixed { depth: usize, width: usize },
    Theory {
        #[serde(flatten)]
        regime: Regime,
        #[serde(default)]
        constants: ArchRule,
    },
}

fn default_bound() -> f64 {
    10.0
}

fn default_grid() -> usize {
    65
}

fn default_loclin_ridge() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    Spectral {
        level: LevelRule,
        #[serde(default)]
        ridge: Option<f64>,
        #[serde(default = "default_bound")]
        bound: f64,
    },
    Loclin {
        bandwidth: BandwidthRule,
        #[serde(default = "default_loclin_ridge")]
        ridge: f64,
        #[serde(default = "default_grid")]
        grid: usize,
        #[serde(default = "default_bound")]
        bound: f64,
    },
    Dnn {
        arch: ArchChoice,
        #[serde(default)]
        train: TrainConfig,
    },
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Spectral { .. } => "spectral",
            EstimatorSpec::Loclin { .. } => "loclin",
            EstimatorSpec::Dnn { .. } => "dnn",
        }
    }

    /// A default configuration by name.
    pub fn default_for(name: &str) -> Result<Self> {
        match name {
            "spectral" => Ok(EstimatorSpec::Spectral {
                level: LevelRule::Theory { alpha: 2.0, c_m: 4.0 },
                ridge: None,
                bound: default_bound(),
            }),
            "loclin" => Ok(EstimatorSpec::Loclin {
                bandwidth: BandwidthRule::Order { c: 1.0 },
                ridge: default_loclin_ridge(),
                grid: default_grid(),
                bound: default_bound(),
            }),
            "dnn" => Ok(EstimatorSpec::Dnn {
                arch: ArchChoice::Theory {
                    regime: Regime::TensorSobolev { alpha: 2.0 },
                    constants: ArchRule::default(),
                },
                train: TrainConfig::default(),
            }),
            other => Err(unknown_estimator(other)),
        }
    }
}

pub fn unknown_estimator(name: &str) -> Error {
    Error::InvalidInput(format!("unknown estimator {name:?}; valid: {}", ESTIMATOR_NAMES.join(", ")))
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Spectral { fit: SpectralFit, field: SpectralField },
    Loclin { field: LoclinField },
    Dnn { field: MlpField, trajectory: Vec<f64>, arch: (usize, usize) },
}

impl FittedModel {
    pub fn field(&self) -> &dyn CovarianceField {
        match self {
            FittedModel::Spectral { field, .. } => field,
            FittedModel::Loclin { field } => field,
            FittedModel::Dnn { field, .. } => field,
        }
    }

    /// Short description of the data-dependent tuning, e.g. `M=5`.
    pub fn tuning(&self) -> String {
        match self {
            FittedModel::Spectral { fit, .. } => format!("M={}", fit.index_set().level()),
            FittedModel::Loclin { field } => format!("h={:?}", field.bandwidth()),
            FittedModel::Dnn { arch, .. } => format!("L={} W={}", arch.0, arch.1),
        }
    }
}

/// Fits `spec` to `data`. `seed` replaces any seed carried by `spec`.
pub fn fit_estimator(spec: &EstimatorSpec, data: &FunctionalDataset, seed: SeedSpec) -> Result<FittedModel> {
    match spec {
        EstimatorSpec::Spectral { level, ridge, bound } => {
            let level = match *level {
                LevelRule::Fixed { level } => level,
                LevelRule::Theory { alpha, c_m } => m_from_theory(data.n(), data.m(), alpha, c_m),
            };
            let fit = fit_spectral(data, level, *ridge)?;
            let field = spectral_field(&fit, *bound);
            Ok(FittedModel::Spectral { fit, field })
        }
        EstimatorSpec::Loclin { bandwidth, ridge, grid, bound } => {
            if data.d() != 1 {
                return Err(Error::LoclinDimension);
            }
            let base = LoclinConfig { bandwidth: 1.0, ridge: *ridge, grid: *grid, bound: *bound };
            let h = match bandwidth {
                BandwidthRule::Fixed { h } => *h,
                BandwidthRule::Order { c } => rule_bandwidth(data.n(), data.m(), *c),
                BandwidthRule::Cv { candidates, folds } => {
                    select_bandwidth(data, &base, candidates, *folds, seed.child("bandwidth-cv", 0))?
                }
            };
            Ok(FittedModel::Loclin { field: loclin_field(data, &base.with_bandwidth(h))? })
        }
        EstimatorSpec::Dnn { arch, train: cfg } => {
            let arch = match *arch {
                ArchChoice::Fixed { depth, width } => (depth, width),
                ArchChoice::Theory { regime, constants } => arch_from_theory(data.n(), data.m(), regime, &constants),
            };
            let cfg = TrainConfig { seed: seed.child("train", 0), ..*cfg };
            let trained = train(data, arch, &cfg)?;
            Ok(FittedModel::Dnn { field: trained.field, trajectory: trained.trajectory, arch })
        }
    }
}

/// Full pairwise training loss. Spectral fits report the loss of the
/// unclipped expansion from their normal equations; the others evaluate the
/// clipped field on every ordered pair.
pub fn train_loss(model: &FittedModel, data: &FunctionalDataset) -> Result<f64> {
    if let FittedModel::Spectral { fit, .. } = model {
        if let Some(loss) = fit.train_loss() {
            return Ok(loss);
        }
    }
    Ok(full_pair_loss(data, model.field())?.value)
}
