//! First-order minimization of the pairwise loss over network parameters.

use serde::{Deserialize, Serialize};

use super::{
    full_pair_chunks, init_params, reduce_chunks, training_loss, MlpField, MlpParams, PairTerm, CHUNK_SUBJECTS,
};
use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::rng::SeedSpec;

/// Loss level treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// Heavy-ball gradient descent.
    Momentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Momentum { momentum: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchScheme {
    /// Every step uses the full ordered-pair loss.
    Full,
    /// Each epoch re-pairs every subject with a fresh permutation and walks
    /// the split-pair loss in batches of `subjects` subjects.
    PerSubject { subjects: usize },
}

/// Loss used for evaluation points and best-iterate selection under the
/// per-subject scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Full ordered-pair loss, `O(n m^2)` network evaluations.
    #[default]
    Full,
    /// Split-pair loss under one fixed pairing per subject drawn from the
    /// stream `("monitor-pairing", i)`, `O(n m)` evaluations.
    SplitPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-epoch geometric step decay.
    pub decay: f64,
    pub epochs: usize,
    pub batch: BatchScheme,
    pub optimizer: Optimizer,
    /// Clip bound `B_K` applied to the returned field.
    pub bound: f64,
    pub seed: SeedSpec,
    /// Return the iterate with the lowest full training loss seen.
    pub track_best: bool,
    /// Full-loss evaluation period in epochs for the per-subject scheme.
    pub eval_every: usize,
    /// Rescale gradients whose Euclidean norm exceeds this.
    pub max_grad_norm: Option<f64>,
    pub monitor: Monitor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            decay: 0.995,
            epochs: 200,
            batch: BatchScheme::Full,
            optimizer: Optimizer::default(),
            bound: 10.0,
            seed: SeedSpec::new(0),
            track_best: true,
            eval_every: 10,
            max_grad_norm: None,
            monitor: Monitor::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.bound > 0.0) {
            return bad("bound must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if let BatchScheme::PerSubject { subjects: 0 } = self.batch {
            return bad("batch must contain at least one subject");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNetwork {
    pub field: MlpField,
    /// Monitored training loss at each evaluation point, starting with the
    /// initialization.
    pub trajectory: Vec<f64>,
    pub best_loss: f64,
}

impl TrainedNetwork {
    pub fn initial_loss(&self) -> f64 {
        self.trajectory[0]
    }

    /// Running minimum of the trajectory.
    pub fn running_min(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trajectory
            .iter()
            .map(|&l| {
                best = best.min(l);
                best
            })
            .collect()
    }
}

struct OptimizerState {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    fn new(len: usize) -> Self {
        Self { first: vec![0.0; len], second: vec![0.0; len], steps: 0 }
    }

    fn step(&mut self, opt: Optimizer, lr: f64, params: &mut [f64], grad: &[f64]) {
        self.steps += 1;
        match opt {
            Optimizer::Momentum { momentum } => {
                for ((p, v), g) in params.iter_mut().zip(&mut self.first).zip(grad) {
                    *v = momentum * *v - lr * g;
                    *p += *v;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powf(self.steps as f64);
                let c2 = 1.0 - beta2.powf(self.steps as f64);
                for (((p, m1), m2), g) in params.iter_mut().zip(&mut self.first).zip(&mut self.second).zip(grad) {
                    *m1 = beta1 * *m1 + (1.0 - beta1) * g;
                    *m2 = beta2 * *m2 + (1.0 - beta2) * g * g;
                    *p -= lr * (*m1 / c1) / ((*m2 / c2).sqrt() + eps);
                }
            }
        }
    }
}

fn clip_gradient(grad: &mut [f64], max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max {
            let s = max / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Trains a depth-`L`, width-`W` symmetrized network on `data`.
pub fn train(data: &FunctionalDataset, arch: (usize, usize), cfg: &TrainConfig) -> Result<TrainedNetwork> {
    cfg.validate()?;
    let (depth, width) = arch;
    if depth == 0 || width == 0 {
        return Err(Error::InvalidInput("depth and width must be positive".into()));
    }
    if data.m() < 2 {
        return Err(Error::TooFewMeasurements);
    }
    let mut params = init_params(depth, width, data.d(), cfg.seed);
    let mut state = OptimizerState::new(params.len());
    let n = data.n();
    let m = data.m();
    let all: Vec<usize> = (0..n).collect();
    let full_chunks = full_pair_chunks(data, &all);
    let full_scale = 1.0 / (n * m * (m - 1)) as f64;

    let mut trajectory = Vec::new();
    let mut best = (f64::INFINITY, params.clone());
    let mut record = |loss: f64, p: &MlpParams, trajectory: &mut Vec<f64>, epoch: usize| -> Result<()> {
        trajectory.push(loss);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { epoch, loss, trajectory: trajectory.clone() });
        }
        if loss < best.0 {
            best = (loss, p.clone());
        }
        Ok(())
    };

    match cfg.batch {
        BatchScheme::Full => {
            for epoch in 0..cfg.epochs {
                let (loss, mut grad) = reduce_chunks(&params, data, &full_chunks, true);
                record(loss * full_scale, &params, &mut trajectory, epoch)?;
                grad.iter_mut().for_each(|g| *g *= full_scale);
                clip_gradient(&mut grad, cfg.max_grad_norm);
                let lr = cfg.learning_rate * cfg.decay.powi(epoch as i32);
                state.step(cfg.optimizer, lr, params.flat_mut(), &grad);
            }
            let last = training_loss(&params, data).unwrap_or(f64::INFINITY);
            record(last, &params, &mut trajectory, cfg.epochs)?;
        }
        BatchScheme::PerSubject { subjects } => {
            let half = m / 2;
            let monitor_chunks: Option<Vec<Vec<PairTerm>>> = match cfg.monitor {
                Monitor::Full => None,
                Monitor::SplitPairs => Some(
                    all.chunks(CHUNK_SUBJECTS)
                        .map(|c| {
                            let mut v = Vec::with_capacity(c.len() * half);
                            for &i in c {
                                let perm = cfg.seed.stream("monitor-pairing", i as u64).permutation(m);
                                for j in 0..half {
                                    v.push(PairTerm { subject: i, a: perm[j], b: perm[half + j], weight: 1.0 });
                                }
                            }
                            v
                        })
                        .collect(),
                ),
            };
            let monitor_loss = |p: &MlpParams| -> f64 {
                match &monitor_chunks {
                    None => training_loss(p, data).unwrap_or(f64::INFINITY),
                    Some(chunks) => reduce_chunks(p, data, chunks, false).0 / (n * half) as f64,
                }
            };
            let initial = monitor_loss(&params);
            record(initial, &params, &mut trajectory, 0)?;
            for epoch in 0..cfg.epochs {
                let mut order_rng = cfg.seed.stream("epoch-order", epoch as u64);
                let subject_order = order_rng.permutation(n);
                let lr = cfg.learning_rate * cfg.decay.powi(epoch as i32);
                for batch in subject_order.chunks(subjects) {
                    let chunks: Vec<Vec<PairTerm>> = batch
                        .chunks(CHUNK_SUBJECTS)
                        .map(|c| {
                            let mut v = Vec::with_capacity(c.len() * half);
                            for &i in c {
                                let perm = cfg
                                    .seed
                                    .stream("pairing", (epoch as u64) << 32 | i as u64)
                                    .permutation(m);
                                for j in 0..half {
                                    v.push(PairTerm { subject: i, a: perm[j], b: perm[half + j], weight: 1.0 });
                                }
                            }
                            v
                        })
                        .collect();
                    let (_, mut grad) = reduce_chunks(&params, data, &chunks, true);
                    let scale = 1.0 / (batch.len() * half) as f64;
                    grad.iter_mut().for_each(|g| *g *= scale);
                    if grad.iter().any(|g| !g.is_finite()) {
                        return Err(Error::Divergence {
                            epoch,
                            loss: f64::INFINITY,
                            trajectory: trajectory.clone(),
                        });
                    }
                    clip_gradient(&mut grad, cfg.max_grad_norm);
                    state.step(cfg.optimizer, lr, params.flat_mut(), &grad);
                }
                if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
                    let loss = monitor_loss(&params);
                    record(loss, &params, &mut trajectory, epoch + 1)?;
                }
            }
        }
    }

    let (best_loss, best_params) = best;
    let chosen = if cfg.track_best { best_params } else { params };
    let best_loss = if cfg.track_best { best_loss } else { *trajectory.last().expect("nonempty trajectory") };
    Ok(TrainedNetwork {
        field: MlpField::new(chosen, cfg.bound),
        trajectory,
        best_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NoiseSpec;
    use crate::synth::{generate_dataset, SpectralCoefficients, TruthSpec};

    fn constant_truth_data(n: usize, m: usize, seed: u64) -> FunctionalDataset {
        let one = SpectralCoefficients::from_entries(2.0, 1, &[(1, 1, 1.0)]).unwrap();
        generate_dataset(&TruthSpec::TensorSobolev { coefficients: one }, n, m, NoiseSpec::none(), SeedSpec::new(seed))
            .unwrap()
    }

    #[test]
    fn rejects_zero_epochs() {
        let ds = constant_truth_data(5, 3, 1);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(train(&ds, (1, 2), &cfg).is_err());
    }

    #[test]
    fn one_epoch_smoke() {
        let ds = constant_truth_data(5, 3, 1);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let t = train(&ds, (2, 4), &cfg).unwrap();
        assert!(t.best_loss.is_finite());
        assert!(t.best_loss <= t.initial_loss());
        use crate::field::CovarianceField;
        assert!(t.field.eval(&[0.2], &[0.4]).is_finite());
    }

    #[test]
    fn training_is_deterministic_and_improves() {
        let ds = constant_truth_data(20, 4, 3);
        let cfg = TrainConfig {
            epochs: 60,
            optimizer: Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            ..TrainConfig::default()
        };
        let a = train(&ds, (2, 6), &cfg).unwrap();
        let b = train(&ds, (2, 6), &cfg).unwrap();
        assert_eq!(a.field, b.field);
        assert!(a.best_loss < a.initial_loss());
        let rm = a.running_min();
        assert!(rm.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn per_subject_scheme_runs() {
        let ds = constant_truth_data(16, 6, 4);
        let cfg = TrainConfig {
            epochs: 10,
            eval_every: 5,
            batch: BatchScheme::PerSubject { subjects: 4 },
            optimizer: Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            ..TrainConfig::default()
        };
        let t = train(&ds, (2, 5), &cfg).unwrap();
        assert_eq!(t.trajectory.len(), 3);
        assert!(t.best_loss <= t.initial_loss());
    }

    #[test]
    fn divergence_reports_trajectory() {
        let ds = constant_truth_data(10, 4, 5);
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 1e3,
            decay: 1.0,
            optimizer: Optimizer::Momentum { momentum: 0.9 },
            ..TrainConfig::default()
        };
        match train(&ds, (3, 8), &cfg) {
            Err(Error::Divergence { trajectory, .. }) => assert!(!trajectory.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
