//! Train the symmetrized ReLU network and round-trip it through a checkpoint.

use covfield::dataset::NoiseSpec;
use covfield::dnn::{
    arch_from_theory, read_checkpoint, train, write_checkpoint, ArchRule, BatchScheme, Monitor, Optimizer, Regime,
    TrainConfig,
};
use covfield::field::CovarianceField;
use covfield::postrisk::l2_risk;
use covfield::rng::SeedSpec;
use covfield::synth::{generate_dataset, make_psd_coeffs, TruthSpec};

fn main() -> covfield::error::Result<()> {
    let truth = TruthSpec::TensorSobolev { coefficients: make_psd_coeffs(2.0, 21, 2600.0, SeedSpec::new(2))? };
    let data = generate_dataset(&truth, 200, 5, NoiseSpec::gaussian(0.5), SeedSpec::new(5))?;

    let rule = ArchRule { c_depth: 0.5, c_width: 4.0, ..ArchRule::default() };
    let arch = arch_from_theory(data.n(), data.m(), Regime::TensorSobolev { alpha: 2.0 }, &rule);
    let cfg = TrainConfig {
        learning_rate: 0.003,
        decay: 0.98,
        epochs: 60,
        batch: BatchScheme::PerSubject { subjects: 16 },
        optimizer: Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        eval_every: 5,
        monitor: Monitor::SplitPairs,
        seed: SeedSpec::new(6),
        ..TrainConfig::default()
    };
    let trained = train(&data, arch, &cfg)?;
    println!("arch L={} W={}", arch.0, arch.1);
    println!("monitored loss: initial {:.4}, best {:.4}", trained.initial_loss(), trained.running_min().last().copied().unwrap_or(f64::NAN));
    println!("risk = {:.5}", l2_risk(&trained.field, &truth.field(), 1, 64)?.value);

    let mut bytes = Vec::new();
    write_checkpoint(&trained.field, &mut bytes)?;
    let restored = read_checkpoint(bytes.as_slice())?;
    println!(
        "checkpoint {} bytes, restored K(0.2,0.7) = {:.6} (original {:.6})",
        bytes.len(),
        restored.eval(&[0.2], &[0.7]),
        trained.field.eval(&[0.2], &[0.7])
    );
    Ok(())
}
