//! Local linear smoothing of pseudo-observations, with cross-validated bandwidth.

use covfield::dataset::NoiseSpec;
use covfield::field::CovarianceField;
use covfield::loclin::{loclin_field, rule_bandwidth, select_bandwidth, LoclinConfig};
use covfield::postrisk::l2_risk;
use covfield::rng::SeedSpec;
use covfield::synth::{generate_dataset, MaternOrder, SmoothKernel, TruthSpec};

fn main() -> covfield::error::Result<()> {
    let kernel = SmoothKernel::with_order(1.0, vec![0.3], MaternOrder::ThreeHalves)?;
    let truth = TruthSpec::AnisotropicSmooth { kernel };
    let data = generate_dataset(&truth, 100, 10, NoiseSpec::gaussian(0.5), SeedSpec::new(3))?;

    let base = LoclinConfig::default();
    let rule = rule_bandwidth(data.n(), data.m(), 1.0);
    let cv = select_bandwidth(&data, &base, &[0.1, 0.15, 0.2, 0.3], 5, SeedSpec::new(4))?;
    for (label, h) in [("rule", rule), ("cv", cv)] {
        let field = loclin_field(&data, &base.with_bandwidth(h))?;
        let risk = l2_risk(&field, &truth.field(), 1, 64)?;
        println!(
            "{label:4} h={h:.3} K(0.5,0.5)={:.3} (truth 1.000) risk={:.5}",
            field.eval(&[0.5], &[0.5]),
            risk.value
        );
    }
    Ok(())
}
