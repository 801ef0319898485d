//! A small replicated sweep over n and the fitted log-log slope.

use covfield::dataset::NoiseSpec;
use covfield::estimator::{EstimatorSpec, LevelRule};
use covfield::rng::SeedSpec;
use covfield::sweep::{run_plan, summary_csv, ExperimentPlan, RiskConfig, TheoryConfig};
use covfield::synth::{make_psd_coeffs, TruthSpec};

fn main() -> covfield::error::Result<()> {
    let plan = ExperimentPlan {
        truth: TruthSpec::TensorSobolev { coefficients: make_psd_coeffs(2.0, 21, 2600.0, SeedSpec::new(2))? },
        noise: NoiseSpec::gaussian(0.5),
        estimators: vec![EstimatorSpec::Spectral {
            level: LevelRule::Theory { alpha: 2.0, c_m: 4.0 },
            ridge: None,
            bound: 10.0,
        }],
        n_grid: vec![128, 256, 512, 1024],
        m_grid: vec![5],
        replicates: 6,
        seed: SeedSpec::new(2024),
        risk: RiskConfig { nodes: 64, psd_grid: None },
        theory: TheoryConfig::default(),
    };
    let report = run_plan(&plan)?;
    print!("{}", summary_csv(&report));
    for s in &report.slopes {
        println!("{} m={}: slope {:.3} (predicted {:?})", s.estimator, s.m, s.slope, s.predicted_slope);
    }
    Ok(())
}
