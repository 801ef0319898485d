//! Risk against m at fixed n, and the sparse/dense breakpoint fit.

use covfield::dataset::NoiseSpec;
use covfield::estimator::{EstimatorSpec, LevelRule};
use covfield::rng::SeedSpec;
use covfield::sweep::{detect_phase_transition, run_plan, ExperimentPlan, RiskConfig, TheoryConfig};
use covfield::synth::{make_psd_coeffs, TruthSpec};

fn main() -> covfield::error::Result<()> {
    let synthetic: Vec<(f64, f64)> = [2.0f64, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0]
        .iter()
        .map(|&m| (m, if m <= 16.0 { 1.0 / m } else { 1.0 / 16.0 }))
        .collect();
    let t = detect_phase_transition(&synthetic)?;
    println!("synthetic knee: m* = {:.2}, slopes {:.2} / {:.2}", t.m_star, t.pre_slope, t.post_slope);

    let plan = ExperimentPlan {
        truth: TruthSpec::TensorSobolev { coefficients: make_psd_coeffs(2.0, 21, 2600.0, SeedSpec::new(2))? },
        noise: NoiseSpec::gaussian(0.5),
        estimators: vec![EstimatorSpec::Spectral {
            level: LevelRule::Theory { alpha: 2.0, c_m: 4.0 },
            ridge: None,
            bound: 10.0,
        }],
        n_grid: vec![128],
        m_grid: vec![2, 4, 8, 16, 32, 64, 128],
        replicates: 4,
        seed: SeedSpec::new(99),
        risk: RiskConfig { nodes: 64, psd_grid: None },
        theory: TheoryConfig::default(),
    };
    let report = run_plan(&plan)?;
    for c in &report.cells {
        println!("m={:4} median risk {:.5}", c.m, c.median_risk_raw.unwrap_or(f64::NAN));
    }
    for e in &report.transitions {
        println!(
            "n={}: m* = {:.1} (predicted {:.1}), slopes {:.2} / {:.2}",
            e.n, e.m_star, e.predicted_m_star, e.pre_slope, e.post_slope
        );
    }
    Ok(())
}
