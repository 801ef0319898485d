//! Hyperbolic-cross Fourier least squares on a tensor Sobolev truth.

use covfield::dataset::NoiseSpec;
use covfield::postrisk::l2_risk;
use covfield::rng::SeedSpec;
use covfield::spectral::{enumerate_index_set, fit_spectral, m_from_theory, spectral_field};
use covfield::synth::{generate_dataset, make_psd_coeffs, TruthSpec};

fn main() -> covfield::error::Result<()> {
    let truth = TruthSpec::TensorSobolev { coefficients: make_psd_coeffs(2.0, 21, 2600.0, SeedSpec::new(2))? };
    for n in [128, 512, 2048] {
        let data = generate_dataset(&truth, n, 5, NoiseSpec::gaussian(0.5), SeedSpec::new(11))?;
        let level = m_from_theory(n, 5, 2.0, 4.0);
        let fit = fit_spectral(&data, level, None)?;
        let field = spectral_field(&fit, 10.0);
        let risk = l2_risk(&field, &truth.field(), 1, 64)?;
        println!(
            "n={n:5} M={level:2} |I_M|={:3} train_loss={:.4} risk={:.5}",
            enumerate_index_set(level).len(),
            fit.train_loss().unwrap_or(f64::NAN),
            risk.value
        );
    }
    Ok(())
}
