//! L2 risk by quadrature, and the gain from projecting a fit onto PSD kernels.

use covfield::dataset::NoiseSpec;
use covfield::field::FnField;
use covfield::postrisk::{l2_risk, min_eigenvalue, psd_project, to_grid};
use covfield::rng::SeedSpec;
use covfield::spectral::{fit_spectral, spectral_field};
use covfield::synth::{generate_dataset, make_psd_coeffs, TruthSpec};

fn main() -> covfield::error::Result<()> {
    let a = FnField::new(2, 10.0, |s: &[f64], t: &[f64]| (s[0] + t[1]) * (t[0] + s[1]));
    let b = FnField::new(2, 10.0, |s: &[f64], t: &[f64]| s[0] * t[0] + s[1] * t[1]);
    let qmc = l2_risk(&a, &b, 2, 64)?;
    println!("d=2 risk {:.5} via {:?} with {} points", qmc.value, qmc.method, qmc.nodes);

    let truth = TruthSpec::TensorSobolev { coefficients: make_psd_coeffs(2.0, 21, 2600.0, SeedSpec::new(2))? };
    let data = generate_dataset(&truth, 60, 3, NoiseSpec::gaussian(1.0), SeedSpec::new(8))?;
    let fit = spectral_field(&fit_spectral(&data, 24, None)?, 10.0);
    let grid = to_grid(&fit, 33, 1)?;
    let projected = psd_project(&grid)?;
    let truth_grid = to_grid(&truth.field(), 33, 1)?;
    println!("min eigenvalue before {:.4}, after {:.2e}", min_eigenvalue(grid.values()), min_eigenvalue(projected.values()));
    println!("grid risk raw {:.5}", l2_risk(&grid, &truth_grid, 1, 64)?.value);
    println!("grid risk psd {:.5}", l2_risk(&projected, &truth_grid, 1, 64)?.value);
    Ok(())
}
