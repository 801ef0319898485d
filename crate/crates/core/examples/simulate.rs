//! Draw a dataset from a tensor Sobolev truth and print it as JSONL.

use covfield::dataset::NoiseSpec;
use covfield::datafile::{write_dataset, DatasetHeader};
use covfield::field::CovarianceField;
use covfield::rng::SeedSpec;
use covfield::synth::{basis_eval, generate_dataset, make_psd_coeffs, rkhs_norm_sq, TruthSpec};

fn main() -> covfield::error::Result<()> {
    let coefficients = make_psd_coeffs(2.0, 21, 2600.0, SeedSpec::new(2))?;
    println!("# rkhs norm = {:.1}, sup bound = {:.3}", rkhs_norm_sq(&coefficients).sqrt(), coefficients.sup_bound());
    println!("# psi_2(0) = {:.6}, psi_3(0.25) = {:.6}", basis_eval(2, 0.0), basis_eval(3, 0.25));

    let truth = TruthSpec::TensorSobolev { coefficients };
    let field = truth.field();
    println!("# K(0.3, 0.3) = {:.4}", field.eval(&[0.3], &[0.3]));

    let data = generate_dataset(&truth, 4, 3, NoiseSpec::gaussian(0.5), SeedSpec::new(7))?;
    let mut header = DatasetHeader::new(&data);
    header.seed = Some(7);
    print!("{}", write_dataset(&header, &data));
    Ok(())
}
