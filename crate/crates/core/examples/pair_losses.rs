//! Full, split-pair and permutation-averaged losses agree where they should.

use covfield::dataset::{FunctionalDataset, NoiseSpec};
use covfield::field::{ConstantField, FnField};
use covfield::pairloss::{full_pair_loss, permutation_average_loss, split_pair_loss};
use covfield::rng::SeedSpec;
use covfield::synth::{generate_dataset, SmoothKernel, TruthSpec};

fn main() -> covfield::error::Result<()> {
    let toy = FunctionalDataset::new(1, 1, 3, vec![0.1, 0.5, 0.9], vec![1.0, -1.0, 2.0])?;
    let zero = ConstantField::new(0.0, 1);
    println!("toy full loss     = {}", full_pair_loss(&toy, &zero)?.value);
    println!("toy split loss    = {}", split_pair_loss(&toy, &zero, &[vec![0, 1, 2]])?.value);
    println!("toy perm average  = {}", permutation_average_loss(&toy, &zero)?);

    let truth = TruthSpec::AnisotropicSmooth { kernel: SmoothKernel::new(1.0, vec![0.3])? };
    let data = generate_dataset(&truth, 50, 5, NoiseSpec::gaussian(0.2), SeedSpec::new(1))?;
    let guess = FnField::new(1, 10.0, |s: &[f64], t: &[f64]| 0.8 - (s[0] - t[0]).abs());
    let full = full_pair_loss(&data, &guess)?;
    println!("n=50 m=5 full loss = {:.6} over {} pairs", full.value, full.pair_count);
    println!("n=50 m=5 perm avg  = {:.6}", permutation_average_loss(&data, &guess)?);
    println!("truth loss         = {:.6}", full_pair_loss(&data, &truth.field())?.value);
    Ok(())
}
