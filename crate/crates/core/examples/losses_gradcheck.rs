//! Evaluates the losses on a random instance and checks every analytic gradient
//! against central finite differences.

use flk::gradcheck::{random_multiview_instance, run, GradcheckReport};
use flk::losses::{multiview_loss, LossWeights, MultiViewTerms};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> flk::Result<(MultiViewTerms, GradcheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (pred, target) = random_multiview_instance(&mut rng)?;
    let (terms, _) = multiview_loss(&pred, &target, &LossWeights::default())?;
    Ok((terms, run(5, 200)?))
}

fn main() -> flk::Result<()> {
    let (terms, report) = run_example()?;
    println!("multi-view loss terms: {terms:#?}");
    println!("max relative gradient errors over {} draws:", report.draws);
    println!("  lll_2d            {:.2e}", report.lll_2d);
    println!("  multiframe_loss   {:.2e}", report.multiframe_loss);
    println!("  multiview_loss    {:.2e}", report.multiview_loss);
    println!("  reprojection      {:.2e}", report.reprojection_jacobian);
    println!("  mse / l1          {:.2e} / {:.2e}", report.mse_loss, report.l1_loss);
    Ok(())
}
