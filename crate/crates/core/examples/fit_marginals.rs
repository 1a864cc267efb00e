//! Fits every marginal family to an overdispersed count sample and ranks the
//! fits by AIC.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use claimrisk::marginals::{select_family, Marginal, MarginalFamily};

fn main() -> claimrisk::Result<()> {
    let truth = Marginal::nb1(2.0, 0.6)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sample: Vec<f64> = (0..2000).map(|_| truth.sample(&mut rng)).collect();

    // without covariates nb2 is a reparameterization of nb1 and ties with it
    let families = [MarginalFamily::Poisson, MarginalFamily::Nb1, MarginalFamily::Zip];
    let mut sel = select_family(&sample, &families)?;
    sel.candidates.sort_by(|a, b| a.aic.total_cmp(&b.aic));

    println!("{:<8} {:>10} {:>10} {:>10}  params", "family", "loglik", "AIC", "BIC");
    for fit in &sel.candidates {
        println!(
            "{:<8} {:>10.2} {:>10.2} {:>10.2}  {:?}",
            fit.family().as_str(),
            fit.loglik,
            fit.aic,
            fit.bic,
            fit.marginal.params()
        );
    }
    println!("selected: {}", sel.best.family().as_str());
    Ok(())
}
