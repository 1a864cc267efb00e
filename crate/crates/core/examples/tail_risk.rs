//! Joint exceedance curve for six lognormal scenarios under increasing
//! dependence, with the Monte Carlo check alongside the exact value.

use claimrisk::copula::{CopulaFit, Estimator};
use claimrisk::marginals::{Marginal, MarginalFit};
use claimrisk::tail::{risk_curve, RiskQuery};

fn fit(m: f64, s: f64) -> claimrisk::Result<MarginalFit> {
    Ok(MarginalFit {
        marginal: Marginal::lognormal(m, s)?,
        loglik: 0.0,
        aic: 0.0,
        bic: 0.0,
        n: 0,
        scale: 1.0,
        converged: true,
    })
}

fn main() -> claimrisk::Result<()> {
    let marginals = (0..6).map(|i| fit(-0.7 + 0.04 * i as f64, 0.3)).collect::<claimrisk::Result<Vec<_>>>()?;
    let z: Vec<f64> = (0..8).map(|i| 0.5 + 0.1 * i as f64).collect();

    for theta in [1.0, 1.327, 2.0] {
        let query = RiskQuery {
            z: z.clone(),
            marginals: marginals.clone(),
            copula: CopulaFit {
                theta,
                se: 0.0,
                estimator: Estimator::TauInversion,
                n: 0,
                d: 6,
                bootstrap_reps: 0,
                seed: 0,
            },
            mc_draws: 100_000,
            seed: 5,
            city: "example".into(),
        };
        println!("theta = {theta}");
        for p in risk_curve(&query)?.points {
            println!("  z {:.2}  exact {:.3e}  mc {:.3e} ± {:.1e}", p.z, p.phi_exact, p.phi_mc, p.mc_se);
        }
    }
    Ok(())
}
