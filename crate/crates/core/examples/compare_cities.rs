//! Two cities with the same dependence but different claim tails: where is
//! the joint risk of a bad week higher?

use claimrisk::copula::{CopulaFit, Estimator};
use claimrisk::marginals::{Marginal, MarginalFit};
use claimrisk::tail::{compare_risk, risk_curve, RiskCurve, RiskQuery};

fn city(name: &str, m: f64, s: f64, theta: f64, z: &[f64]) -> claimrisk::Result<RiskCurve> {
    let fit = MarginalFit {
        marginal: Marginal::lognormal(m, s)?,
        loglik: 0.0,
        aic: 0.0,
        bic: 0.0,
        n: 0,
        scale: 1.0,
        converged: true,
    };
    risk_curve(&RiskQuery {
        z: z.to_vec(),
        marginals: vec![fit; 6],
        copula: CopulaFit {
            theta,
            se: 0.0,
            estimator: Estimator::TauInversion,
            n: 0,
            d: 6,
            bootstrap_reps: 0,
            seed: 0,
        },
        mc_draws: 0,
        seed: 0,
        city: name.into(),
    })
}

fn main() -> claimrisk::Result<()> {
    let z: Vec<f64> = (0..10).map(|i| 0.6 * 1.15f64.powi(i)).collect();
    let a = city("A", -0.6, 0.25, 1.327, &z)?;
    let b = city("B", -0.7, 0.40, 1.101, &z)?;
    let cmp = compare_risk(&a, &b)?;
    println!("{:>6} {:>11} {:>11} {:>8}", "z", "phi_A", "phi_B", "B/A");
    for r in &cmp.rows {
        println!("{:>6.3} {:>11.3e} {:>11.3e} {:>8.2}", r.z, r.phi_a, r.phi_b, r.ratio);
    }
    println!("B above A on {:.0}% of the grid", 100.0 * cmp.dominance);
    Ok(())
}
