use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use claimrisk::marginals::{aic, bic, fit_mle, loglik, nb1_pmf, select_family, Marginal, MarginalFamily};

#[test]
fn nb1_hand_value_and_poisson_limit() {
    assert!((nb1_pmf(0, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
    let p = Marginal::poisson(2.0).unwrap();
    assert!((p.density(0.0) - (-2.0f64).exp()).abs() < 1e-15);
    for y in 0..15 {
        let nb = nb1_pmf(y, 2.0, 1e-8).unwrap();
        assert!((nb - p.density(y as f64)).abs() < 1e-6, "y={y}");
    }
    assert!(nb1_pmf(0, -1.0, 1.0).is_err());
}

#[test]
fn far_tail_pmf_is_finite() {
    let v = nb1_pmf(500, 1.0, 1.0).unwrap();
    assert!(v.is_finite() && v > 0.0, "{v}");
}

#[test]
fn lognormal_density_integrates_to_one() {
    for &(m, s) in &[(0.0, 1.0), (-1.2, 0.3), (0.5, 1.8)] {
        let lg = Marginal::lognormal(m, s).unwrap();
        // y = exp(t) maps the density to a normal curve in t
        let (lo, hi, n) = (m - 12.0 * s, m + 12.0 * s, 20_000);
        let h = (hi - lo) / n as f64;
        let f = |t: f64| lg.density(t.exp()) * t.exp();
        let mut total = f(lo) + f(hi);
        for i in 1..n {
            total += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-6, "m={m} s={s}: {total}");
    }
}

#[test]
fn zip_without_inflation_is_poisson() {
    let z = Marginal::zip(3.3, 0.0).unwrap();
    let p = Marginal::poisson(3.3).unwrap();
    for y in 0..20 {
        assert_eq!(z.density(y as f64), p.density(y as f64));
    }
}

#[test]
fn information_criteria_formulas() {
    assert_eq!(aic(-100.0, 2), 204.0);
    assert!((bic(-100.0, 2, 100) - (2.0 * 100f64.ln() + 200.0)).abs() < 1e-12);
}

#[test]
fn lognormal_rejects_zero_sample() {
    assert!(fit_mle(&[0.0; 40], MarginalFamily::Lognormal).is_err());
}

#[test]
fn nb1_beats_poisson_under_overdispersion() {
    let truth = Marginal::nb1(3.0, 1.5).unwrap();
    let mut wins = 0;
    for rep in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let sample: Vec<f64> = (0..200).map(|_| truth.sample(&mut rng)).collect();
        let sel = select_family(&sample, &[MarginalFamily::Poisson, MarginalFamily::Nb1]).unwrap();
        wins += usize::from(sel.best.family() == MarginalFamily::Nb1);
    }
    assert!(wins >= 95, "nb1 won {wins}/100");
}

#[test]
fn mle_dominates_truth_for_every_family() {
    let cases = [
        Marginal::poisson(2.5).unwrap(),
        Marginal::nb1(2.0, 0.5).unwrap(),
        Marginal::nb2(4.0, 0.3).unwrap(),
        Marginal::zip(3.0, 0.2).unwrap(),
        Marginal::lognormal(0.3, 0.6).unwrap(),
    ];
    for (k, truth) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let sample: Vec<f64> = (0..2000).map(|_| truth.sample(&mut rng)).collect();
        let fit = fit_mle(&sample, truth.family()).unwrap();
        assert!(fit.converged);
        assert!(fit.loglik >= loglik(truth, &sample) - 1e-9, "{:?}", truth.family());
        let kp = truth.family().param_count();
        assert!((fit.aic - aic(fit.loglik, kp)).abs() < 1e-9);
        assert!((fit.bic - bic(fit.loglik, kp, sample.len())).abs() < 1e-9);
    }
}

#[test]
fn sample_moments_match_identities() {
    let cases = [
        Marginal::nb1(2.0, 0.5).unwrap(),
        Marginal::nb2(3.0, 0.4).unwrap(),
        Marginal::zip(2.5, 0.3).unwrap(),
    ];
    for (k, m) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + k as u64);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| m.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean / m.mean() - 1.0).abs() < 0.02, "{:?} mean {mean}", m.family());
        assert!((var / m.variance() - 1.0).abs() < 0.02, "{:?} var {var}", m.family());
    }
}

fn any_marginal() -> impl Strategy<Value = Marginal> {
    prop_oneof![
        (0.1f64..20.0).prop_map(|l| Marginal::poisson(l).unwrap()),
        (0.1f64..20.0, 0.01f64..3.0).prop_map(|(m, s)| Marginal::nb1(m, s).unwrap()),
        (0.1f64..20.0, 0.01f64..3.0).prop_map(|(m, s)| Marginal::nb2(m, s).unwrap()),
        (0.1f64..20.0, 0.0f64..0.9).prop_map(|(l, p)| Marginal::zip(l, p).unwrap()),
        (-2.0f64..2.0, 0.05f64..2.0).prop_map(|(m, s)| Marginal::lognormal(m, s).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cdf_is_a_distribution_function(m in any_marginal(), a in 0.0f64..60.0, b in 0.0f64..60.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(m.cdf(lo) <= m.cdf(hi) + 1e-15);
        prop_assert!((0.0..=1.0).contains(&m.cdf(lo)));
        prop_assert!((m.cdf(f64::INFINITY) - 1.0).abs() < 1e-12);
        prop_assert!((m.cdf(hi) + m.survival(hi) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_pmf_sums_to_one(m in any_marginal()) {
        prop_assume!(m.family().is_discrete());
        // past the mean every family decays at least geometrically
        let mut total = 0.0;
        let mut y = 0.0;
        loop {
            let p = m.density(y);
            total += p;
            if y > m.mean() && p < 1e-18 {
                break;
            }
            y += 1.0;
        }
        prop_assert!((total - 1.0).abs() < 1e-9, "{:?} total {}", m, total);
    }

    #[test]
    fn poisson_mle_is_sample_mean(sample in prop::collection::vec(0u32..30, 30..200)) {
        let s: Vec<f64> = sample.iter().map(|&v| f64::from(v)).collect();
        prop_assume!(s.iter().any(|&v| v > 0.0));
        let fit = fit_mle(&s, MarginalFamily::Poisson).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        prop_assert!((fit.marginal.params()[0] - mean).abs() <= 1e-12 * mean);
    }
}
