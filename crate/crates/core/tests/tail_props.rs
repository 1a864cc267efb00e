use proptest::prelude::*;

use claimrisk::copula::{CopulaFit, Estimator};
use claimrisk::marginals::{Marginal, MarginalFit};
use claimrisk::tail::{
    compare_risk, joint_tail_exact, joint_tail_mc, read_comparison_csv, read_risk_csv, risk_curve, univariate_tail_curve,
    write_comparison_csv, write_risk_csv, RiskQuery,
};

fn lognormal_fit(m: f64, s: f64) -> MarginalFit {
    MarginalFit {
        marginal: Marginal::lognormal(m, s).unwrap(),
        loglik: 0.0,
        aic: 0.0,
        bic: 0.0,
        n: 100,
        scale: 1.0,
        converged: true,
    }
}

fn copula(theta: f64, d: usize) -> CopulaFit {
    CopulaFit {
        theta,
        se: 0.0,
        estimator: Estimator::TauInversion,
        n: 100,
        d,
        bootstrap_reps: 0,
        seed: 0,
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn query(theta: f64, marginals: Vec<MarginalFit>, z: Vec<f64>) -> RiskQuery {
    RiskQuery {
        copula: copula(theta, marginals.len()),
        marginals,
        z,
        mc_draws: 20_000,
        seed: 3,
        city: "test".into(),
    }
}

#[test]
fn hand_values() {
    assert!((joint_tail_exact(&[0.9; 6], 1.0).unwrap() - 1e-6).abs() < 1e-20);
    assert!((joint_tail_exact(&[0.5, 0.5], 1.0).unwrap() - 0.25).abs() < 1e-16);
    assert!(joint_tail_exact(&[0.5, 0.5], 0.5).is_err());
}

#[test]
fn exact_agrees_with_large_monte_carlo() {
    let cases: [(&[f64], f64); 10] = [
        (&[0.3, 0.6], 1.4),
        (&[0.8, 0.7], 4.2),
        (&[0.5, 0.2, 0.7], 2.5),
        (&[0.9, 0.85, 0.6], 1.1),
        (&[0.4, 0.5, 0.6, 0.7], 3.0),
        (&[0.75, 0.8, 0.7, 0.9], 1.7),
        (&[0.2, 0.4, 0.6, 0.5, 0.3], 4.8),
        (&[0.6, 0.7, 0.8, 0.5, 0.65], 2.0),
        (&[0.3, 0.5, 0.4, 0.6, 0.2, 0.5], 1.3),
        (&[0.8, 0.8, 0.7, 0.75, 0.85, 0.8], 3.6),
    ];
    for (k, (u, theta)) in cases.iter().enumerate() {
        let n = if u.len() <= 3 { 1_000_000 } else { 200_000 };
        let exact = joint_tail_exact(u, *theta).unwrap();
        let mc = joint_tail_mc(u, *theta, n, 100 + k as u64).unwrap();
        assert!(
            (exact - mc.estimate).abs() < 3.0 * mc.se,
            "d={} theta={theta}: exact {exact} mc {} se {}",
            u.len(),
            mc.estimate,
            mc.se
        );
    }
}

#[test]
fn median_threshold_gives_half_tails() {
    let m = 0.4;
    let c = risk_curve(&query(1.0, vec![lognormal_fit(m, 0.5); 6], vec![m.exp()])).unwrap();
    assert!((c.points[0].phi_exact - 0.015625).abs() < 1e-12);
}

#[test]
fn curves_decay_and_order_by_theta() {
    let margins: Vec<MarginalFit> = (0..6).map(|i| lognormal_fit(0.1 * i as f64, 0.4 + 0.05 * i as f64)).collect();
    let z = grid(0.5, 20.0, 30);
    let mut prev: Option<Vec<f64>> = None;
    for theta in [1.0, 1.3, 2.0, 5.0] {
        let c = risk_curve(&query(theta, margins.clone(), z.clone())).unwrap();
        let phi = c.phi();
        assert!(phi.windows(2).all(|w| w[1] <= w[0]));
        assert!(phi.last().unwrap() < phi.first().unwrap());
        assert!(c.points.iter().all(|p| p.phi_mc.is_finite() && p.phi_mc <= 1.0));
        if let Some(p) = prev {
            assert!(phi.iter().zip(&p).all(|(a, b)| *a >= *b - 1e-15), "theta {theta}");
        }
        prev = Some(phi);
    }
}

#[test]
fn heavier_margins_dominate() {
    let z = grid(1.0, 15.0, 25);
    let light = risk_curve(&query(1.4, vec![lognormal_fit(0.0, 0.5); 6], z.clone())).unwrap();
    let heavy = risk_curve(&query(1.4, vec![lognormal_fit(0.2, 0.7); 6], z.clone())).unwrap();
    let cmp = compare_risk(&light, &heavy).unwrap();
    assert_eq!(cmp.rows.len(), z.len());
    assert_eq!(cmp.dominance, 1.0);
    let same = compare_risk(&light, &light).unwrap();
    assert!(same.rows.iter().all(|r| r.ratio == 1.0 && r.diff == 0.0));
    assert_eq!(same.dominance, 0.0);
}

#[test]
fn below_support_warns_instead_of_failing() {
    let fit = MarginalFit {
        marginal: Marginal::poisson(3.0).unwrap(),
        scale: 1.0,
        ..lognormal_fit(0.0, 1.0)
    };
    let c = risk_curve(&query(1.5, vec![fit; 3], vec![-1.0, 2.0])).unwrap();
    assert_eq!(c.points[0].phi_exact, 1.0);
    assert_eq!(c.warnings.len(), 1);
}

#[test]
fn dimension_mismatch_is_rejected() {
    let mut q = query(1.5, vec![lognormal_fit(0.0, 1.0); 3], vec![1.0]);
    q.copula.d = 6;
    assert!(risk_curve(&q).is_err());
    let q = query(1.5, vec![lognormal_fit(0.0, 1.0); 3], vec![2.0, 1.0]);
    assert!(risk_curve(&q).is_err());
}

#[test]
fn control_curve_is_the_survival_function() {
    let fit = lognormal_fit(0.3, 0.6);
    let z = grid(0.5, 8.0, 10);
    let c = univariate_tail_curve(&fit, &z, 50_000, 1, "x").unwrap();
    for p in &c.points {
        assert!((p.phi_exact - fit.survival_original(p.z)).abs() < 1e-15);
        assert!((p.phi_mc - p.phi_exact).abs() < 4.0 * p.mc_se.max(1e-4));
    }
}

#[test]
fn csv_outputs_parse_back() {
    let z = grid(1.0, 10.0, 8);
    let a = risk_curve(&query(1.2, vec![lognormal_fit(0.0, 0.5); 4], z.clone())).unwrap();
    let b = risk_curve(&query(2.0, vec![lognormal_fit(0.0, 0.5); 4], z)).unwrap();
    let mut buf = Vec::new();
    write_risk_csv(&mut buf, &[a.clone(), b.clone()]).unwrap();
    let back = read_risk_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0].points, a.points);
    let cmp = compare_risk(&a, &b).unwrap();
    let mut buf = Vec::new();
    write_comparison_csv(&mut buf, &cmp).unwrap();
    assert_eq!(read_comparison_csv(buf.as_slice()).unwrap(), cmp.rows);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn within_bounds(u in prop::collection::vec(0.0f64..1.0, 2..7), theta in 1.0f64..25.0) {
        let phi = joint_tail_exact(&u, theta).unwrap();
        let upper = u.iter().map(|v| 1.0 - v).fold(1.0, f64::min);
        // Bonferroni bound, tightened by positive dependence to the independence product
        let bonferroni = (1.0 - u.iter().sum::<f64>()).max(0.0);
        let lower = u.iter().map(|v| 1.0 - v).product::<f64>().max(bonferroni);
        prop_assert!(phi >= lower * (1.0 - 1e-9) - 1e-15 && phi <= upper + 1e-15, "{} not in [{}, {}]", phi, lower, upper);
    }

    #[test]
    fn nonincreasing_in_each_coordinate(
        u in prop::collection::vec(0.0f64..1.0, 2..7),
        k in 0usize..6,
        bump in 0.0f64..0.5,
        theta in 1.0f64..10.0,
    ) {
        let k = k % u.len();
        let mut v = u.clone();
        v[k] = (v[k] + bump).min(1.0);
        prop_assert!(joint_tail_exact(&v, theta).unwrap() <= joint_tail_exact(&u, theta).unwrap() + 1e-12);
    }

    #[test]
    fn independence_factorizes(u in prop::collection::vec(0.0f64..1.0, 1..7)) {
        let phi = joint_tail_exact(&u, 1.0).unwrap();
        let prod: f64 = u.iter().map(|v| 1.0 - v).product();
        prop_assert_eq!(phi, prod);
    }
}
