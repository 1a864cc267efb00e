//! Synthetic city worlds: clustered daily precipitation, claims through a
//! known softplus link, and a projection ensemble whose scenarios share a
//! Gumbel-dependent weekly storm driver.
//!
//! Random streams are ChaCha8 streams of `seed`: the control period uses
//! stream 0, scenario `k` uses stream `k + 1`, and the shared weekly driver
//! and the claim noise use two reserved streams.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::copula::{sample_gumbel, sample_gumbel_row};
use crate::error::{ensure_param, Error, Result};
use crate::ingest::{
    aggregate_weekly, ClaimAggregation, DailyRecord, ScenarioSet, ScenarioWeek, WeeklySeries, DEFAULT_SCENARIOS,
};
use crate::marginals::Marginal;

const DRIVER_STREAM: u64 = 1 << 32;
const NOISE_STREAM: u64 = (1 << 32) + 1;

/// Days per simulated year; whole weeks only, so a decade is 520 weeks.
pub const DAYS_PER_YEAR: usize = 364;

/// Coefficients of `softplus(a + b·X_t + c1·X_{t-1} + c2·X_{t-2} + g·D_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimLink {
    pub a: f64,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub g: f64,
}

impl Default for ClaimLink {
    fn default() -> Self {
        ClaimLink {
            a: -1.0,
            b: 0.03,
            c1: 0.015,
            c2: 0.008,
            g: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_years: usize,
    pub control_start: NaiveDate,
    pub scenario_start: NaiveDate,
    /// Mean storm arrivals per week.
    pub storm_rate: f64,
    /// Gamma shape of a storm's total precipitation (mm).
    pub storm_shape: f64,
    /// Gamma scale of a storm's total precipitation (mm).
    pub storm_scale: f64,
    pub link: ClaimLink,
    /// Standard deviation of the additive claim noise; 0 gives exact claims.
    pub noise_scale: f64,
    pub scenario_count: usize,
    /// Gumbel dependence of the weekly storm driver across scenarios.
    pub theta_true: f64,
    /// Precipitation scaling per scenario in the projection period.
    pub scenario_multipliers: Vec<f64>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 1,
            n_years: 10,
            control_start: NaiveDate::from_ymd_opt(2002, 1, 1).expect("valid date"),
            scenario_start: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            storm_rate: 1.2,
            storm_shape: 1.5,
            storm_scale: 10.0,
            link: ClaimLink::default(),
            noise_scale: 0.05,
            scenario_count: 6,
            theta_true: 1.327,
            scenario_multipliers: vec![1.05, 1.10, 1.15, 1.10, 1.20, 1.25],
        }
    }
}

impl WorldConfig {
    /// A world whose claims are driven mainly by the wettest day of the week.
    pub fn planted_max_daily() -> Self {
        WorldConfig {
            link: ClaimLink {
                a: -1.0,
                b: 0.005,
                c1: 0.004,
                c2: 0.002,
                g: 0.08,
            },
            noise_scale: 0.02,
            ..Default::default()
        }
    }

    /// A wetter city with heavier storms and stronger claim sensitivity.
    pub fn heavy_tailed() -> Self {
        WorldConfig {
            storm_shape: 1.2,
            storm_scale: 18.0,
            link: ClaimLink {
                a: -0.8,
                b: 0.035,
                c1: 0.015,
                c2: 0.008,
                g: 0.03,
            },
            theta_true: 1.101,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_param!(self.n_years >= 1, "n_years must be >= 1");
        ensure_param!(
            self.storm_rate >= 0.0 && self.storm_rate.is_finite(),
            "storm_rate must be non-negative"
        );
        ensure_param!(
            self.storm_shape > 0.0 && self.storm_scale > 0.0,
            "storm gamma shape and scale must be positive"
        );
        ensure_param!(
            self.noise_scale >= 0.0 && self.noise_scale.is_finite(),
            "noise_scale must be non-negative"
        );
        ensure_param!(self.scenario_count >= 1, "scenario_count must be >= 1");
        ensure_param!(
            self.theta_true >= 1.0 && self.theta_true.is_finite(),
            "theta_true must be >= 1"
        );
        ensure_param!(
            self.scenario_multipliers.len() == self.scenario_count,
            "expected {} scenario multipliers, got {}",
            self.scenario_count,
            self.scenario_multipliers.len()
        );
        ensure_param!(
            self.scenario_multipliers.iter().all(|m| *m > 0.0 && m.is_finite()),
            "scenario multipliers must be positive"
        );
        let l = &self.link;
        ensure_param!(
            [l.a, l.b, l.c1, l.c2, l.g].iter().all(|v| v.is_finite()),
            "claim link coefficients must be finite"
        );
        Ok(())
    }

    pub fn days(&self) -> usize {
        self.n_years * DAYS_PER_YEAR
    }

    pub fn scenario_ids(&self) -> Vec<String> {
        (0..self.scenario_count)
            .map(|k| match DEFAULT_SCENARIOS.get(k) {
                Some(name) => name.to_string(),
                None => format!("scenario-{}", k + 1),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimPeriod {
    Control,
    Scenario,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Weekly storm counts for one stream; `driver` supplies one uniform per week.
fn storm_days<R: Rng>(config: &WorldConfig, driver: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let days = config.days();
    let mut precip = vec![0.0; days];
    if config.storm_rate == 0.0 {
        return Ok(precip);
    }
    let counts = Marginal::poisson(config.storm_rate)?;
    let gamma = Gamma::new(config.storm_shape, config.storm_scale)
        .map_err(|e| Error::InvalidParameter(format!("storm gamma: {e}")))?;
    for (w, &u) in driver.iter().enumerate() {
        let storms = counts.quantile(u)? as usize;
        // intensity rises with the driver so joint extremes are wetter
        let intensity = 0.5 + u;
        for _ in 0..storms {
            let start = w * 7 + rng.random_range(0..7);
            let total = gamma.sample(rng) * intensity;
            let span = rng.random_range(1..=3usize);
            let weights: Vec<f64> = (0..span).map(|_| rng.random::<f64>() + 0.1).collect();
            let wsum: f64 = weights.iter().sum();
            for (j, wt) in weights.iter().enumerate() {
                if let Some(p) = precip.get_mut(start + j) {
                    *p += total * wt / wsum;
                }
            }
        }
    }
    Ok(precip)
}

/// Weekly Gumbel driver shared by every scenario stream: row `w` holds one
/// uniform per scenario.
fn scenario_driver(config: &WorldConfig) -> Result<Vec<Vec<f64>>> {
    let weeks = config.days() / 7;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(DRIVER_STREAM);
    let mut flat = Vec::with_capacity(weeks * config.scenario_count);
    for _ in 0..weeks {
        sample_gumbel_row(config.scenario_count, config.theta_true, &mut rng, &mut flat);
    }
    Ok(flat.chunks_exact(config.scenario_count).map(|r| r.to_vec()).collect())
}

/// Daily precipitation for the control period or one projection scenario.
/// Claims are left at zero.
pub fn gen_daily_precip(config: &WorldConfig, period: SimPeriod, scenario_id: usize) -> Result<Vec<DailyRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (start, multiplier, driver) = match period {
        SimPeriod::Control => {
            rng.set_stream(0);
            let driver: Vec<f64> = (0..config.days() / 7).map(|_| rng.random::<f64>()).collect();
            (config.control_start, 1.0, driver)
        }
        SimPeriod::Scenario => {
            ensure_param!(
                scenario_id < config.scenario_count,
                "scenario {scenario_id} out of range 0..{}",
                config.scenario_count
            );
            rng.set_stream(scenario_id as u64 + 1);
            let driver = scenario_driver(config)?.into_iter().map(|row| row[scenario_id]).collect();
            (config.scenario_start, config.scenario_multipliers[scenario_id], driver)
        }
    };
    let precip = storm_days(config, &driver, &mut rng)?;
    Ok(precip
        .into_iter()
        .enumerate()
        .map(|(i, p)| DailyRecord {
            date: start + chrono::Days::new(i as u64),
            precip_mm: p * multiplier,
            claims: 0.0,
            insured: None,
        })
        .collect())
}

/// Noiseless link value for week `t` of `(x, d)` pairs; lags before the
/// start count as zero precipitation.
pub fn claim_mean(link: &ClaimLink, x: &[f64], d: &[f64], t: usize) -> f64 {
    let lag = |k: usize| if t >= k { x[t - k] } else { 0.0 };
    softplus(link.a + link.b * x[t] + link.c1 * lag(1) + link.c2 * lag(2) + link.g * d[t])
}

/// Weekly claims from weekly `(x, d)`, with zero-mean Gaussian noise and
/// truncation at 0.
pub fn gen_claims(x: &[f64], d: &[f64], config: &WorldConfig) -> Result<Vec<f64>> {
    ensure_param!(x.len() == d.len(), "x and d lengths differ");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(NOISE_STREAM);
    let noise = if config.noise_scale > 0.0 {
        Some(Normal::new(0.0, config.noise_scale).map_err(|e| Error::InvalidParameter(e.to_string()))?)
    } else {
        None
    };
    Ok((0..x.len())
        .map(|t| {
            let mean = claim_mean(&config.link, x, d, t);
            let eps = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
            (mean + eps).max(0.0)
        })
        .collect())
}

/// A simulated city: control-period daily file and projection scenarios.
#[derive(Debug, Clone)]
pub struct SimulatedWorld {
    pub control_daily: Vec<DailyRecord>,
    pub control_weekly: WeeklySeries,
    pub scenarios: ScenarioSet,
}

pub fn simulate_world(config: &WorldConfig) -> Result<SimulatedWorld> {
    config.validate()?;
    let mut days = gen_daily_precip(config, SimPeriod::Control, 0)?;
    let weekly = aggregate_weekly(&days, None, ClaimAggregation::Mean)?;
    let x: Vec<f64> = weekly.weeks().iter().map(|w| w.x).collect();
    let d: Vec<f64> = weekly.weeks().iter().map(|w| w.d).collect();
    let claims = gen_claims(&x, &d, config)?;
    for (week, n) in days.chunks_mut(7).zip(&claims) {
        for day in week {
            day.claims = *n;
        }
    }
    let control_weekly = aggregate_weekly(&days, None, ClaimAggregation::Mean)?;

    let ids = config.scenario_ids();
    let mut scenarios = Vec::with_capacity(config.scenario_count);
    for (k, id) in ids.into_iter().enumerate() {
        let daily = gen_daily_precip(config, SimPeriod::Scenario, k)?;
        let weeks = aggregate_weekly(&daily, None, ClaimAggregation::Mean)?
            .into_weeks()
            .into_iter()
            .map(|w| ScenarioWeek {
                week_start: w.week_start,
                scenario_id: id.clone(),
                x: w.x,
                d: w.d,
            })
            .collect();
        scenarios.push((id, weeks));
    }
    Ok(SimulatedWorld {
        control_daily: days,
        control_weekly,
        scenarios: ScenarioSet { scenarios },
    })
}

/// `n` rows of `margins.len()` dependent predictions: Gumbel(θ) copula draws
/// pushed through each margin's inverse CDF.
pub fn gen_ensemble_predictions(n: usize, theta: f64, margins: &[Marginal], seed: u64) -> Result<Vec<Vec<f64>>> {
    ensure_param!(!margins.is_empty(), "need at least one margin");
    let u = sample_gumbel(n, margins.len(), theta, seed)?;
    u.into_iter()
        .map(|row| row.iter().zip(margins).map(|(&p, m)| m.quantile(p)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_dry() {
        let cfg = WorldConfig {
            storm_rate: 0.0,
            n_years: 1,
            ..Default::default()
        };
        let days = gen_daily_precip(&cfg, SimPeriod::Control, 0).unwrap();
        assert!(days.iter().all(|d| d.precip_mm == 0.0));
    }

    #[test]
    fn multiplier_doubles_weekly_totals() {
        let mut cfg = WorldConfig {
            n_years: 2,
            ..Default::default()
        };
        cfg.scenario_multipliers = vec![1.0; 6];
        let base = gen_daily_precip(&cfg, SimPeriod::Scenario, 3).unwrap();
        cfg.scenario_multipliers[3] = 2.0;
        let doubled = gen_daily_precip(&cfg, SimPeriod::Scenario, 3).unwrap();
        let wa = aggregate_weekly(&base, None, ClaimAggregation::Mean).unwrap();
        let wb = aggregate_weekly(&doubled, None, ClaimAggregation::Mean).unwrap();
        for (a, b) in wa.weeks().iter().zip(wb.weeks()) {
            assert_eq!(b.x, 2.0 * a.x);
            assert_eq!(b.d, 2.0 * a.d);
        }
    }

    #[test]
    fn decade_is_520_weeks() {
        let world = simulate_world(&WorldConfig::default()).unwrap();
        assert_eq!(world.control_weekly.len(), 520);
        assert_eq!(world.scenarios.scenarios.len(), 6);
        assert!(world.scenarios.scenarios.iter().all(|(_, w)| w.len() == 520));
    }

    #[test]
    fn baseline_claims_without_rain() {
        let cfg = WorldConfig {
            noise_scale: 0.0,
            ..Default::default()
        };
        let c = gen_claims(&[0.0; 5], &[0.0; 5], &cfg).unwrap();
        let expect = (1.0 + cfg.link.a.exp()).ln();
        assert!(c.iter().all(|v| (v - expect).abs() < 1e-15));
    }

    #[test]
    fn larger_sensitivity_raises_claims() {
        let mut cfg = WorldConfig {
            noise_scale: 0.0,
            n_years: 2,
            ..Default::default()
        };
        let w = simulate_world(&cfg).unwrap().control_weekly;
        let x: Vec<f64> = w.weeks().iter().map(|w| w.x).collect();
        let d: Vec<f64> = w.weeks().iter().map(|w| w.d).collect();
        let lo: f64 = gen_claims(&x, &d, &cfg).unwrap().iter().sum();
        cfg.link.b *= 2.0;
        let hi: f64 = gen_claims(&x, &d, &cfg).unwrap().iter().sum();
        assert!(hi > lo);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = WorldConfig {
            n_years: 1,
            ..Default::default()
        };
        let a = simulate_world(&cfg).unwrap();
        let b = simulate_world(&cfg).unwrap();
        assert_eq!(a.control_daily, b.control_daily);
        assert_eq!(a.scenarios, b.scenarios);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = WorldConfig {
            theta_true: 0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = WorldConfig {
            scenario_multipliers: vec![1.0; 2],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
