//! Univariate claim-frequency distributions and their maximum likelihood
//! fits.
//!
//! Parameterizations:
//!
//! | family      | params     | mean              | variance          |
//! |-------------|------------|-------------------|-------------------|
//! | `poisson`   | λ          | λ                 | λ                 |
//! | `nb1`       | μ, σ       | μ                 | μ(1 + σμ)         |
//! | `nb2`       | μ, σ       | μ                 | μ(1 + σ)          |
//! | `zip`       | λ, π       | (1-π)λ            | (1-π)λ(1 + πλ)    |
//! | `lognormal` | m, s       | exp(m + s²/2)     | (e^{s²}-1)e^{2m+s²} |
//!
//! Probabilities are computed in log space. Discrete families are fitted on
//! non-negative integer samples; continuous predictions reach them through
//! [`prepare_sample`], which rescales by an exposure factor and rounds.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{ensure_param, Error, Result};
use crate::optimize::{bfgs_minimize, BfgsOptions};

/// Minimum sample size accepted by [`fit_mle`].
pub const MIN_FIT_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalFamily {
    Poisson,
    Nb1,
    Nb2,
    Zip,
    Lognormal,
}

impl MarginalFamily {
    pub const ALL: [MarginalFamily; 5] = [
        MarginalFamily::Poisson,
        MarginalFamily::Nb1,
        MarginalFamily::Nb2,
        MarginalFamily::Zip,
        MarginalFamily::Lognormal,
    ];

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            MarginalFamily::Poisson => &["lambda"],
            MarginalFamily::Nb1 | MarginalFamily::Nb2 => &["mu", "sigma"],
            MarginalFamily::Zip => &["lambda", "pi"],
            MarginalFamily::Lognormal => &["m", "s"],
        }
    }

    pub fn param_count(self) -> usize {
        self.param_names().len()
    }

    pub fn is_discrete(self) -> bool {
        !matches!(self, MarginalFamily::Lognormal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MarginalFamily::Poisson => "poisson",
            MarginalFamily::Nb1 => "nb1",
            MarginalFamily::Nb2 => "nb2",
            MarginalFamily::Zip => "zip",
            MarginalFamily::Lognormal => "lognormal",
        }
    }
}

impl fmt::Display for MarginalFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MarginalFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MarginalFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown marginal family '{s}'")))
    }
}

/// A family with validated parameter values (in `param_names` order).
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    family: MarginalFamily,
    params: Vec<f64>,
}

impl Marginal {
    pub fn new(family: MarginalFamily, params: &[f64]) -> Result<Self> {
        ensure_param!(
            params.len() == family.param_count(),
            "{family} takes {} parameters, got {}",
            family.param_count(),
            params.len()
        );
        ensure_param!(params.iter().all(|p| p.is_finite()), "{family} parameters must be finite");
        let ok = match family {
            MarginalFamily::Poisson => params[0] > 0.0,
            MarginalFamily::Nb1 | MarginalFamily::Nb2 => params[0] > 0.0 && params[1] > 0.0,
            MarginalFamily::Zip => params[0] > 0.0 && (0.0..1.0).contains(&params[1]),
            MarginalFamily::Lognormal => params[1] > 0.0,
        };
        ensure_param!(ok, "{family} parameters {params:?} outside their domain");
        Ok(Marginal {
            family,
            params: params.to_vec(),
        })
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        Self::new(MarginalFamily::Poisson, &[lambda])
    }

    pub fn nb1(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(MarginalFamily::Nb1, &[mu, sigma])
    }

    pub fn nb2(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(MarginalFamily::Nb2, &[mu, sigma])
    }

    pub fn zip(lambda: f64, pi: f64) -> Result<Self> {
        Self::new(MarginalFamily::Zip, &[lambda, pi])
    }

    pub fn lognormal(m: f64, s: f64) -> Result<Self> {
        Self::new(MarginalFamily::Lognormal, &[m, s])
    }

    pub fn family(&self) -> MarginalFamily {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Log probability (discrete) or log density (lognormal) at `y`.
    /// Discrete families give `-inf` off the non-negative integers.
    pub fn ln_density(&self, y: f64) -> f64 {
        let p = &self.params;
        match self.family {
            MarginalFamily::Lognormal => {
                if y <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let (m, s) = (p[0], p[1]);
                let z = (y.ln() - m) / s;
                -y.ln() - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
            }
            _ => {
                if y < 0.0 || y.fract() != 0.0 || !y.is_finite() {
                    return f64::NEG_INFINITY;
                }
                let k = y as u64;
                match self.family {
                    MarginalFamily::Poisson => ln_poisson(k, p[0]),
                    MarginalFamily::Nb1 => ln_nb1(k, p[0], p[1]),
                    MarginalFamily::Nb2 => ln_nb2(k, p[0], p[1]),
                    MarginalFamily::Zip => ln_zip(k, p[0], p[1]),
                    MarginalFamily::Lognormal => unreachable!(),
                }
            }
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        self.ln_density(y).exp()
    }

    /// `P(Y <= y)`.
    pub fn cdf(&self, y: f64) -> f64 {
        if y.is_nan() {
            return f64::NAN;
        }
        if y == f64::INFINITY {
            return 1.0;
        }
        match self.family {
            MarginalFamily::Lognormal => {
                if y <= 0.0 {
                    return 0.0;
                }
                let z = (y.ln() - self.params[0]) / self.params[1];
                0.5 * erfc(-z / std::f64::consts::SQRT_2)
            }
            _ => {
                if y < 0.0 {
                    return 0.0;
                }
                let top = y.floor() as u64;
                let mut acc = Neumaier::default();
                let mut k = 0;
                let mean = self.mean();
                while k <= top {
                    let term = self.ln_density(k as f64).exp();
                    acc.add(term);
                    // past the mode the terms only shrink
                    if k as f64 > mean && term < 1e-20 {
                        break;
                    }
                    k += 1;
                }
                acc.value().min(1.0)
            }
        }
    }

    /// `P(Y > y)`.
    pub fn survival(&self, y: f64) -> f64 {
        match self.family {
            MarginalFamily::Lognormal if y > 0.0 => {
                let z = (y.ln() - self.params[0]) / self.params[1];
                0.5 * erfc(z / std::f64::consts::SQRT_2)
            }
            _ => (1.0 - self.cdf(y)).max(0.0),
        }
    }

    /// Smallest `y` with `cdf(y) >= p` (discrete); inverse CDF (lognormal).
    pub fn quantile(&self, p: f64) -> Result<f64> {
        ensure_param!((0.0..=1.0).contains(&p), "quantile level {p} outside [0,1]");
        match self.family {
            MarginalFamily::Lognormal => {
                if p == 0.0 {
                    return Ok(0.0);
                }
                if p == 1.0 {
                    return Ok(f64::INFINITY);
                }
                let n = Normal::standard();
                let mut z = n.inverse_cdf(p);
                // Newton polish: the library inverse is only accurate to ~1e-9
                for _ in 0..2 {
                    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                    if pdf > 0.0 {
                        z -= (0.5 * erfc(-z / std::f64::consts::SQRT_2) - p) / pdf;
                    }
                }
                Ok((self.params[0] + self.params[1] * z).exp())
            }
            _ => {
                if p == 1.0 {
                    return Ok(f64::INFINITY);
                }
                let mut acc = Neumaier::default();
                let mut k: u64 = 0;
                loop {
                    acc.add(self.ln_density(k as f64).exp());
                    if acc.value() >= p {
                        return Ok(k as f64);
                    }
                    if k > 10_000_000 {
                        return Err(Error::Numerical(format!("{} quantile {p} did not terminate", self.family)));
                    }
                    k += 1;
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        let p = &self.params;
        match self.family {
            MarginalFamily::Poisson => p[0],
            MarginalFamily::Nb1 | MarginalFamily::Nb2 => p[0],
            MarginalFamily::Zip => (1.0 - p[1]) * p[0],
            MarginalFamily::Lognormal => (p[0] + 0.5 * p[1] * p[1]).exp(),
        }
    }

    pub fn variance(&self) -> f64 {
        let p = &self.params;
        match self.family {
            MarginalFamily::Poisson => p[0],
            MarginalFamily::Nb1 => p[0] * (1.0 + p[1] * p[0]),
            MarginalFamily::Nb2 => p[0] * (1.0 + p[1]),
            MarginalFamily::Zip => (1.0 - p[1]) * p[0] * (1.0 + p[1] * p[0]),
            MarginalFamily::Lognormal => {
                let s2 = p[1] * p[1];
                (s2.exp() - 1.0) * (2.0 * p[0] + s2).exp()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let p = &self.params;
        let poisson = |rng: &mut R, lambda: f64| -> f64 {
            if lambda <= 0.0 {
                0.0
            } else {
                Poisson::new(lambda).expect("positive rate").sample(rng)
            }
        };
        match self.family {
            MarginalFamily::Poisson => poisson(rng, p[0]),
            MarginalFamily::Nb1 => {
                // gamma-Poisson mixture with shape 1/σ and scale σμ
                let g = Gamma::new(1.0 / p[1], p[1] * p[0]).expect("valid gamma");
                let lambda = g.sample(rng);
                poisson(rng, lambda)
            }
            MarginalFamily::Nb2 => {
                let g = Gamma::new(p[0] / p[1], p[1]).expect("valid gamma");
                let lambda = g.sample(rng);
                poisson(rng, lambda)
            }
            MarginalFamily::Zip => {
                if rng.random::<f64>() < p[1] {
                    0.0
                } else {
                    poisson(rng, p[0])
                }
            }
            MarginalFamily::Lognormal => {
                let z: f64 = StandardNormal.sample(rng);
                (p[0] + p[1] * z).exp()
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MarginalDoc {
    family: MarginalFamily,
    params: BTreeMap<String, f64>,
}

impl Serialize for Marginal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MarginalDoc {
            family: self.family,
            params: self
                .family
                .param_names()
                .iter()
                .zip(&self.params)
                .map(|(n, v)| (n.to_string(), *v))
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Marginal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = MarginalDoc::deserialize(d)?;
        let names = doc.family.param_names();
        if doc.params.len() != names.len() {
            return Err(D::Error::custom(format!("{} expects parameters {:?}", doc.family, names)));
        }
        let params = names
            .iter()
            .map(|n| {
                doc.params
                    .get(*n)
                    .copied()
                    .ok_or_else(|| D::Error::custom(format!("missing parameter '{n}'")))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Marginal::new(doc.family, &params).map_err(D::Error::custom)
    }
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Above this count the rising-factorial loop gives way to `ln_gamma`.
const RISING_LOOP_MAX: u64 = 2000;

fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

fn ln_poisson(k: u64, lambda: f64) -> f64 {
    if k == 0 {
        return -lambda;
    }
    k as f64 * lambda.ln() - lambda - ln_factorial(k)
}

/// `ln Γ(k + r) - ln Γ(r) + k ln c`, i.e. `Σ_{j<k} ln(c (r + j))`.
fn ln_rising_scaled(k: u64, r: f64, c: f64) -> f64 {
    if k <= RISING_LOOP_MAX {
        (0..k).map(|j| (c * (r + j as f64)).ln()).sum()
    } else {
        ln_gamma(k as f64 + r) - ln_gamma(r) + k as f64 * c.ln()
    }
}

fn ln_nb1(k: u64, mu: f64, sigma: f64) -> f64 {
    // Γ(k+1/σ)/Γ(1/σ) (σμ)^k = Π_{j<k} μ(1 + jσ)
    let head = if k <= RISING_LOOP_MAX {
        (0..k).map(|j| (mu * (1.0 + j as f64 * sigma)).ln()).sum()
    } else {
        ln_rising_scaled(k, 1.0 / sigma, sigma * mu)
    };
    head - ln_factorial(k) - (k as f64 + 1.0 / sigma) * (sigma * mu).ln_1p()
}

fn ln_nb2(k: u64, mu: f64, sigma: f64) -> f64 {
    ln_rising_scaled(k, mu / sigma, sigma) - ln_factorial(k) - (k as f64 + mu / sigma) * sigma.ln_1p()
}

fn ln_zip(k: u64, lambda: f64, pi: f64) -> f64 {
    if k == 0 {
        (pi + (1.0 - pi) * (-lambda).exp()).ln()
    } else {
        (1.0 - pi).ln() + ln_poisson(k, lambda)
    }
}

/// Negative binomial type I probability mass at `y`.
pub fn nb1_pmf(y: u64, mu: f64, sigma: f64) -> Result<f64> {
    let m = Marginal::nb1(mu, sigma)?;
    Ok(ln_nb1(y, m.params[0], m.params[1]).exp())
}

pub fn family_density(family: MarginalFamily, params: &[f64], y: f64) -> Result<f64> {
    ensure_param!(y >= 0.0, "density argument must be non-negative, got {y}");
    Ok(Marginal::new(family, params)?.density(y))
}

pub fn family_cdf(family: MarginalFamily, params: &[f64], y: f64) -> Result<f64> {
    ensure_param!(y >= 0.0, "cdf argument must be non-negative, got {y}");
    Ok(Marginal::new(family, params)?.cdf(y))
}

/// A fitted marginal. `scale` maps the original prediction units onto the
/// fitted variable (`fitted = round(scale * prediction)` for discrete
/// families, `scale = 1` for raw lognormal fits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFit {
    #[serde(flatten)]
    pub marginal: Marginal,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n: usize,
    pub scale: f64,
    pub converged: bool,
}

impl MarginalFit {
    pub fn family(&self) -> MarginalFamily {
        self.marginal.family()
    }

    /// CDF in original prediction units.
    pub fn cdf_original(&self, z: f64) -> f64 {
        self.marginal.cdf(z * self.scale)
    }

    /// Survival function in original prediction units.
    pub fn survival_original(&self, z: f64) -> f64 {
        self.marginal.survival(z * self.scale)
    }
}

pub fn loglik(marginal: &Marginal, sample: &[f64]) -> f64 {
    sample.iter().map(|&y| marginal.ln_density(y)).sum()
}

pub fn aic(loglik: f64, k: usize) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

pub fn bic(loglik: f64, k: usize, n: usize) -> f64 {
    k as f64 * (n as f64).ln() - 2.0 * loglik
}

/// Maps continuous predictions onto the variable a family is fitted to:
/// `round(exposure * y)` for discrete families, unchanged for lognormal.
pub fn prepare_sample(values: &[f64], family: MarginalFamily, exposure: f64) -> Result<Vec<f64>> {
    ensure_param!(exposure > 0.0 && exposure.is_finite(), "exposure must be positive");
    ensure_param!(
        values.iter().all(|v| v.is_finite() && *v >= 0.0),
        "sample values must be finite and non-negative"
    );
    Ok(if family.is_discrete() {
        values.iter().map(|v| (v * exposure).round()).collect()
    } else {
        values.to_vec()
    })
}

fn sample_moments(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    (mean, var)
}

fn finish(marginal: Marginal, sample: &[f64], converged: bool, scale: f64) -> MarginalFit {
    let ll = loglik(&marginal, sample);
    let k = marginal.family().param_count();
    MarginalFit {
        marginal,
        loglik: ll,
        aic: aic(ll, k),
        bic: bic(ll, k, sample.len()),
        n: sample.len(),
        scale,
        converged,
    }
}

/// Maximum likelihood fit of `family` to `sample`.
///
/// Poisson and lognormal use their closed-form estimators; the two-parameter
/// count families run a bounded quasi-Newton search over log/logit
/// transformed parameters.
pub fn fit_mle(sample: &[f64], family: MarginalFamily) -> Result<MarginalFit> {
    fit_mle_scaled(sample, family, 1.0)
}

fn fit_mle_scaled(sample: &[f64], family: MarginalFamily, scale: f64) -> Result<MarginalFit> {
    ensure_param!(
        sample.len() >= MIN_FIT_SAMPLES,
        "need at least {MIN_FIT_SAMPLES} observations, got {}",
        sample.len()
    );
    if family.is_discrete() {
        if let Some(bad) = sample.iter().find(|y| !(y.fract() == 0.0 && **y >= 0.0)) {
            return Err(Error::Data(format!(
                "{family} needs non-negative integer observations, found {bad}"
            )));
        }
    }
    let (mean, var) = sample_moments(sample);
    match family {
        MarginalFamily::Poisson => {
            if mean <= 0.0 {
                return Err(Error::Data("poisson fit on an all-zero sample".into()));
            }
            Ok(finish(Marginal::poisson(mean)?, sample, true, scale))
        }
        MarginalFamily::Lognormal => {
            if sample.iter().all(|&y| y == 0.0) {
                return Err(Error::Data("lognormal fit on an all-zero sample".into()));
            }
            if let Some(bad) = sample.iter().find(|&&y| y <= 0.0) {
                return Err(Error::Data(format!(
                    "lognormal needs strictly positive observations, found {bad}"
                )));
            }
            let logs: Vec<f64> = sample.iter().map(|y| y.ln()).collect();
            let (m, v) = sample_moments(&logs);
            if v <= 0.0 {
                return Err(Error::Data("lognormal fit on a constant sample".into()));
            }
            Ok(finish(Marginal::lognormal(m, v.sqrt())?, sample, true, scale))
        }
        MarginalFamily::Nb1 | MarginalFamily::Nb2 | MarginalFamily::Zip => {
            if mean <= 0.0 {
                return Err(Error::Data(format!("{family} fit on an all-zero sample")));
            }
            fit_two_param(sample, family, mean, var, scale)
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn inv_logit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn fit_two_param(sample: &[f64], family: MarginalFamily, mean: f64, var: f64, scale: f64) -> Result<MarginalFit> {
    // tabulate counts so each likelihood evaluation is O(distinct values)
    let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
    for &y in sample {
        *counts.entry(y as u64).or_default() += 1.0;
    }
    let counts: Vec<(u64, f64)> = counts.into_iter().collect();

    let to_params = |x: &[f64]| -> [f64; 2] {
        match family {
            MarginalFamily::Zip => [x[0].exp(), inv_logit(x[1])],
            _ => [x[0].exp(), x[1].exp()],
        }
    };
    let nll = |x: &[f64]| -> f64 {
        let [a, b] = to_params(x);
        let lp = |k: u64| match family {
            MarginalFamily::Nb1 => ln_nb1(k, a, b),
            MarginalFamily::Nb2 => ln_nb2(k, a, b),
            MarginalFamily::Zip => ln_zip(k, a, b),
            _ => unreachable!(),
        };
        let total: f64 = counts.iter().map(|&(k, c)| c * lp(k)).sum();
        if total.is_finite() {
            -total
        } else {
            f64::INFINITY
        }
    };
    let x0 = match family {
        MarginalFamily::Nb1 => [mean.ln(), ((var - mean) / (mean * mean)).max(1e-2).ln()],
        MarginalFamily::Nb2 => [mean.ln(), (var / mean - 1.0).max(1e-2).ln()],
        MarginalFamily::Zip => {
            let zeros = sample.iter().filter(|&&y| y == 0.0).count() as f64 / sample.len() as f64;
            let pi0 = (zeros - (-mean).exp()).clamp(0.01, 0.9);
            [(mean / (1.0 - pi0)).ln(), logit(pi0)]
        }
        _ => unreachable!(),
    };
    let lower = [-30.0, -25.0];
    let upper = [30.0, 25.0];
    let min = bfgs_minimize(nll, &x0, &lower, &upper, BfgsOptions::default());
    if !min.converged || !min.value.is_finite() {
        let tail: Vec<String> = min.trace.iter().rev().take(5).map(|v| format!("{v:.6}")).collect();
        return Err(Error::Numerical(format!(
            "{family} MLE did not converge after {} iterations; last objective values [{}]",
            min.iterations,
            tail.join(", ")
        )));
    }
    let [a, b] = to_params(&min.x);
    let b = if family == MarginalFamily::Zip { b.min(1.0 - 1e-12) } else { b };
    let marginal = Marginal::new(family, &[a, b])?;
    Ok(finish(marginal, sample, true, scale))
}

/// Rescales/rounds `values` for `family` (see [`prepare_sample`]) and fits it,
/// recording the scale in the result.
pub fn fit_predictions(values: &[f64], family: MarginalFamily, exposure: f64) -> Result<MarginalFit> {
    let sample = prepare_sample(values, family, exposure)?;
    let scale = if family.is_discrete() { exposure } else { 1.0 };
    fit_mle_scaled(&sample, family, scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySelection {
    pub best: MarginalFit,
    pub candidates: Vec<MarginalFit>,
    /// Families that could not be fitted, with the reason.
    pub skipped: Vec<(MarginalFamily, String)>,
}

fn by_aic(a: &MarginalFit, b: &MarginalFit) -> std::cmp::Ordering {
    a.aic
        .total_cmp(&b.aic)
        .then(a.family().param_count().cmp(&b.family().param_count()))
}

/// Fits every family and keeps the minimum-AIC fit (ties go to the family
/// with fewer parameters). Families whose fit fails are reported in
/// `skipped`.
pub fn select_family(sample: &[f64], families: &[MarginalFamily]) -> Result<FamilySelection> {
    select_with(families, |f| fit_mle(sample, f))
}

/// As [`select_family`], preparing the sample per family from continuous
/// predictions with [`fit_predictions`].
pub fn select_family_predictions(values: &[f64], families: &[MarginalFamily], exposure: f64) -> Result<FamilySelection> {
    select_with(families, |f| fit_predictions(values, f, exposure))
}

fn select_with<F: Fn(MarginalFamily) -> Result<MarginalFit>>(families: &[MarginalFamily], fit: F) -> Result<FamilySelection> {
    ensure_param!(!families.is_empty(), "no candidate families");
    let mut candidates = Vec::new();
    let mut skipped = Vec::new();
    for &f in families {
        match fit(f) {
            Ok(m) => candidates.push(m),
            Err(e) => skipped.push((f, e.to_string())),
        }
    }
    let best = candidates
        .iter()
        .min_by(|a, b| by_aic(a, b))
        .cloned()
        .ok_or_else(|| Error::Data(format!("no family could be fitted: {skipped:?}")))?;
    Ok(FamilySelection {
        best,
        candidates,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nb1_hand_value() {
        assert!((nb1_pmf(0, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        // y=1: Γ(2)/Γ(1)Γ(2) * (1/2) * (1/2) = 0.25
        assert!((nb1_pmf(1, 1.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(nb1_pmf(0, -1.0, 1.0).is_err());
        assert!(nb1_pmf(0, 1.0, 0.0).is_err());
    }

    #[test]
    fn nb1_large_count_is_finite() {
        let p = nb1_pmf(500, 1.0, 1.0).unwrap();
        assert!(p > 0.0 && p.is_finite());
        // geometric with success probability 1/2: P(500) = 2^-501
        assert!((p.ln() - (-501.0 * 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn nb1_branches_agree() {
        // rising-product and ln_gamma routes meet at the loop threshold
        let (k, mu, sigma) = (RISING_LOOP_MAX, 3.0, 0.7);
        let r = 1.0 / sigma;
        let via_loop = ln_nb1(k, mu, sigma);
        let via_gamma = ln_gamma(k as f64 + r) - ln_gamma(r) + k as f64 * (sigma * mu).ln()
            - ln_factorial(k)
            - (k as f64 + r) * (sigma * mu).ln_1p();
        assert!((via_loop - via_gamma).abs() < 1e-7 * via_loop.abs(), "{via_loop} {via_gamma}");
    }

    #[test]
    fn poisson_closed_form() {
        let p = family_density(MarginalFamily::Poisson, &[2.0], 0.0).unwrap();
        assert!((p - (-2.0f64).exp()).abs() < 1e-15);
        assert!((p - 0.135335).abs() < 1e-6);
    }

    #[test]
    fn zip_with_zero_inflation_is_poisson() {
        let z = Marginal::zip(2.3, 0.0).unwrap();
        let p = Marginal::poisson(2.3).unwrap();
        for y in 0..20 {
            assert_eq!(z.density(y as f64), p.density(y as f64));
        }
    }

    #[test]
    fn cdf_axioms() {
        let ms = [
            Marginal::poisson(3.0).unwrap(),
            Marginal::nb1(2.0, 0.5).unwrap(),
            Marginal::nb2(2.0, 1.5).unwrap(),
            Marginal::zip(4.0, 0.3).unwrap(),
            Marginal::lognormal(0.2, 0.8).unwrap(),
        ];
        for m in &ms {
            assert_eq!(m.cdf(f64::INFINITY), 1.0);
            let mut prev = 0.0;
            for i in 0..200 {
                let c = m.cdf(i as f64 * 0.25);
                assert!(c >= prev && c <= 1.0, "{:?} at {}", m.family(), i);
                prev = c;
            }
            assert!((m.cdf(1e6) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let m = Marginal::nb1(5.0, 0.4).unwrap();
        for p in [0.01, 0.3, 0.5, 0.9, 0.999] {
            let q = m.quantile(p).unwrap();
            assert!(m.cdf(q) >= p);
            if q > 0.0 {
                assert!(m.cdf(q - 1.0) < p);
            }
        }
        let l = Marginal::lognormal(0.5, 0.3).unwrap();
        assert!((l.cdf(l.quantile(0.77).unwrap()) - 0.77).abs() < 1e-12);
    }

    #[test]
    fn information_criteria() {
        assert_eq!(aic(-100.0, 2), 204.0);
        assert_eq!(bic(-100.0, 2, 100), 2.0 * 100f64.ln() + 200.0);
    }

    #[test]
    fn poisson_mle_is_mean() {
        let sample: Vec<f64> = (0..40).map(|i| (i % 7) as f64).collect();
        let fit = fit_mle(&sample, MarginalFamily::Poisson).unwrap();
        let mean = sample.iter().sum::<f64>() / 40.0;
        assert_eq!(fit.marginal.params()[0], mean);
        assert_eq!(fit.aic, 2.0 - 2.0 * fit.loglik);
    }

    #[test]
    fn fit_errors() {
        assert!(fit_mle(&[1.0; 10], MarginalFamily::Poisson).is_err());
        assert!(fit_mle(&[0.0; 40], MarginalFamily::Lognormal).is_err());
        assert!(fit_mle(&vec![1.5; 40], MarginalFamily::Nb1).is_err());
    }

    #[test]
    fn nb1_mle_beats_truth() {
        let truth = Marginal::nb1(3.0, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sample: Vec<f64> = (0..500).map(|_| truth.sample(&mut rng)).collect();
        let fit = fit_mle(&sample, MarginalFamily::Nb1).unwrap();
        assert!(fit.converged);
        assert!(fit.loglik >= loglik(&truth, &sample));
    }

    #[test]
    fn marginal_json_shape() {
        let fit = fit_mle(&(0..50).map(|i| (i % 5) as f64).collect::<Vec<_>>(), MarginalFamily::Nb2).unwrap();
        let v: serde_json::Value = serde_json::to_value(&fit).unwrap();
        for key in ["family", "params", "loglik", "aic", "bic", "n"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: MarginalFit = serde_json::from_value(v).unwrap();
        assert_eq!(back, fit);
    }
}
