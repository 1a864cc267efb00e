//! Joint exceedance probability `Φ(z) = P(Y_1 > z, ..., Y_d > z)` under a
//! Gumbel copula with fitted marginals.
//!
//! The exact evaluator uses inclusion–exclusion over coordinate subsets,
//!
//! ```text
//! P(U_1 > u_1, ..., U_d > u_d) = Σ_{S ⊆ {1..d}} (-1)^{|S|} C_S(u_S),
//! ```
//!
//! where `C_S` is the Gumbel CDF of the sub-vector (same θ). A Monte Carlo
//! estimator over copula draws serves as an independent check.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::copula::{gumbel_exponent, log_terms, sample_gumbel_row, CopulaFit};
use crate::error::{ensure_param, Error, Result};
use crate::marginals::{MarginalFit, Neumaier};

/// Largest dimension accepted by the exact evaluator (2^d terms).
pub const MAX_EXACT_DIM: usize = 20;

/// Draws per Monte Carlo shard; shard `k` uses stream `k` of the seed.
const MC_SHARD: usize = 1 << 14;

/// Minimum number of Monte Carlo draws.
pub const MIN_MC_DRAWS: usize = 10_000;

fn check_u(u: &[f64], theta: f64) -> Result<()> {
    ensure_param!(!u.is_empty(), "empty threshold vector");
    ensure_param!(
        u.iter().all(|v| (0.0..=1.0).contains(v)),
        "marginal probabilities must lie in [0,1]"
    );
    ensure_param!(theta >= 1.0 && theta.is_finite(), "Gumbel θ must be >= 1, got {theta}");
    Ok(())
}

/// Exact joint survival probability `P(U_i > u_i for all i)`.
pub fn joint_tail_exact(u: &[f64], theta: f64) -> Result<f64> {
    check_u(u, theta)?;
    let d = u.len();
    ensure_param!(d <= MAX_EXACT_DIM, "dimension {d} exceeds {MAX_EXACT_DIM} for exact evaluation");
    if theta == 1.0 {
        return Ok(u.iter().map(|v| 1.0 - v).product());
    }
    // Σ_S (-1)^|S| C_S with the constant parts cancelled: each term is
    // expm1(-A_S), of the order of the marginal tails instead of 1.
    let logs = log_terms(u, theta);
    let mut acc = Neumaier::default();
    let mut subset: Vec<f64> = Vec::with_capacity(d);
    for mask in 1u32..(1 << d) {
        subset.clear();
        subset.extend((0..d).filter(|i| mask >> i & 1 == 1).map(|i| logs[i]));
        let c = (-gumbel_exponent(&subset, theta)).exp_m1();
        if mask.count_ones() % 2 == 0 {
            acc.add(c);
        } else {
            acc.add(-c);
        }
    }
    Ok(acc.value().clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub se: f64,
    pub draws: usize,
}

impl McEstimate {
    fn from_count(hits: usize, draws: usize) -> Self {
        let p = hits as f64 / draws as f64;
        McEstimate {
            estimate: p,
            se: (p * (1.0 - p) / draws as f64).sqrt(),
            draws,
        }
    }
}

/// `n` Gumbel copula draws in sharded streams of `seed`, flattened row-major.
fn copula_draws(n: usize, d: usize, theta: f64, seed: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d);
    let mut remaining = n;
    let mut shard = 0u64;
    while remaining > 0 {
        let take = remaining.min(MC_SHARD);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(shard);
        for _ in 0..take {
            sample_gumbel_row(d, theta, &mut rng, &mut out);
        }
        remaining -= take;
        shard += 1;
    }
    out
}

fn count_exceed(draws: &[f64], u: &[f64]) -> usize {
    draws
        .chunks_exact(u.len())
        .filter(|row| row.iter().zip(u).all(|(x, t)| x > t))
        .count()
}

/// Fraction of `n` copula draws with every coordinate above its threshold.
pub fn joint_tail_mc(u: &[f64], theta: f64, n: usize, seed: u64) -> Result<McEstimate> {
    check_u(u, theta)?;
    ensure_param!(n >= MIN_MC_DRAWS, "need at least {MIN_MC_DRAWS} Monte Carlo draws, got {n}");
    let draws = copula_draws(n, u.len(), theta, seed);
    Ok(McEstimate::from_count(count_exceed(&draws, u), n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Control,
    Scenario,
}

impl Period {
    pub fn as_str(self) -> &'static str {
        match self {
            Period::Control => "control",
            Period::Scenario => "scenario",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RiskQuery {
    /// Strictly increasing thresholds in prediction units.
    pub z: Vec<f64>,
    /// One fitted marginal per scenario.
    pub marginals: Vec<MarginalFit>,
    pub copula: CopulaFit,
    /// Monte Carlo draws for the verification column.
    pub mc_draws: usize,
    pub seed: u64,
    pub city: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub z: f64,
    pub phi_exact: f64,
    pub phi_mc: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub city: String,
    pub period: Period,
    pub points: Vec<RiskPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RiskCurve {
    pub fn z(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.z).collect()
    }

    pub fn phi(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.phi_exact).collect()
    }
}

fn check_grid(z: &[f64]) -> Result<()> {
    ensure_param!(!z.is_empty(), "empty threshold grid");
    ensure_param!(z.iter().all(|v| v.is_finite()), "threshold grid must be finite");
    ensure_param!(
        z.windows(2).all(|w| w[1] > w[0]),
        "threshold grid must be strictly increasing"
    );
    Ok(())
}

/// Scenario-period curve: exact and Monte Carlo Φ at every threshold.
/// The Monte Carlo column reuses one set of copula draws for the whole grid.
pub fn risk_curve(query: &RiskQuery) -> Result<RiskCurve> {
    check_grid(&query.z)?;
    let d = query.marginals.len();
    ensure_param!(d >= 1, "no marginal fits");
    ensure_param!(
        d == query.copula.d,
        "{d} marginals but the copula was fitted in dimension {}",
        query.copula.d
    );
    let theta = query.copula.theta;
    let draws = if query.mc_draws > 0 {
        ensure_param!(
            query.mc_draws >= MIN_MC_DRAWS,
            "need at least {MIN_MC_DRAWS} Monte Carlo draws"
        );
        copula_draws(query.mc_draws, d, theta, query.seed)
    } else {
        Vec::new()
    };
    let mut warnings = Vec::new();
    let mut points = Vec::with_capacity(query.z.len());
    for &z in &query.z {
        let u: Vec<f64> = query.marginals.iter().map(|m| m.cdf_original(z)).collect();
        let phi_exact = joint_tail_exact(&u, theta)?;
        if phi_exact >= 1.0 {
            warnings.push(format!("z = {z} lies below the support of every marginal (Φ = 1)"));
        }
        let (phi_mc, mc_se) = if query.mc_draws > 0 {
            let est = McEstimate::from_count(count_exceed(&draws, &u), query.mc_draws);
            (est.estimate, est.se)
        } else {
            (f64::NAN, f64::NAN)
        };
        points.push(RiskPoint {
            z,
            phi_exact,
            phi_mc,
            mc_se,
        });
    }
    Ok(RiskCurve {
        city: query.city.clone(),
        period: Period::Scenario,
        points,
        warnings,
    })
}

/// Control-period curve: the univariate tail `1 - F(z)` of a single fitted
/// marginal, with a Monte Carlo column from draws of that marginal.
pub fn univariate_tail_curve(fit: &MarginalFit, z: &[f64], mc_draws: usize, seed: u64, city: &str) -> Result<RiskCurve> {
    check_grid(z)?;
    let samples: Vec<f64> = if mc_draws > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..mc_draws).map(|_| fit.marginal.sample(&mut rng)).collect()
    } else {
        Vec::new()
    };
    let mut warnings = Vec::new();
    let points = z
        .iter()
        .map(|&z| {
            let phi_exact = fit.survival_original(z);
            if phi_exact >= 1.0 {
                warnings.push(format!("z = {z} lies below the marginal support (Φ = 1)"));
            }
            let (phi_mc, mc_se) = if mc_draws > 0 {
                let hits = samples.iter().filter(|&&y| y > z * fit.scale).count();
                let est = McEstimate::from_count(hits, mc_draws);
                (est.estimate, est.se)
            } else {
                (f64::NAN, f64::NAN)
            };
            RiskPoint {
                z,
                phi_exact,
                phi_mc,
                mc_se,
            }
        })
        .collect();
    Ok(RiskCurve {
        city: city.to_string(),
        period: Period::Control,
        points,
        warnings,
    })
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `count` log-spaced thresholds between the `lo_q` and `hi_q` empirical
/// quantiles of the pooled predictions.
pub fn default_z_grid(pooled: &[f64], count: usize, lo_q: f64, hi_q: f64) -> Result<Vec<f64>> {
    ensure_param!(count >= 2, "grid needs at least two points");
    ensure_param!(
        0.0 <= lo_q && lo_q < hi_q && hi_q <= 1.0,
        "need 0 <= lo_q < hi_q <= 1"
    );
    let mut sorted: Vec<f64> = pooled.iter().copied().filter(|v| v.is_finite()).collect();
    ensure_param!(!sorted.is_empty(), "no predictions to build a grid from");
    sorted.sort_by(f64::total_cmp);
    let mut lo = quantile(&sorted, lo_q);
    let hi = quantile(&sorted, hi_q);
    if lo <= 0.0 {
        lo = sorted.iter().copied().find(|&v| v > 0.0).unwrap_or(0.0);
    }
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Data(format!(
            "cannot build a log-spaced grid between {lo} and {hi}"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| {
            if i == count - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub z: f64,
    pub phi_a: f64,
    pub phi_b: f64,
    pub ratio: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskComparison {
    pub rows: Vec<ComparisonRow>,
    /// Fraction of the grid where curve b lies strictly above curve a.
    pub dominance: f64,
}

/// Pointwise ratio `b/a` and difference `b - a` on a shared grid. A ratio
/// with `a = 0` is 1 when `b = 0` too and infinite otherwise.
pub fn compare_risk(a: &RiskCurve, b: &RiskCurve) -> Result<RiskComparison> {
    ensure_param!(
        a.points.len() == b.points.len() && a.points.iter().zip(&b.points).all(|(p, q)| p.z == q.z),
        "risk curves must share the same threshold grid"
    );
    let rows: Vec<ComparisonRow> = a
        .points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| {
            let ratio = if p.phi_exact == q.phi_exact {
                1.0
            } else if p.phi_exact == 0.0 {
                f64::INFINITY
            } else {
                q.phi_exact / p.phi_exact
            };
            ComparisonRow {
                z: p.z,
                phi_a: p.phi_exact,
                phi_b: q.phi_exact,
                ratio,
                diff: q.phi_exact - p.phi_exact,
            }
        })
        .collect();
    let above = rows.iter().filter(|r| r.phi_b > r.phi_a).count();
    let dominance = if rows.is_empty() { 0.0 } else { above as f64 / rows.len() as f64 };
    Ok(RiskComparison { rows, dominance })
}

/// Writes curves as `z,phi_exact,phi_mc,mc_se,city,period`.
pub fn write_risk_csv<W: Write>(writer: W, curves: &[RiskCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["z", "phi_exact", "phi_mc", "mc_se", "city", "period"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                p.z.to_string(),
                p.phi_exact.to_string(),
                p.phi_mc.to_string(),
                p.mc_se.to_string(),
                c.city.clone(),
                c.period.as_str().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Deserialize)]
struct RiskRow {
    z: f64,
    phi_exact: f64,
    phi_mc: f64,
    mc_se: f64,
    city: String,
    period: Period,
}

/// Parses a risk CSV back into curves. Consecutive rows with the same
/// (city, period) and increasing `z` belong to one curve.
pub fn read_risk_csv<R: Read>(reader: R) -> Result<Vec<RiskCurve>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut curves: Vec<RiskCurve> = Vec::new();
    for rec in rdr.deserialize::<RiskRow>() {
        let r = rec?;
        let point = RiskPoint {
            z: r.z,
            phi_exact: r.phi_exact,
            phi_mc: r.phi_mc,
            mc_se: r.mc_se,
        };
        match curves.last_mut() {
            Some(c) if c.city == r.city && c.period == r.period && c.points.last().is_some_and(|p| p.z < r.z) => {
                c.points.push(point)
            }
            _ => curves.push(RiskCurve {
                city: r.city,
                period: r.period,
                points: vec![point],
                warnings: Vec::new(),
            }),
        }
    }
    Ok(curves)
}

pub fn write_comparison_csv<W: Write>(writer: W, cmp: &RiskComparison) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["z", "phi_a", "phi_b", "ratio", "diff"])?;
    for r in &cmp.rows {
        w.write_record([
            r.z.to_string(),
            r.phi_a.to_string(),
            r.phi_b.to_string(),
            r.ratio.to_string(),
            r.diff.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_comparison_csv<R: Read>(reader: R) -> Result<Vec<ComparisonRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
