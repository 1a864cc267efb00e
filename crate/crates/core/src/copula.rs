//! The d-variate Gumbel copula
//!
//! ```text
//! C(u_1, ..., u_d) = exp{ -[ Σ (-ln u_i)^θ ]^{1/θ} },   θ >= 1
//! ```
//!
//! with CDF and bivariate density evaluation in log space, sampling through
//! the positive-stable frailty construction, rank-based pseudo-observations
//! and two estimators of θ (Kendall's tau inversion and pairwise composite
//! likelihood), each with a row-bootstrap standard error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_param, Error, Result};
use crate::optimize::brent_minimize;

/// Upper end of the θ search bracket for likelihood estimation.
pub const THETA_MAX: f64 = 50.0;

/// Default number of bootstrap replicates for standard errors.
pub const DEFAULT_BOOTSTRAP_REPS: usize = 500;

fn check_theta(theta: f64) -> Result<()> {
    ensure_param!(theta >= 1.0 && theta.is_finite(), "Gumbel θ must be finite and >= 1, got {theta}");
    Ok(())
}

/// Gumbel copula CDF at `u` (any dimension >= 1).
pub fn gumbel_cdf(u: &[f64], theta: f64) -> Result<f64> {
    check_theta(theta)?;
    ensure_param!(!u.is_empty(), "empty copula argument");
    ensure_param!(
        u.iter().all(|v| (0.0..=1.0).contains(v)),
        "copula arguments must lie in [0,1]"
    );
    Ok(gumbel_cdf_unchecked(u, theta))
}

fn gumbel_cdf_unchecked(u: &[f64], theta: f64) -> f64 {
    if u.contains(&0.0) {
        return 0.0;
    }
    if theta == 1.0 {
        return u.iter().product();
    }
    let active: Vec<f64> = u.iter().copied().filter(|&v| v < 1.0).collect();
    match active.len() {
        0 => 1.0,
        1 => active[0],
        _ => (-gumbel_exponent(&log_terms(&active, theta), theta)).exp(),
    }
}

/// `θ·ln(-ln u_i)` per coordinate: `-inf` for `u_i = 1`, `+inf` for `u_i = 0`.
pub(crate) fn log_terms(u: &[f64], theta: f64) -> Vec<f64> {
    u.iter().map(|&v| theta * (-v.ln()).ln()).collect()
}

/// `(Σ (-ln u_i)^θ)^{1/θ}` from [`log_terms`], via log-sum-exp so large θ
/// neither overflows nor underflows. The copula CDF is `exp(-A)`.
pub(crate) fn gumbel_exponent(logs: &[f64], theta: f64) -> f64 {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return if m > 0.0 { f64::INFINITY } else { 0.0 };
    }
    let lse = m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    (lse / theta).exp()
}

/// Log of the bivariate Gumbel density for `u, v` in (0,1).
pub fn ln_gumbel_bivariate_density(u: f64, v: f64, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    ensure_param!(
        u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0,
        "density arguments must lie in the open unit square, got ({u}, {v})"
    );
    let x = -u.ln();
    let y = -v.ln();
    Ok(ln_density_xy(x, y, x.ln(), y.ln(), theta))
}

/// Log density in terms of `x = -ln u`, `y = -ln v` and their logs.
#[inline]
fn ln_density_xy(x: f64, y: f64, lx: f64, ly: f64, theta: f64) -> f64 {
    let a = theta * lx;
    let b = theta * ly;
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let lt = hi + (lo - hi).exp().ln_1p();
    let t_root = (lt / theta).exp();
    -t_root + x + y + (theta - 1.0) * (lx + ly) + (1.0 / theta - 2.0) * lt + (t_root + theta - 1.0).ln()
}

pub fn gumbel_bivariate_density(u: f64, v: f64, theta: f64) -> Result<f64> {
    Ok(ln_gumbel_bivariate_density(u, v, theta)?.exp())
}

/// Kendall's tau of the Gumbel copula, `1 - 1/θ`.
pub fn tau_of_theta(theta: f64) -> f64 {
    1.0 - 1.0 / theta
}

/// Inverts `τ = 1 - 1/θ`, flooring at θ = 1 for non-positive τ.
pub fn theta_from_tau(tau: f64) -> Result<f64> {
    if !(tau < 1.0) {
        return Err(Error::Numerical(format!(
            "average Kendall tau {tau} >= 1 has no Gumbel θ"
        )));
    }
    Ok((1.0 / (1.0 - tau)).max(1.0))
}

/// Positive α-stable variate with Laplace transform `exp(-s^α)`, 0 < α <= 1,
/// drawn with the Chambers–Mallows–Stuck (Kanter) representation.
pub fn sample_positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let u = std::f64::consts::PI * rng.random::<f64>();
    let w: f64 = Exp1.sample(rng);
    if u == 0.0 || w == 0.0 {
        // measure-zero draws; the limit of the formula is 0 resp. +inf
        return if u == 0.0 { f64::MIN_POSITIVE } else { f64::MAX };
    }
    let ln_s = (alpha * u).sin().ln() - u.sin().ln() / alpha
        + (1.0 - alpha) / alpha * (((1.0 - alpha) * u).sin().ln() - w.ln());
    ln_s.exp()
}

/// Keeps copula coordinates strictly inside (0,1).
#[inline]
fn open_unit(v: f64) -> f64 {
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Appends one Gumbel copula draw of dimension `d` to `out`.
pub fn sample_gumbel_row<R: Rng + ?Sized>(d: usize, theta: f64, rng: &mut R, out: &mut Vec<f64>) {
    if theta == 1.0 {
        out.extend((0..d).map(|_| open_unit(rng.random::<f64>())));
        return;
    }
    let alpha = 1.0 / theta;
    let s = sample_positive_stable(alpha, rng);
    out.extend((0..d).map(|_| {
        let e: f64 = Exp1.sample(rng);
        open_unit((-(e / s).powf(alpha)).exp())
    }));
}

/// `n` draws from the d-variate Gumbel copula, one row per draw.
pub fn sample_gumbel(n: usize, d: usize, theta: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_theta(theta)?;
    ensure_param!(d >= 1, "dimension must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let mut row = Vec::with_capacity(d);
            sample_gumbel_row(d, theta, &mut rng, &mut row);
            row
        })
        .collect())
}

/// Rank-transformed observations in (0,1), stored column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoObservations {
    columns: Vec<Vec<f64>>,
}

/// Average ranks (1-based) with ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

impl PseudoObservations {
    pub fn n(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Wraps values already in (0,1) (e.g. copula draws) without ranking.
    pub fn from_uniform_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        ensure_param!(d >= 1, "no columns");
        ensure_param!(rows.iter().all(|r| r.len() == d), "ragged rows");
        ensure_param!(
            rows.iter().flatten().all(|&v| v > 0.0 && v < 1.0),
            "values must lie strictly inside (0,1)"
        );
        Ok(PseudoObservations {
            columns: (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect(),
        })
    }

    fn from_columns_ranked(columns: Vec<Vec<f64>>) -> Self {
        let n = columns.first().map_or(0, Vec::len) as f64;
        PseudoObservations {
            columns: columns
                .iter()
                .map(|c| average_ranks(c).into_iter().map(|r| r / (n + 1.0)).collect())
                .collect(),
        }
    }

    /// Rows `idx` of this sample, re-ranked.
    fn resampled(&self, idx: &[usize]) -> Self {
        Self::from_columns_ranked(
            self.columns
                .iter()
                .map(|c| idx.iter().map(|&i| c[i]).collect())
                .collect(),
        )
    }
}

/// Column-wise `rank / (n + 1)` of an n×d matrix given as rows.
pub fn pseudo_observations(rows: &[Vec<f64>]) -> Result<PseudoObservations> {
    let n = rows.len();
    ensure_param!(n >= 10, "need at least 10 rows for pseudo-observations, got {n}");
    let d = rows[0].len();
    ensure_param!(d >= 1, "no columns");
    ensure_param!(rows.iter().all(|r| r.len() == d), "ragged rows");
    let columns: Vec<Vec<f64>> = (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    for (j, c) in columns.iter().enumerate() {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("column {j} has non-finite values")));
        }
        if c.iter().all(|&v| v == c[0]) {
            return Err(Error::Data(format!("column {j} is constant; ranks are undefined")));
        }
    }
    Ok(PseudoObservations::from_columns_ranked(columns))
}

/// Kendall's tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    ensure_param!(x.len() == y.len(), "kendall_tau: length mismatch");
    let n = x.len();
    ensure_param!(n >= 2, "kendall_tau needs at least two observations");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |t: u64| t * (t.saturating_sub(1)) / 2;
    let (mut tie_x, mut tie_xy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                tie_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tie_x += pairs(run_x);
            tie_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tie_x += pairs(run_x);
    tie_xy += pairs(run_xy);

    let mut seq: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut seq, &mut buf);

    let mut tie_y = 0u64;
    let mut run_y = 1u64;
    for w in seq.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            tie_y += pairs(run_y);
            run_y = 1;
        }
    }
    tie_y += pairs(run_y);

    let n0 = pairs(n as u64);
    let num = n0 as f64 - tie_x as f64 - tie_y as f64 + tie_xy as f64 - 2.0 * swaps as f64;
    let den = ((n0 - tie_x) as f64 * (n0 - tie_y) as f64).sqrt();
    if den == 0.0 {
        return Err(Error::Data("kendall_tau undefined for a constant column".into()));
    }
    Ok(num / den)
}

/// Sorts `v` ascending, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Mean of the d(d-1)/2 pairwise Kendall taus.
pub fn average_pairwise_tau(p: &PseudoObservations) -> Result<f64> {
    let d = p.d();
    ensure_param!(d >= 2, "need at least two columns, got {d}");
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..d {
        for k in j + 1..d {
            sum += kendall_tau(p.column(j), p.column(k))?;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    TauInversion,
    PairwiseCompositeMl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapOptions {
    /// Replicates for the standard error; 0 skips the bootstrap (se = 0).
    pub reps: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            reps: DEFAULT_BOOTSTRAP_REPS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaFit {
    pub theta: f64,
    pub se: f64,
    pub estimator: Estimator,
    pub n: usize,
    pub d: usize,
    pub bootstrap_reps: usize,
    pub seed: u64,
}

/// Standard deviation (n-1) of bootstrap replicates of `stat`, with
/// replicate `r` drawing rows from stream `r` of `seed`.
fn bootstrap_se<F: Fn(&PseudoObservations) -> Result<f64>>(
    p: &PseudoObservations,
    opts: BootstrapOptions,
    stat: F,
) -> Result<f64> {
    if opts.reps == 0 {
        return Ok(0.0);
    }
    let n = p.n();
    let mut reps = Vec::with_capacity(opts.reps);
    let mut idx = vec![0usize; n];
    for r in 0..opts.reps {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(r as u64 + 1);
        idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
        reps.push(stat(&p.resampled(&idx))?);
    }
    if reps.len() < 2 {
        return Ok(0.0);
    }
    let mean = reps.iter().sum::<f64>() / reps.len() as f64;
    let var = reps.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (reps.len() - 1) as f64;
    Ok(var.sqrt())
}

fn theta_tau(p: &PseudoObservations) -> Result<f64> {
    theta_from_tau(average_pairwise_tau(p)?)
}

/// θ̂ = 1/(1 - τ̄) from the average pairwise Kendall tau, floored at 1.
pub fn estimate_theta_tau(p: &PseudoObservations, opts: BootstrapOptions) -> Result<CopulaFit> {
    ensure_param!(p.d() >= 2, "need at least two columns");
    let theta = theta_tau(p)?;
    let se = bootstrap_se(p, opts, theta_tau)?;
    Ok(CopulaFit {
        theta,
        se,
        estimator: Estimator::TauInversion,
        n: p.n(),
        d: p.d(),
        bootstrap_reps: opts.reps,
        seed: opts.seed,
    })
}

/// Precomputed `x = -ln u` and `ln x` for every column.
struct PairTerms {
    x: Vec<Vec<f64>>,
    lx: Vec<Vec<f64>>,
}

impl PairTerms {
    fn new(p: &PseudoObservations) -> Self {
        let x: Vec<Vec<f64>> = p.columns.iter().map(|c| c.iter().map(|u| -u.ln()).collect()).collect();
        let lx = x.iter().map(|c| c.iter().map(|v| v.ln()).collect()).collect();
        PairTerms { x, lx }
    }

    fn composite_loglik(&self, theta: f64) -> f64 {
        let d = self.x.len();
        let mut total = 0.0;
        for j in 0..d {
            for k in j + 1..d {
                let (xj, xk, lj, lk) = (&self.x[j], &self.x[k], &self.lx[j], &self.lx[k]);
                for i in 0..xj.len() {
                    total += ln_density_xy(xj[i], xk[i], lj[i], lk[i], theta);
                }
            }
        }
        total
    }
}

/// Sum over all column pairs and rows of the log bivariate Gumbel density.
pub fn composite_loglik(p: &PseudoObservations, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(PairTerms::new(p).composite_loglik(theta))
}

fn theta_cml(p: &PseudoObservations) -> Result<f64> {
    let terms = PairTerms::new(p);
    let (theta, value, converged) = brent_minimize(|t| -terms.composite_loglik(t), 1.0, THETA_MAX, 1e-9, 200);
    if !converged || !value.is_finite() {
        return Err(Error::Numerical(format!(
            "composite likelihood search did not converge (θ = {theta}, objective {value})"
        )));
    }
    // Brent never evaluates the bracket ends; the boundary θ = 1 is common
    // under independence
    if -terms.composite_loglik(1.0) <= value {
        return Ok(1.0);
    }
    Ok(theta)
}

/// Maximizes the pairwise composite likelihood over θ in `[1, THETA_MAX]`.
pub fn estimate_theta_cml(p: &PseudoObservations, opts: BootstrapOptions) -> Result<CopulaFit> {
    ensure_param!(p.d() >= 2, "need at least two columns");
    ensure_param!(
        p.columns.iter().flatten().all(|&u| u > 0.0 && u < 1.0),
        "pseudo-observations must lie strictly inside (0,1)"
    );
    let theta = theta_cml(p)?;
    let se = bootstrap_se(p, opts, theta_cml)?;
    Ok(CopulaFit {
        theta,
        se,
        estimator: Estimator::PairwiseCompositeMl,
        n: p.n(),
        d: p.d(),
        bootstrap_reps: opts.reps,
        seed: opts.seed,
    })
}

pub fn estimate(p: &PseudoObservations, estimator: Estimator, opts: BootstrapOptions) -> Result<CopulaFit> {
    match estimator {
        Estimator::TauInversion => estimate_theta_tau(p, opts),
        Estimator::PairwiseCompositeMl => estimate_theta_cml(p, opts),
    }
}
