//! Summaries and the test battery used to compare runs.
//!
//! All p-values are asymptotic. Kolmogorov–Smirnov statistics and the
//! Kolmogorov tail are computed here; chi-square, Student t and binomial
//! tails come from `statrs`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, StudentsT};
use thiserror::Error;

use crate::process::Trajectory;

/// Smallest sample size for which a KS p-value is reported.
pub const KS_MIN_N: usize = 8;
/// Smallest expected count per chi-square category.
pub const CHI_SQUARE_MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    Empty,
    #[error("sample of size {n} is below the minimum {min} for an asymptotic p-value")]
    Undersized { n: usize, min: usize },
    #[error("cdf is not monotone in [0,1] at x={x}")]
    NonMonotoneCdf { x: f64 },
    #[error("chi-square needs >= 2 categories and expected count >= {min}, got {categories} categories with expected {expected}")]
    ChiSquarePrecondition {
        categories: usize,
        expected: f64,
        min: f64,
    },
    #[error("variance undefined for n={0}")]
    VarianceUndefined(u64),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("nominal rate must be positive, got {0}")]
    BadRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: u64,
    pub mean: f64,
    /// Unbiased; `None` when `n < 2`.
    pub variance: Option<f64>,
}

/// Single pass Welford mean and variance.
pub fn summarize(samples: &[f64]) -> Result<SampleSummary, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let n = samples.len() as u64;
    Ok(SampleSummary {
        n,
        mean,
        variance: (n >= 2).then(|| (m2 / (n - 1) as f64).max(0.0)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

/// Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let q = if lambda < 1.18 {
        // theta-function form converges fast for small lambda
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let cdf: f64 = (1..=20)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (-j * j * c).exp()
            })
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI).sqrt()
            / lambda;
        1.0 - cdf
    } else {
        2.0 * (1..=100)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * kf * kf * lambda * lambda).exp()
            })
            .sum::<f64>()
    };
    q.clamp(0.0, 1.0)
}

/// Asymptotic KS p-value with the small-sample correction on the scale.
pub fn ks_p_value(d: f64, effective_n: f64) -> f64 {
    let sn = effective_n.sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// One-sample D against `cdf`, for any `n >= 1` (no p-value).
pub fn ks_one_sample_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    let mut prev_f = f64::NEG_INFINITY;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        if !(0.0..=1.0).contains(&f) || f < prev_f {
            return Err(StatsError::NonMonotoneCdf { x });
        }
        prev_f = f;
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above).max(below);
    }
    Ok(d)
}

pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult, StatsError> {
    if samples.len() < KS_MIN_N {
        return Err(StatsError::Undersized {
            n: samples.len(),
            min: KS_MIN_N,
        });
    }
    let d = ks_one_sample_statistic(samples, cdf)?;
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, samples.len() as f64),
        n: samples.len(),
        m: None,
    })
}

pub fn uniform_cdf(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Two-sample D over the pooled points, for any nonempty samples.
pub fn ks_two_sample_statistic(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let (xs, ys) = (sorted(a), sorted(b));
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    for s in [a, b] {
        if s.len() < KS_MIN_N {
            return Err(StatsError::Undersized {
                n: s.len(),
                min: KS_MIN_N,
            });
        }
    }
    let d = ks_two_sample_statistic(a, b)?;
    let (n, m) = (a.len() as f64, b.len() as f64);
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n * m / (n + m)),
        n: a.len(),
        m: Some(b.len()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub degrees_of_freedom: u64,
    pub p_value: f64,
}

/// Goodness of fit of `counts` against equal category probabilities.
pub fn chi_square_uniform(counts: &[u64]) -> Result<ChiSquareResult, StatsError> {
    let k = counts.len();
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / k.max(1) as f64;
    if k < 2 || expected < CHI_SQUARE_MIN_EXPECTED {
        return Err(StatsError::ChiSquarePrecondition {
            categories: k,
            expected,
            min: CHI_SQUARE_MIN_EXPECTED,
        });
    }
    let statistic: f64 = counts
        .iter()
        .map(|&o| {
            let diff = o as f64 - expected;
            diff * diff / expected
        })
        .sum();
    let df = (k - 1) as u64;
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        ChiSquared::new(df as f64)
            .expect("df >= 1")
            .sf(statistic)
            .clamp(0.0, 1.0)
    };
    Ok(ChiSquareResult {
        statistic,
        degrees_of_freedom: df,
        p_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
}

/// Welch two-sided test for a difference in means. Exact Student t tail
/// at the Welch–Satterthwaite degrees of freedom. When both variances are
/// zero the result is p = 1 for equal means and p = 0 otherwise.
pub fn welch_t(a: &SampleSummary, b: &SampleSummary) -> Result<WelchResult, StatsError> {
    let va = a.variance.ok_or(StatsError::VarianceUndefined(a.n))?;
    let vb = b.variance.ok_or(StatsError::VarianceUndefined(b.n))?;
    let sa = va / a.n as f64;
    let sb = vb / b.n as f64;
    let se2 = sa + sb;
    let diff = a.mean - b.mean;
    if se2 == 0.0 {
        return Ok(if diff == 0.0 {
            WelchResult {
                statistic: 0.0,
                degrees_of_freedom: (a.n + b.n - 2) as f64,
                p_value: 1.0,
            }
        } else {
            WelchResult {
                statistic: diff.signum() * f64::INFINITY,
                degrees_of_freedom: (a.n + b.n - 2) as f64,
                p_value: 0.0,
            }
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.n - 1) as f64 + sb * sb / (b.n - 1) as f64);
    let p_value = if t == 0.0 {
        1.0
    } else {
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
    };
    Ok(WelchResult {
        statistic: t,
        degrees_of_freedom: df,
        p_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub reported_time: f64,
    pub expected_time: f64,
    /// `expected_time - reported_time`
    pub lag: f64,
    pub per_tick_lag: f64,
    pub ticks: u64,
}

/// Lag of the simulated clock behind the time implied by its tick count.
pub fn clock_drift(traj: &Trajectory, nominal_rate: f64) -> Result<DriftReport, StatsError> {
    if traj.is_empty() {
        return Err(StatsError::EmptyTrajectory);
    }
    if !(nominal_rate > 0.0 && nominal_rate.is_finite()) {
        return Err(StatsError::BadRate(nominal_rate));
    }
    let ticks = traj.len() as u64;
    let expected_time = ticks as f64 / nominal_rate;
    let lag = expected_time - traj.final_time;
    Ok(DriftReport {
        reported_time: traj.final_time,
        expected_time,
        lag,
        per_tick_lag: lag / ticks as f64,
        ticks,
    })
}

/// Largest count of rejections out of `trials` at level `alpha` that is
/// still consistent with a correct test: the smallest `k` with
/// `P(Binomial(trials, alpha) > k) <= tail`.
pub fn binomial_upper_band(trials: u64, alpha: f64, tail: f64) -> u64 {
    if trials == 0 {
        return 0;
    }
    let dist = Binomial::new(alpha, trials).expect("alpha in [0,1]");
    (0..=trials).find(|&k| dist.sf(k) <= tail).unwrap_or(trials)
}
