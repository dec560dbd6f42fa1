//! Kolmogorov–Smirnov tests, tolerance checks and bootstrap covariances.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{Domain, ReplicaKey};

pub const DEFAULT_LEVEL: f64 = 0.01;
pub const BOOTSTRAP_RESAMPLES: usize = 500;
const KS_MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    pub sizes: Vec<usize>,
    pub level: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TestReport {
    pub fn new(name: impl Into<String>, statistic: f64, p_value: f64, sizes: Vec<usize>, level: f64) -> Self {
        let p_value = if p_value.is_nan() { 0.0 } else { p_value.clamp(0.0, 1.0) };
        Self { name: name.into(), statistic, p_value, sizes, level, pass: p_value > level, note: None }
    }

    /// Checks `|estimate - target| <= k * se`. The statistic is the z-score
    /// and the p-value its two-sided normal tail, so the check passes exactly
    /// when the p-value exceeds the tail at `k`.
    pub fn z_check(name: impl Into<String>, estimate: f64, target: f64, se: f64, k: f64, size: usize) -> Self {
        let z = if se > 0.0 {
            (estimate - target) / se
        } else if estimate == target {
            0.0
        } else {
            f64::INFINITY.copysign(estimate - target)
        };
        let level = two_sided_tail(k);
        let mut r = Self::new(name, z, two_sided_tail(z.abs()), vec![size], level);
        r.pass = z.abs() <= k;
        r.note = Some(format!("estimate {estimate:.6} target {target:.6} se {se:.6}"));
        r
    }

    /// A check with no natural p-value: passes iff `ok`.
    pub fn flag(name: impl Into<String>, statistic: f64, ok: bool, note: impl Into<String>) -> Self {
        let mut r = Self::new(name, statistic, if ok { 1.0 } else { 0.0 }, vec![], 0.5);
        r.note = Some(note.into());
        r
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn two_sided_tail(z: f64) -> f64 {
    if !z.is_finite() {
        return 0.0;
    }
    2.0 * (1.0 - std_normal().cdf(z.abs()))
}

/// Survival function of the Kolmogorov distribution,
/// `2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`, truncated at 100 terms.
pub fn kolmogorov_sf(x: f64) -> f64 {
    // Below 0.2 the tail equals 1 to about 1e-12 and the alternating series
    // converges too slowly.
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * s).clamp(0.0, 1.0)
}

pub fn ks_normal(samples: &[f64], mean: f64, sd: f64) -> Result<TestReport> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples { needed: KS_MIN_SAMPLES, given: samples.len() });
    }
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::BadScale(sd));
    }
    let dist = Normal::new(mean, sd).map_err(|_| Error::BadScale(sd))?;
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = dist.cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(TestReport::new("ks_normal", d, kolmogorov_sf(n.sqrt() * d), vec![x.len()], DEFAULT_LEVEL))
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestReport> {
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLES {
            return Err(Error::TooFewSamples { needed: KS_MIN_SAMPLES, given: s.len() });
        }
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] == v {
            i += 1;
        }
        while j < m && y[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let (nf, mf) = (n as f64, m as f64);
    let lambda = (nf * mf / (nf + mf)).sqrt() * d;
    Ok(TestReport::new("ks_two_sample", d, kolmogorov_sf(lambda), vec![n, m], DEFAULT_LEVEL))
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 16 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn mean(x: &[f64]) -> f64 {
    pairwise_sum(x) / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    let d: Vec<f64> = x.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&d) / (x.len() as f64 - 1.0)
}

pub fn std_error_of_mean(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceEstimate {
    pub cov: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub replicas: usize,
}

fn covariance_of(rows: &[&[f64]], k: usize) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..k).map(|c| pairwise_sum(&rows.iter().map(|r| r[c]).collect::<Vec<_>>()) / n).collect();
    let mut cov = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a..k {
            let prods: Vec<f64> = rows.iter().map(|r| (r[a] - means[a]) * (r[b] - means[b])).collect();
            let v = pairwise_sum(&prods) / (n - 1.0);
            cov[a][b] = v;
            cov[b][a] = v;
        }
    }
    cov
}

/// Unbiased covariance of the columns of `samples` (one row per replica)
/// with bootstrap standard errors.
pub fn estimate_covariance(samples: &[Vec<f64>], seed: u64) -> Result<CovarianceEstimate> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, given: samples.len() });
    }
    let k = samples[0].len();
    if samples.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidParams("rows have different lengths".into()));
    }
    let rows: Vec<&[f64]> = samples.iter().map(|r| r.as_slice()).collect();
    let cov = covariance_of(&rows, k);
    let mut rng = ReplicaKey::new(seed, 0).stream(Domain::Bootstrap, 0);
    let n = rows.len();
    let mut sum = vec![vec![0.0; k]; k];
    let mut sum2 = vec![vec![0.0; k]; k];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let pick: Vec<&[f64]> = (0..n).map(|_| rows[((rng.uniform() * n as f64) as usize).min(n - 1)]).collect();
        let c = covariance_of(&pick, k);
        for a in 0..k {
            for b in 0..k {
                sum[a][b] += c[a][b];
                sum2[a][b] += c[a][b] * c[a][b];
            }
        }
    }
    let r = BOOTSTRAP_RESAMPLES as f64;
    let se = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| {
                    let m = sum[a][b] / r;
                    ((sum2[a][b] / r - m * m).max(0.0) * r / (r - 1.0)).sqrt()
                })
                .collect()
        })
        .collect();
    Ok(CovarianceEstimate { cov, se, replicas: n })
}
