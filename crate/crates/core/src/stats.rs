//! Estimators for Monte Carlo output: streaming moments, batch means,
//! jackknife covariances, autocorrelation times and decay fits.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Streaming mean and variance; merging is associative so per-thread
/// accumulators can be reduced in any grouping.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut w = Self::new();
        for &x in xs {
            w.push(x);
        }
        w
    }

    /// Rebuilds an accumulator from `(count, mean, M2)` as returned by
    /// [`Welford::parts`].
    pub fn from_parts(n: u64, mean: f64, m2: f64) -> Self {
        Self { n, mean, m2 }
    }

    pub fn parts(&self) -> (u64, f64, f64) {
        (self.n, self.mean, self.m2)
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error assuming independent samples.
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            math::sqrt(self.variance() / self.n as f64)
        }
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateWithError {
    pub mean: f64,
    pub std_error: f64,
    pub batches: usize,
    pub samples: usize,
}

/// Fewest batches for a reported error bar.
pub const MIN_BATCHES: usize = 8;

impl EstimateWithError {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            batches: 0,
            samples: 0,
        }
    }

    /// `(self − other)` in units of the combined standard error.
    pub fn z_score(&self, other: &Self) -> f64 {
        let s = math::sqrt(self.std_error * self.std_error + other.std_error * other.std_error);
        if s == 0.0 {
            if self.mean == other.mean {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - other.mean) / s
        }
    }

    pub fn difference(&self, other: &Self) -> Self {
        Self {
            mean: self.mean - other.mean,
            std_error: math::sqrt(self.std_error * self.std_error + other.std_error * other.std_error),
            batches: self.batches.min(other.batches),
            samples: self.samples.min(other.samples),
        }
    }

    pub fn consistent_with(&self, value: f64, sigmas: f64) -> bool {
        math::abs(self.mean - value) <= sigmas * self.std_error
    }

    /// Inverse-variance weighted combination of independent estimates.
    pub fn combine(estimates: &[Self]) -> Self {
        let mut wsum = 0.0;
        let mut acc = 0.0;
        for e in estimates {
            let w = 1.0 / (e.std_error * e.std_error).max(1e-300);
            wsum += w;
            acc += w * e.mean;
        }
        Self {
            mean: acc / wsum,
            std_error: math::sqrt(1.0 / wsum),
            batches: estimates.iter().map(|e| e.batches).sum(),
            samples: estimates.iter().map(|e| e.samples).sum(),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Batch-means estimate with `batches` equal contiguous batches (the tail
/// remainder is dropped).
pub fn batch_means(series: &[f64], batches: usize) -> Result<EstimateWithError> {
    if batches < 2 || series.len() < batches {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            min: batches.max(2),
        });
    }
    let size = series.len() / batches;
    let mut w = Welford::new();
    for b in series.chunks_exact(size).take(batches) {
        w.push(mean(b));
    }
    Ok(EstimateWithError {
        mean: w.mean(),
        std_error: w.std_error(),
        batches,
        samples: size * batches,
    })
}

/// Batch size for a series: about `20 τ_int` from a windowed pilot
/// estimate, capped so there are at least [`MIN_BATCHES`] batches.
pub fn auto_batch_size(series: &[f64]) -> usize {
    let tau = sokal_tau(series).unwrap_or(1.0);
    let want = math::ceil(20.0 * tau).max(1.0) as usize;
    want.min((series.len() / MIN_BATCHES).max(1))
}

/// Mean with a batch-means error bar, batch size chosen automatically.
pub fn estimate_mean(series: &[f64]) -> Result<EstimateWithError> {
    if series.len() < 2 * MIN_BATCHES {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            min: 2 * MIN_BATCHES,
        });
    }
    let size = auto_batch_size(series);
    batch_means(series, series.len() / size)
}

/// Jackknife over contiguous batches for an estimator of several aligned
/// series (e.g. a covariance of two observables).
pub fn jackknife<F>(series: &[&[f64]], batches: usize, estimator: F) -> Result<EstimateWithError>
where
    F: Fn(&[Vec<f64>]) -> f64,
{
    let len = series.first().map_or(0, |s| s.len());
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidArgument("jackknife series must have equal length".into()));
    }
    if batches < 2 || len < batches {
        return Err(Error::SeriesTooShort {
            len,
            min: batches.max(2),
        });
    }
    let size = len / batches;
    let used = size * batches;
    let full: Vec<Vec<f64>> = series.iter().map(|s| s[..used].to_vec()).collect();
    let center = estimator(&full);
    let mut leave_out = Vec::with_capacity(batches);
    for b in 0..batches {
        let cut: Vec<Vec<f64>> = series
            .iter()
            .map(|s| {
                let mut v = Vec::with_capacity(used - size);
                v.extend_from_slice(&s[..b * size]);
                v.extend_from_slice(&s[(b + 1) * size..used]);
                v
            })
            .collect();
        leave_out.push(estimator(&cut));
    }
    let m = mean(&leave_out);
    let var = leave_out.iter().map(|x| (x - m) * (x - m)).sum::<f64>() * (batches - 1) as f64 / batches as f64;
    Ok(EstimateWithError {
        mean: center,
        std_error: math::sqrt(var),
        batches,
        samples: used,
    })
}

/// `mean(fg) − mean(f) mean(g)`.
pub fn sample_covariance(f: &[f64], g: &[f64]) -> f64 {
    let mf = mean(f);
    let mg = mean(g);
    f.iter().zip(g).map(|(a, b)| (a - mf) * (b - mg)).sum::<f64>() / f.len() as f64
}

/// Covariance of two aligned series with a jackknife error bar; the batch
/// count follows the slower of the two series.
pub fn covariance_estimate(f: &[f64], g: &[f64]) -> Result<EstimateWithError> {
    if f.len() < 2 * MIN_BATCHES {
        return Err(Error::SeriesTooShort {
            len: f.len(),
            min: 2 * MIN_BATCHES,
        });
    }
    let size = auto_batch_size(f).max(auto_batch_size(g));
    let batches = (f.len() / size).max(MIN_BATCHES);
    jackknife(&[f, g], batches, |s| sample_covariance(&s[0], &s[1]))
}

/// Lag-`k` autocorrelation estimator around a precomputed mean and variance.
struct Correlator<'s> {
    series: &'s [f64],
    mean: f64,
    c0: f64,
}

impl<'s> Correlator<'s> {
    fn new(series: &'s [f64]) -> Self {
        let m = mean(series);
        let c0 = series.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / series.len() as f64;
        Self { series, mean: m, c0 }
    }

    fn rho(&self, k: usize) -> f64 {
        let n = self.series.len();
        if self.c0 == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        let m = self.mean;
        let s = self.series;
        s[..n - k]
            .iter()
            .zip(&s[k..])
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
            / n as f64
            / self.c0
    }
}

/// Normalized autocorrelation `ρ(k)` for `k = 0..=max_lag`.
pub fn autocorrelation_function(series: &[f64], max_lag: usize) -> Vec<f64> {
    let c = Correlator::new(series);
    (0..=max_lag.min(series.len().saturating_sub(1)))
        .map(|k| c.rho(k))
        .collect()
}

/// Windowed integrated autocorrelation time `1 + 2 Σ_{k≤W} ρ(k)` with the
/// self-consistent window `W ≥ 6 τ(W)`.
pub fn sokal_tau(series: &[f64]) -> Result<f64> {
    if series.len() < 2 * MIN_BATCHES {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            min: 2 * MIN_BATCHES,
        });
    }
    let c = Correlator::new(series);
    let max_lag = (series.len() / 4).max(1);
    let mut tau = 1.0;
    for w in 1..=max_lag {
        tau += 2.0 * c.rho(w);
        if w as f64 >= 6.0 * tau {
            break;
        }
    }
    Ok(tau.max(0.5))
}

/// Least-squares line with standard errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r2: f64,
}

/// Weighted least squares of `y` on `x`; `weights = None` means unit weights.
/// Standard errors use the residual scatter.
pub fn linear_fit(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::SeriesTooShort { len: n, min: 2 });
    }
    let ones = vec![1.0; n];
    let w = weights.unwrap_or(&ones);
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        sxx += w[i] * (x[i] - mx) * (x[i] - mx);
        sxy += w[i] * (x[i] - mx) * (y[i] - my);
        syy += w[i] * (y[i] - my) * (y[i] - my);
    }
    if sxx == 0.0 {
        return Err(Error::Numerical("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = (0..n)
        .map(|i| {
            let r = y[i] - intercept - slope * x[i];
            w[i] * r * r
        })
        .sum();
    let dof = (n as f64 - 2.0).max(1.0);
    let s2 = rss / dof;
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - rss / syy };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se: math::sqrt(s2 / sxx),
        intercept_se: math::sqrt(s2 * (1.0 / sw + mx * mx / sxx)),
        r2,
    })
}

/// Integrated and exponential autocorrelation summary of a series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Autocorrelation {
    /// Batch-means integrated time (1 for independent samples).
    pub tau_int: f64,
    /// Windowed pilot estimate used to pick the batch size.
    pub tau_window: f64,
    /// Fitted decay rate of `ρ(k) ≈ A e^{−rate·k}`.
    pub rate: f64,
    /// Half-width of a 95% interval for `rate`.
    pub rate_ci: f64,
    pub fit_lags: usize,
}

/// Fewest samples accepted by [`autocorrelation`].
pub const MIN_AUTOCORRELATION_SAMPLES: usize = 1000;

pub fn autocorrelation(series: &[f64]) -> Result<Autocorrelation> {
    let n = series.len();
    if n < MIN_AUTOCORRELATION_SAMPLES {
        return Err(Error::SeriesTooShort {
            len: n,
            min: MIN_AUTOCORRELATION_SAMPLES,
        });
    }
    let tau_window = sokal_tau(series)?;
    let size = auto_batch_size(series);
    let batches = n / size;
    let var = Welford::from_slice(series).variance();
    let bm = batch_means(series, batches)?;
    let tau_int = if var == 0.0 {
        1.0
    } else {
        size as f64 * bm.std_error * bm.std_error * batches as f64 / var
    };
    let c = Correlator::new(series);
    let noise = 4.0 * math::sqrt(tau_window.max(1.0) / n as f64);
    let mut lags = Vec::new();
    let mut logs = Vec::new();
    for k in 1..n / 10 {
        let r = c.rho(k);
        if r <= noise {
            break;
        }
        lags.push(k as f64);
        logs.push(math::ln(r));
    }
    let (rate, rate_ci) = if lags.len() >= 2 {
        // Weight by ρ² since var(log ρ) ∝ 1/ρ².
        let w: Vec<f64> = logs.iter().map(|l| math::exp(2.0 * l)).collect();
        let fit = linear_fit(&lags, &logs, Some(&w))?;
        (-fit.slope, 1.96 * fit.slope_se)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(Autocorrelation {
        tau_int,
        tau_window,
        rate,
        rate_ci,
        fit_lags: lags.len(),
    })
}

/// One point of a covariance-versus-distance scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayPoint {
    pub distance: f64,
    pub value: f64,
    pub error: f64,
}

/// Fit of `log |cov| = intercept + slope · distance`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub points: Vec<DecayPoint>,
    pub slope: f64,
    pub slope_ci: f64,
    pub intercept: f64,
    pub r2: f64,
    pub distances_used: Vec<f64>,
    pub excluded: usize,
}

impl DecayFit {
    /// `−slope`.
    pub fn rate(&self) -> f64 {
        -self.slope
    }
}

/// Result of a decay scan.
#[derive(Clone, Debug, PartialEq)]
pub enum DecayOutcome {
    Fit(DecayFit),
    /// Fewer than three distinct distances rose above the noise floor.
    BelowNoiseFloor {
        points: Vec<DecayPoint>,
        above_floor: usize,
    },
}

/// A point is below the noise floor when `|value| < floor_sigmas · error`.
pub fn fit_decay(points: &[DecayPoint], floor_sigmas: f64) -> Result<DecayOutcome> {
    let kept: Vec<DecayPoint> = points
        .iter()
        .copied()
        .filter(|p| math::abs(p.value) >= floor_sigmas * p.error && p.value != 0.0)
        .collect();
    let mut distinct: Vec<f64> = kept.iter().map(|p| p.distance).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Ok(DecayOutcome::BelowNoiseFloor {
            points: points.to_vec(),
            above_floor: kept.len(),
        });
    }
    let x: Vec<f64> = kept.iter().map(|p| p.distance).collect();
    let y: Vec<f64> = kept.iter().map(|p| math::ln(math::abs(p.value))).collect();
    let w: Vec<f64> = kept
        .iter()
        .map(|p| {
            let rel = p.error / math::abs(p.value);
            if rel > 0.0 {
                1.0 / (rel * rel)
            } else {
                1.0
            }
        })
        .collect();
    let fit = linear_fit(&x, &y, Some(&w))?;
    Ok(DecayOutcome::Fit(DecayFit {
        points: points.to_vec(),
        slope: fit.slope,
        slope_ci: 1.96 * fit.slope_se,
        intercept: fit.intercept,
        r2: fit.r2,
        distances_used: distinct,
        excluded: points.len() - kept.len(),
    }))
}

/// Kolmogorov–Smirnov test of samples against a continuous CDF; returns the
/// statistic and its asymptotic p-value.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    let sn = math::sqrt(n);
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * math::exp(-2.0 * kf * kf * lambda * lambda);
        p += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
