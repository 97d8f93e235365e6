//! Frequencies, growth increments and shape coefficients recovered from
//! aggregate time series.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("times and values differ in length ({times} vs {values})")]
    Length { times: usize, values: usize },
    #[error("samples are not uniformly spaced")]
    NonUniform,
    #[error("basis frequencies/rates must be distinct and nonzero: {0}")]
    Basis(String),
    #[error("non-positive sample {value} at t = {t} in the trailing half")]
    NonPositive { t: f64, value: f64 },
    #[error("series contains non-finite values")]
    NonFinite,
}

/// One basis function of a mode fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    Constant,
    Cos(f64),
    Sin(f64),
    /// `e^{rate t}`; negative rates decay.
    Exp(f64),
}

impl Basis {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Basis::Constant => 1.0,
            Basis::Cos(w) => (w * t).cos(),
            Basis::Sin(w) => (w * t).sin(),
            Basis::Exp(g) => (g * t).exp(),
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Basis::Constant => write!(f, "1"),
            Basis::Cos(w) => write!(f, "cos({w}t)"),
            Basis::Sin(w) => write!(f, "sin({w}t)"),
            Basis::Exp(g) => write!(f, "exp({g}t)"),
        }
    }
}

/// Condition number above which a fit carries a warning.
pub const CONDITION_WARNING: f64 = 1e8;

/// Least-squares projection of a series onto a basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFit {
    pub basis: Vec<Basis>,
    pub coefficients: Vec<f64>,
    /// `‖series − fit‖ / ‖series‖`.
    pub residual: f64,
    /// Condition number of the column-normalized design matrix.
    pub condition: f64,
    pub warning: Option<String>,
}

impl ModeFit {
    pub fn coefficient(&self, b: Basis) -> Option<f64> {
        self.basis.iter().position(|&x| x == b).map(|i| self.coefficients[i])
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.basis
            .iter()
            .zip(&self.coefficients)
            .map(|(b, c)| c * b.eval(t))
            .sum()
    }
}

impl fmt::Display for ModeFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (b, c) in self.basis.iter().zip(&self.coefficients) {
            writeln!(f, "  {:<24} {:+.12e}", b.to_string(), c)?;
        }
        writeln!(
            f,
            "  relative residual {:.3e}, condition {:.3e}",
            self.residual, self.condition
        )?;
        if let Some(w) = &self.warning {
            writeln!(f, "  warning: {w}")?;
        }
        Ok(())
    }
}

/// Basis `{1} ∪ {cos ωt, sin ωt} ∪ {e^{γt}, e^{−γt}}`.
pub fn mode_basis(frequencies: &[f64], rates: &[f64]) -> Vec<Basis> {
    let mut basis = vec![Basis::Constant];
    for &w in frequencies {
        basis.push(Basis::Cos(w));
        basis.push(Basis::Sin(w));
    }
    for &g in rates {
        basis.push(Basis::Exp(g));
        basis.push(Basis::Exp(-g));
    }
    basis
}

/// Fits `series(t)` with the constant, a cos/sin pair per frequency and a
/// growing/decaying exponential pair per rate.
pub fn fit_modes(times: &[f64], series: &[f64], frequencies: &[f64], rates: &[f64]) -> Result<ModeFit, AnalysisError> {
    for (kind, list) in [("frequency", frequencies), ("rate", rates)] {
        for (i, &x) in list.iter().enumerate() {
            if !(x.is_finite() && x > 0.0) {
                return Err(AnalysisError::Basis(format!("{kind} {x} must be positive")));
            }
            if list[..i].iter().any(|&y| (x - y).abs() <= 1e-12 * x) {
                return Err(AnalysisError::Basis(format!("{kind} {x} repeated")));
            }
        }
    }
    fit_basis(times, series, &mode_basis(frequencies, rates))
}

/// Least-squares fit on an arbitrary basis.
pub fn fit_basis(times: &[f64], series: &[f64], basis: &[Basis]) -> Result<ModeFit, AnalysisError> {
    check_lengths(times, series)?;
    let needed = 2 * basis.len();
    if series.len() < needed {
        return Err(AnalysisError::TooFewSamples {
            needed,
            got: series.len(),
        });
    }
    let (coefficients, condition) = least_squares(times, series, basis);
    let mut err2 = 0.0;
    let mut norm2 = 0.0;
    for (&t, &y) in times.iter().zip(series) {
        let fit: f64 = basis.iter().zip(&coefficients).map(|(b, c)| c * b.eval(t)).sum();
        err2 += (y - fit).powi(2);
        norm2 += y * y;
    }
    let residual = if norm2 > 0.0 {
        (err2 / norm2).sqrt()
    } else {
        err2.sqrt()
    };
    let warning = (condition > CONDITION_WARNING)
        .then(|| format!("basis is ill-conditioned (condition estimate {condition:.3e}); modes are nearly coincident"));
    Ok(ModeFit {
        basis: basis.to_vec(),
        coefficients,
        residual,
        condition,
        warning,
    })
}

fn check_lengths(times: &[f64], series: &[f64]) -> Result<(), AnalysisError> {
    if times.len() != series.len() {
        return Err(AnalysisError::Length {
            times: times.len(),
            values: series.len(),
        });
    }
    if series.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(())
}

/// SVD least squares on unit-norm columns; returns the coefficients and the
/// condition number of the normalized design.
fn least_squares(times: &[f64], series: &[f64], basis: &[Basis]) -> (Vec<f64>, f64) {
    let (m, n) = (times.len(), basis.len());
    let mut design = DMatrix::from_fn(m, n, |i, j| basis[j].eval(times[i]));
    let mut scales = vec![1.0; n];
    for (j, s) in scales.iter_mut().enumerate() {
        let norm = design.column(j).norm();
        if norm > 0.0 {
            *s = norm;
            design.column_mut(j).unscale_mut(norm);
        }
    }
    let svd = design.svd(true, true);
    let (smax, smin) = svd
        .singular_values
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let y = DVector::from_column_slice(series);
    let x = svd
        .solve(&y, smax * 1e-14)
        .expect("both singular vector sets were computed");
    let coefficients = x.iter().zip(&scales).map(|(c, s)| c / s).collect();
    (coefficients, condition)
}

/// Slope of `ln y` against `t` over the trailing half of the samples.
pub fn growth_rate(times: &[f64], series: &[f64]) -> Result<f64, AnalysisError> {
    check_lengths(times, series)?;
    if series.len() < 4 {
        return Err(AnalysisError::TooFewSamples {
            needed: 4,
            got: series.len(),
        });
    }
    let start = series.len() / 2;
    let (t, y) = (&times[start..], &series[start..]);
    if let Some((&t, &value)) = t.iter().zip(y).find(|(_, &v)| v <= 0.0) {
        return Err(AnalysisError::NonPositive { t, value });
    }
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let lm = y.iter().map(|v| v.ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&ti, &yi) in t.iter().zip(y) {
        sxy += (ti - tm) * (yi.ln() - lm);
        sxx += (ti - tm).powi(2);
    }
    Ok(sxy / sxx)
}

/// A spectral peak in cycles per unit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub frequency: f64,
    /// Smoothed periodogram power at the peak.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Local maxima of the smoothed periodogram, strongest first.
    pub peaks: Vec<Peak>,
    pub median_power: f64,
    /// Frequency spacing of the transform.
    pub resolution: f64,
    /// Rate of the removed exponential trend (0 when none was fitted). The
    /// growth-rate estimate seeds a search minimizing the detrend residual.
    pub trend_rate: f64,
}

impl Spectrum {
    pub fn dominant(&self) -> Option<f64> {
        self.peaks.first().map(|p| p.frequency)
    }
}

/// Largest half-width in bins of the Daniell smoother used for peak
/// detection; shorter series use `n / 512` bins, at least one.
pub const SMOOTHING_HALF_WIDTH: usize = 8;

/// Periodogram peaks of a uniformly sampled series after removing a
/// constant-plus-exponential trend.
///
/// The trend is `{1, e^{γt}}` with `γ` chosen to minimize the detrended
/// power; when no exponential helps only the mean is removed. The detrended series is Hann
/// windowed and transformed. Peaks are detected on a Daniell-smoothed
/// periodogram and located on the raw one by three-point quadratic
/// interpolation of the log power.
pub fn spectrum(times: &[f64], series: &[f64]) -> Result<Spectrum, AnalysisError> {
    check_lengths(times, series)?;
    let n = series.len();
    if n < 64 {
        return Err(AnalysisError::TooFewSamples { needed: 64, got: n });
    }
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(AnalysisError::NonUniform);
    }
    let rel: Vec<f64> = times.iter().map(|t| t - times[0]).collect();
    let span = rel[n - 1];
    let trend_rate = trend_rate(&rel, series, span);
    let basis: Vec<Basis> = if trend_rate == 0.0 {
        vec![Basis::Constant]
    } else {
        vec![Basis::Constant, Basis::Exp(trend_rate)]
    };
    let (coef, _) = least_squares(&rel, series, &basis);
    let mut buf: Vec<Complex<f64>> = rel
        .iter()
        .zip(series)
        .enumerate()
        .map(|(i, (&t, &y))| {
            let trend: f64 = basis.iter().zip(&coef).map(|(b, c)| c * b.eval(t)).sum();
            let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            Complex::new((y - trend) * hann, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let raw: Vec<f64> = buf[..=half].iter().map(|z| z.norm_sqr()).collect();
    let h = (n / 512).clamp(1, SMOOTHING_HALF_WIDTH);
    let smooth: Vec<f64> = (0..=half)
        .map(|k| {
            let (lo, hi) = (k.saturating_sub(h), (k + h).min(half));
            raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let mut sorted = smooth[1..].to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median_power = sorted[sorted.len() / 2];
    let resolution = 1.0 / (n as f64 * dt);
    let mut peaks = Vec::new();
    for k in 1..=half {
        let left = smooth[k - 1];
        let right = if k < half { smooth[k + 1] } else { f64::NEG_INFINITY };
        if smooth[k] > left && smooth[k] >= right {
            let (lo, hi) = (k.saturating_sub(h).max(1), (k + h).min(half));
            let m = (lo..=hi).max_by(|&i, &j| raw[i].total_cmp(&raw[j])).unwrap_or(k);
            peaks.push(Peak {
                frequency: (m as f64 + refine(&raw, m)) * resolution,
                power: smooth[k],
            });
        }
    }
    peaks.sort_by(|a, b| b.power.total_cmp(&a.power));
    peaks.dedup_by(|a, b| (a.frequency - b.frequency).abs() < 0.5 * resolution);
    Ok(Spectrum {
        peaks,
        median_power,
        resolution,
        trend_rate,
    })
}

/// Squared residual of the `{1, e^{rate t}}` detrend (`rate = 0` removes
/// the mean only).
fn detrend_cost(t: &[f64], y: &[f64], rate: f64) -> f64 {
    let basis: &[Basis] = if rate == 0.0 {
        &[Basis::Constant]
    } else {
        &[Basis::Constant, Basis::Exp(rate)]
    };
    let (c, _) = least_squares(t, y, basis);
    t.iter()
        .zip(y)
        .map(|(&ti, &yi)| (yi - basis.iter().zip(&c).map(|(b, ci)| ci * b.eval(ti)).sum::<f64>()).powi(2))
        .sum()
}

/// Exponential trend rate, or 0 when no trend removes at least a tenth of
/// the mean-removed power.
///
/// Candidates are the log-linear growth of the series and of its first
/// differences (which drop the constant) plus a log-spaced scan of both
/// signs with `|γ| span` in `[0.5, 300]`; the best is polished by
/// golden-section search.
fn trend_rate(t: &[f64], y: &[f64], span: f64) -> f64 {
    let admissible = |g: &f64| g.is_finite() && g.abs() * span > 1e-6 && g.abs() * span < 600.0;
    let diffs: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let mut candidates: Vec<f64> = [growth_rate(t, y).ok(), growth_rate(&t[1..], &diffs).ok()]
        .into_iter()
        .flatten()
        .filter(admissible)
        .collect();
    for i in 0..24 {
        let g = 0.5 * 600f64.powf(i as f64 / 23.0) / span;
        candidates.extend([g, -g]);
    }
    let Some((best, cost)) = candidates
        .into_iter()
        .map(|g| (g, detrend_cost(t, y, g)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
    else {
        return 0.0;
    };
    let polished = refine_rate(t, y, best);
    let (g, cost) = match detrend_cost(t, y, polished) {
        c if c <= cost => (polished, c),
        _ => (best, cost),
    };
    if cost < 0.9 * detrend_cost(t, y, 0.0) {
        g
    } else {
        0.0
    }
}

/// Golden-section search for the rate minimizing the `{1, e^{γt}}`
/// detrending residual, over `[g/4, 4g]` in log scale.
fn refine_rate(t: &[f64], y: &[f64], g: f64) -> f64 {
    let cost = |log_rate: f64| detrend_cost(t, y, g.signum() * log_rate.exp());
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (g.abs().ln() - 4f64.ln(), g.abs().ln() + 4f64.ln());
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    for _ in 0..60 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = cost(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = cost(x2);
        }
    }
    g.signum() * (0.5 * (lo + hi)).exp()
}

/// Vertex offset of the parabola through the log powers at `m-1, m, m+1`.
fn refine(raw: &[f64], m: usize) -> f64 {
    if m == 0 || m + 1 >= raw.len() {
        return 0.0;
    }
    let tiny = f64::MIN_POSITIVE;
    let (a, b, c) = (
        raw[m - 1].max(tiny).ln(),
        raw[m].max(tiny).ln(),
        raw[m + 1].max(tiny).ln(),
    );
    let denom = a - 2.0 * b + c;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
}
