//! Error analysis for correlated Monte Carlo series: non-overlapping batch
//! means, the Ljung-Box portmanteau test on the batch means, and histogram
//! estimates of the phonon density.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SiteMatrix;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

/// Default number of lags for the Ljung-Box test.
pub const DEFAULT_LJUNG_BOX_LAGS: usize = 13;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("matrix dimension {got} does not match accumulator dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {needed} completed batches, have {have}")]
    TooFewBatches { needed: usize, have: usize },
    #[error("series of length {len} is too short for {lags} lags")]
    SeriesTooShort { len: usize, lags: usize },
    #[error("series has zero variance")]
    Degenerate,
    #[error("{0} outside its domain")]
    Domain(String),
    #[error("accumulators are incompatible: {0}")]
    Incompatible(String),
    #[error("histogram holds no in-range samples")]
    EmptyHistogram,
}

/// Default batch size for a run producing `n_samples` measurements.
pub fn default_batch_size(n_samples: u64) -> u64 {
    (n_samples / 40).max(1000)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    /// Identifies the chain the batch came from; fixes the merge order.
    pub stream: u64,
    pub index: u64,
    pub mean: Vec<f64>,
}

/// Streaming non-overlapping batch means of a matrix-valued series.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixAccumulator {
    dim: usize,
    batch_size: u64,
    stream: u64,
    open_sum: Vec<f64>,
    open_count: u64,
    next_index: u64,
    batches: Vec<BatchRecord>,
    total_count: u64,
}

impl MatrixAccumulator {
    pub fn new(dim: usize, batch_size: u64, stream: u64) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        Self {
            dim,
            batch_size,
            stream,
            open_sum: vec![0.0; dim * dim],
            open_count: 0,
            next_index: 0,
            batches: Vec::new(),
            total_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn batch_size(&self) -> u64 {
        self.batch_size
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn batches(&self) -> &[BatchRecord] {
        &self.batches
    }

    /// Samples sitting in the unfinished batch.
    pub fn pending(&self) -> u64 {
        self.open_count
    }

    pub fn push(&mut self, rho: &SiteMatrix) -> Result<(), StatsError> {
        if rho.dim() != self.dim {
            return Err(StatsError::DimensionMismatch {
                expected: self.dim,
                got: rho.dim(),
            });
        }
        for (s, x) in self.open_sum.iter_mut().zip(rho.as_slice()) {
            *s += x;
        }
        self.open_count += 1;
        self.total_count += 1;
        if self.open_count == self.batch_size {
            let inv = 1.0 / self.batch_size as f64;
            let mean = self.open_sum.iter().map(|s| s * inv).collect();
            self.batches.push(BatchRecord {
                stream: self.stream,
                index: self.next_index,
                mean,
            });
            self.next_index += 1;
            self.open_sum.iter_mut().for_each(|s| *s = 0.0);
            self.open_count = 0;
        }
        Ok(())
    }

    /// Folds in `other`'s completed batches. Batches are kept ordered by
    /// `(stream, index)`, so merging is associative and commutative. The
    /// unfinished batch of `other` is dropped from the batch means but its
    /// samples still count towards `total_count`.
    pub fn merge(&mut self, other: &MatrixAccumulator) -> Result<(), StatsError> {
        if other.dim != self.dim || other.batch_size != self.batch_size {
            return Err(StatsError::Incompatible(format!(
                "dim {} / batch {} vs dim {} / batch {}",
                self.dim, self.batch_size, other.dim, other.batch_size
            )));
        }
        self.batches.extend(other.batches.iter().cloned());
        self.batches.sort_by_key(|b| (b.stream, b.index));
        self.total_count += other.total_count;
        Ok(())
    }

    /// Batch-mean series of element `(i, j)`.
    pub fn element_series(&self, i: usize, j: usize) -> Vec<f64> {
        self.batches.iter().map(|b| b.mean[i * self.dim + j]).collect()
    }

    pub fn batch_means_stderr(&self) -> Result<BatchEstimate, StatsError> {
        let nb = self.batches.len();
        if nb < 2 {
            return Err(StatsError::TooFewBatches { needed: 2, have: nb });
        }
        let n = self.dim;
        let mut mean = SiteMatrix::zeros(n);
        let mut stderr = SiteMatrix::zeros(n);
        for k in 0..n * n {
            // summing in sorted order keeps the result independent of
            // the order in which chains were merged
            let mut xs: Vec<f64> = self.batches.iter().map(|b| b.mean[k]).collect();
            xs.sort_by(f64::total_cmp);
            let m = xs.iter().sum::<f64>() / nb as f64;
            let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (nb - 1) as f64;
            mean.as_mut_slice()[k] = m;
            stderr.as_mut_slice()[k] = (var / nb as f64).sqrt();
        }
        Ok(BatchEstimate {
            mean,
            stderr,
            n_batches: nb,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchEstimate {
    pub mean: SiteMatrix,
    pub stderr: SiteMatrix,
    pub n_batches: usize,
}

impl BatchEstimate {
    /// Half-width of the 95% confidence interval, elementwise.
    pub fn ci95(&self) -> SiteMatrix {
        self.stderr.scaled(Z_95)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LjungBox {
    pub q: f64,
    pub lags: usize,
    pub threshold: f64,
    pub reject: bool,
}

/// `Q = n(n+2) Σ_{k=1..h} r̂_k² / (n-k)`, rejected at the 5% level when
/// `Q > χ²_{0.95}(h)`.
pub fn ljung_box_q(series: &[f64], lags: usize) -> Result<LjungBox, StatsError> {
    let n = series.len();
    if lags == 0 || n <= lags {
        return Err(StatsError::SeriesTooShort { len: n, lags });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0: f64 = dev.iter().map(|d| d * d).sum();
    if !(c0 > 0.0) || c0 < 1e-300 {
        return Err(StatsError::Degenerate);
    }
    let nf = n as f64;
    let mut q = 0.0;
    for k in 1..=lags {
        let ck: f64 = dev[k..].iter().zip(&dev[..n - k]).map(|(a, b)| a * b).sum();
        let r = ck / c0;
        q += r * r / (nf - k as f64);
    }
    q *= nf * (nf + 2.0);
    let threshold = chi2_quantile(0.95, lags)?;
    Ok(LjungBox {
        q,
        lags,
        threshold,
        reject: q > threshold,
    })
}

/// Quantile of the χ² distribution: Wilson–Hilferty start, then Newton
/// steps on the regularised lower incomplete gamma function.
pub fn chi2_quantile(p: f64, dof: usize) -> Result<f64, StatsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::Domain(format!("probability {p}")));
    }
    if dof == 0 {
        return Err(StatsError::Domain("zero degrees of freedom".into()));
    }
    let k = dof as f64;
    let a = 0.5 * k;
    let z = normal_quantile(p);
    let c = 2.0 / (9.0 * k);
    let wilson_hilferty = k * (1.0 - c + z * c.sqrt()).powi(3);
    // leading term of the series P(a, x/2) ≈ (x/2)^a / Γ(a+1); far better
    // than Wilson–Hilferty deep in the lower tail of few degrees of freedom
    let series = 2.0 * ((p.ln() + ln_gamma(a + 1.0)) / a).exp();
    let miss = |x: f64| {
        if x > 0.0 && x.is_finite() {
            (regularized_gamma_p(a, 0.5 * x) - p).abs()
        } else {
            f64::INFINITY
        }
    };
    let mut x = if miss(series) < miss(wilson_hilferty) {
        series
    } else {
        wilson_hilferty
    };
    let log_norm = -a * std::f64::consts::LN_2 - ln_gamma(a);
    // at least five Newton steps, continued until the step is negligible
    for iter in 0..60 {
        let f = regularized_gamma_p(a, 0.5 * x) - p;
        let density = (log_norm + (a - 1.0) * x.ln() - 0.5 * x).exp();
        if !(density > 0.0) {
            break;
        }
        let next = x - f / density;
        let next = if next > 0.0 { next } else { 0.5 * x };
        let step = (next - x).abs();
        x = next;
        if iter >= 4 && step <= 1e-15 * x {
            break;
        }
    }
    Ok(x)
}

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut s = C[0];
    for (i, &c) in C.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// `P(a, x) = γ(a, x) / Γ(a)`: power series below `a + 1`, Lentz continued
/// fraction for the complement above.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefix).exp()
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (log_prefix + h.ln()).exp()
    }
}

/// Standard normal quantile (Acklam's rational approximation, one Halley
/// refinement against `erfc`).
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let lo = 0.02425;
    let x = if p < lo {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - lo {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Complementary error function via the regularised gamma function.
fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 - regularized_gamma_p(0.5, x * x)
    } else {
        1.0 + regularized_gamma_p(0.5, x * x)
    }
}

/// Regular histogram over an axis-aligned box. Samples outside the box are
/// counted but not binned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    bins: Vec<usize>,
    counts: Vec<u64>,
    total: u64,
    outside: u64,
}

/// Normalised histogram: `Σ values · bin_volume = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub centers: Vec<Vec<f64>>,
    pub widths: Vec<f64>,
    /// Row-major over the axes, last axis fastest.
    pub values: Vec<f64>,
    pub bin_volume: f64,
}

impl HistogramGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: Vec<usize>) -> Result<Self, StatsError> {
        if lo.len() != hi.len() || lo.len() != bins.len() || lo.is_empty() {
            return Err(StatsError::Domain("histogram bounds and bin counts must agree".into()));
        }
        for d in 0..lo.len() {
            if !(hi[d] > lo[d]) || !lo[d].is_finite() || !hi[d].is_finite() || bins[d] == 0 {
                return Err(StatsError::Domain(format!("histogram axis {d}")));
            }
        }
        let size = bins.iter().product();
        Ok(Self {
            lo,
            hi,
            bins,
            counts: vec![0; size],
            total: 0,
            outside: 0,
        })
    }

    /// Bounds covering `[min, max]` per axis padded by 20% of the range.
    pub fn auto(min: &[f64], max: &[f64], bins: Vec<usize>) -> Result<Self, StatsError> {
        let mut lo = Vec::with_capacity(min.len());
        let mut hi = Vec::with_capacity(min.len());
        for (&a, &b) in min.iter().zip(max) {
            let pad = if b > a { 0.2 * (b - a) } else { 0.5 * a.abs().max(1.0) };
            lo.push(a - pad);
            hi.push(b + pad);
        }
        Self::new(lo, hi, bins)
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn outside(&self) -> u64 {
        self.outside
    }

    pub fn push(&mut self, r: &[f64]) {
        self.total += 1;
        let mut idx = 0;
        for (d, &x) in r.iter().enumerate().take(self.lo.len()) {
            let t = (x - self.lo[d]) / (self.hi[d] - self.lo[d]);
            if !(0.0..1.0).contains(&t) {
                self.outside += 1;
                return;
            }
            let b = ((t * self.bins[d] as f64) as usize).min(self.bins[d] - 1);
            idx = idx * self.bins[d] + b;
        }
        self.counts[idx] += 1;
    }

    pub fn merge(&mut self, other: &HistogramGrid) -> Result<(), StatsError> {
        if other.lo != self.lo || other.hi != self.hi || other.bins != self.bins {
            return Err(StatsError::Incompatible("histogram grids differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        self.outside += other.outside;
        Ok(())
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.lo.len())
            .map(|d| (self.hi[d] - self.lo[d]) / self.bins[d] as f64)
            .collect()
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        self.widths()
            .iter()
            .enumerate()
            .map(|(d, w)| (0..self.bins[d]).map(|b| self.lo[d] + (b as f64 + 0.5) * w).collect())
            .collect()
    }

    pub fn normalize(&self) -> Result<Density, StatsError> {
        let inside = self.total - self.outside;
        if inside == 0 {
            return Err(StatsError::EmptyHistogram);
        }
        let widths = self.widths();
        let bin_volume: f64 = widths.iter().product();
        let norm = 1.0 / (inside as f64 * bin_volume);
        Ok(Density {
            centers: self.centers(),
            widths,
            values: self.counts.iter().map(|&c| c as f64 * norm).collect(),
            bin_volume,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_stream_batches() {
        let mut acc = MatrixAccumulator::new(2, 10, 0);
        let c = SiteMatrix::from_rows(&[[0.7, 0.1], [0.1, 0.3]]);
        for _ in 0..50 {
            acc.push(&c).unwrap();
        }
        assert!(acc.batches().iter().all(|b| b.mean.iter().zip(c.as_slice()).all(|(x, y)| (x - y).abs() < 1e-15)));
        let est = acc.batch_means_stderr().unwrap();
        assert!(est.mean.max_abs_diff(&c) < 1e-15);
        assert_eq!(est.stderr.max_abs(), 0.0);
    }

    #[test]
    fn count_bookkeeping() {
        let mut acc = MatrixAccumulator::new(1, 4, 0);
        for k in 0..10 {
            acc.push(&SiteMatrix::from_rows(&[[k as f64]])).unwrap();
        }
        assert_eq!(acc.n_batches(), 2);
        assert_eq!(acc.pending(), 2);
        assert_eq!(acc.total_count(), 10);
        assert_eq!(acc.element_series(0, 0), vec![1.5, 5.5]);
        assert!(acc.push(&SiteMatrix::zeros(2)).is_err());
        assert_eq!(
            MatrixAccumulator::new(1, 4, 0).batch_means_stderr(),
            Err(StatsError::TooFewBatches { needed: 2, have: 0 })
        );
    }

    #[test]
    fn halves_merge_to_whole() {
        let data: Vec<f64> = (0..60).map(|k| ((k * 37) % 11) as f64).collect();
        let mut whole = MatrixAccumulator::new(1, 6, 0);
        let mut first = MatrixAccumulator::new(1, 6, 0);
        let mut second = MatrixAccumulator::new(1, 6, 0);
        for (k, &x) in data.iter().enumerate() {
            let m = SiteMatrix::from_rows(&[[x]]);
            whole.push(&m).unwrap();
            if k < 30 {
                first.push(&m).unwrap();
            } else {
                second.push(&m).unwrap();
            }
        }
        // the second half re-indexes from 0; give it a later stream
        let mut second_shifted = MatrixAccumulator::new(1, 6, 1);
        for &x in &data[30..] {
            second_shifted.push(&SiteMatrix::from_rows(&[[x]])).unwrap();
        }
        first.merge(&second_shifted).unwrap();
        assert_eq!(first.element_series(0, 0), whole.element_series(0, 0));
        assert_eq!(first.batch_means_stderr().unwrap(), whole.batch_means_stderr().unwrap());
        assert_eq!(second.n_batches(), 5);
    }

    #[test]
    fn iid_stderr() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut acc = MatrixAccumulator::new(1, 1000, 0);
        for _ in 0..100_000 {
            let x: f64 = StandardNormal.sample(&mut rng);
            acc.push(&SiteMatrix::from_rows(&[[x]])).unwrap();
        }
        let est = acc.batch_means_stderr().unwrap();
        let want = 1.0 / (1e5_f64).sqrt();
        assert!((est.stderr[(0, 0)] / want - 1.0).abs() < 0.2, "{}", est.stderr[(0, 0)]);
    }

    #[test]
    fn ar1_inflates_stderr() {
        let phi: f64 = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut acc = MatrixAccumulator::new(1, 1000, 0);
        let mut x = 0.0;
        let innov = (1.0 - phi * phi).sqrt();
        for _ in 0..100_000 {
            let e: f64 = StandardNormal.sample(&mut rng);
            x = phi * x + innov * e;
            acc.push(&SiteMatrix::from_rows(&[[x]])).unwrap();
        }
        let est = acc.batch_means_stderr().unwrap();
        let iid = 1.0 / (1e5_f64).sqrt();
        let factor = ((1.0 + phi) / (1.0 - phi)).sqrt();
        let ratio = est.stderr[(0, 0)] / iid;
        assert!((ratio / factor - 1.0).abs() < 0.3, "ratio {ratio} vs {factor}");
    }

    #[test]
    fn chi2_reference_values() {
        assert!((chi2_quantile(0.95, 13).unwrap() - 22.362).abs() < 0.01);
        assert!((chi2_quantile(0.95, 1).unwrap() - 3.841).abs() < 0.005);
        assert!(chi2_quantile(1e-12, 3).unwrap() < 1e-6);
        assert!(chi2_quantile(0.0, 3).is_err());
        assert!(chi2_quantile(0.5, 0).is_err());
    }

    #[test]
    fn gamma_helpers() {
        assert!((ln_gamma(5.0) - 24.0_f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        // P(1, x) = 1 - e^{-x}
        for x in [0.1, 1.0, 3.0, 10.0] {
            assert!((regularized_gamma_p(1.0, x) - (1.0 - (-x).exp())).abs() < 1e-14);
        }
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((normal_quantile(0.5)).abs() < 1e-15);
    }

    #[test]
    fn ljung_box_detects_trend_and_errors() {
        let trend: Vec<f64> = (0..40).map(|k| k as f64 + ((k * 7) % 3) as f64).collect();
        let lb = ljung_box_q(&trend, 13).unwrap();
        assert!(lb.reject);
        assert!((lb.threshold - 22.362).abs() < 0.01);
        assert_eq!(ljung_box_q(&[1.0; 20], 5), Err(StatsError::Degenerate));
        assert!(ljung_box_q(&[1.0, 2.0], 5).is_err());
    }

    #[test]
    fn histogram_basics() {
        let mut h = HistogramGrid::new(vec![0.0], vec![1.0], vec![50]).unwrap();
        h.push(&[0.305]);
        h.push(&[2.0]);
        let d = h.normalize().unwrap();
        let nonzero: Vec<usize> = (0..50).filter(|&b| d.values[b] > 0.0).collect();
        assert_eq!(nonzero, vec![15]);
        assert!((d.values.iter().sum::<f64>() * d.bin_volume - 1.0).abs() < 1e-12);
        assert_eq!(h.outside(), 1);
        assert!(HistogramGrid::new(vec![0.0], vec![1.0], vec![4]).unwrap().normalize().is_err());
    }

    #[test]
    fn histogram_uniform_is_flat_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut h = HistogramGrid::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![5, 4]).unwrap();
        let n = 200_000;
        for _ in 0..n {
            let x = rand::Rng::random_range(&mut rng, -1.0..1.0);
            let y = rand::Rng::random_range(&mut rng, 0.0..2.0);
            h.push(&[x, y]);
        }
        let d = h.normalize().unwrap();
        let expected = 1.0 / 4.0;
        let per_bin = n as f64 / 20.0;
        for v in &d.values {
            // 5σ Poisson band
            assert!((v - expected).abs() < 5.0 * expected / per_bin.sqrt());
        }
        assert!((d.values.iter().sum::<f64>() * d.bin_volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auto_bounds_pad_range() {
        let h = HistogramGrid::auto(&[1.0], &[3.0], vec![10]).unwrap();
        assert_eq!(h.lo(), &[0.6]);
        assert_eq!(h.hi(), &[3.4]);
    }
}
