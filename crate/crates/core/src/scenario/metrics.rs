//! Post-run statistics: sampled goodput and delay, moving averages,
//! histograms with a kernel density estimate, rank correlation.

use serde::Serialize;

use super::config::MetricsConfig;
use super::flow::DeliveryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    /// Fraction of values in the bin; sums to 1.
    pub mass: f64,
    /// `mass / width`; integrates to 1.
    pub density: f64,
    /// Kernel density estimate at the bin center.
    pub kde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries {
    pub sample_period_ns: u64,
    pub rate_bps: Vec<f64>,
    pub rate_smoothed_bps: Vec<f64>,
    /// Mean delay of the packets delivered in each sample; NaN if none.
    pub delay_s: Vec<f64>,
    pub delay_smoothed_s: Vec<f64>,
    pub packet_delays_s: Vec<f64>,
    pub rate_hist: Vec<HistBin>,
    pub delay_hist: Vec<HistBin>,
}

impl MetricsSeries {
    pub fn delay_set_empty(&self) -> bool {
        self.packet_delays_s.is_empty()
    }

    pub fn sample_time_s(&self, k: usize) -> f64 {
        (k as u64 * self.sample_period_ns) as f64 * 1e-9
    }
}

pub fn collect_metrics(ledger: &[DeliveryRecord], config: &MetricsConfig, duration_ns: u64) -> MetricsSeries {
    let p = config.sample_period_ns;
    let n = (duration_ns / p) as usize;
    let mut bits = vec![0u64; n];
    let mut delay_sum = vec![0f64; n];
    let mut delay_count = vec![0u64; n];
    for r in ledger {
        if n == 0 {
            break;
        }
        // A delivery at exactly the end of the run lands in the last sample.
        let k = ((r.delivered_ns / p) as usize).min(n - 1);
        bits[k] += r.bytes * 8;
        delay_sum[k] += r.delay_ns() as f64 * 1e-9;
        delay_count[k] += 1;
    }
    let period_s = p as f64 * 1e-9;
    let rate_bps: Vec<f64> = bits.iter().map(|&b| b as f64 / period_s).collect();
    let delay_s: Vec<f64> = delay_sum
        .iter()
        .zip(&delay_count)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    let m = config.smoothing_samples();
    let rate_smoothed_bps = moving_average(&rate_bps, m);
    let delay_smoothed_s = moving_average(&delay_s, m);
    let packet_delays_s: Vec<f64> = ledger.iter().map(|r| r.delay_ns() as f64 * 1e-9).collect();
    MetricsSeries {
        sample_period_ns: p,
        rate_hist: histogram(&rate_smoothed_bps, config.histogram_bins),
        delay_hist: histogram(&packet_delays_s, config.histogram_bins),
        rate_bps,
        rate_smoothed_bps,
        delay_s,
        delay_smoothed_s,
        packet_delays_s,
    }
}

/// Centered moving average over `m` samples: sample `k` averages
/// `k - m/2 ..= k + (m - 1) - m/2`, truncated at the ends. NaN entries are
/// skipped; all-NaN windows give NaN.
pub fn moving_average(series: &[f64], m: usize) -> Vec<f64> {
    let m = m.max(1);
    let before = m / 2;
    let after = m - 1 - before;
    (0..series.len())
        .map(|k| {
            let lo = k.saturating_sub(before);
            let hi = (k + after).min(series.len() - 1);
            let (sum, count) = series[lo..=hi]
                .iter()
                .filter(|v| !v.is_nan())
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if count == 0 {
                f64::NAN
            } else {
                sum / count as f64
            }
        })
        .collect()
}

fn finite(values: &[f64]) -> Vec<f64> {
    values.iter().copied().filter(|v| v.is_finite()).collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mu = mean(values);
    (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Linear-interpolated quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = pos.ceil() as usize;
    sorted[i] + (sorted[j] - sorted[i]) * (pos - i as f64)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = finite(values);
    v.sort_by(f64::total_cmp);
    v
}

/// Silverman's rule of thumb. Degenerate samples (one value, or all
/// equal) fall back to 1% of the magnitude, or 1 for zeros.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let v = sorted(values);
    let n = v.len();
    let sigma = std_dev(&v);
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    let spread = match (sigma > 0.0, iqr > 0.0) {
        (true, true) => sigma.min(iqr / 1.34),
        (true, false) => sigma,
        _ => 0.0,
    };
    if spread > 0.0 {
        0.9 * spread * (n as f64).powf(-0.2)
    } else {
        let scale = v.first().map_or(0.0, |x| x.abs());
        if scale > 0.0 {
            0.01 * scale
        } else {
            1.0
        }
    }
}

/// Gaussian kernel density estimate at `x`.
pub fn kde_at(values: &[f64], h: f64, x: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * values.len() as f64);
    norm * values
        .iter()
        .map(|v| {
            let z = (x - v) / h;
            (-0.5 * z * z).exp()
        })
        .sum::<f64>()
}

/// The estimate on `points` evenly spaced points over
/// `[min - 5h, max + 5h]`.
pub fn kde_grid(values: &[f64], points: usize) -> Vec<(f64, f64)> {
    let v = finite(values);
    if v.is_empty() || points < 2 {
        return Vec::new();
    }
    let h = silverman_bandwidth(&v);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min) - 5.0 * h;
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 5.0 * h;
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let x = lo + step * i as f64;
            (x, kde_at(&v, h, x))
        })
        .collect()
}

pub fn trapezoid(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Location of the density estimate's maximum. Candidates are sample
/// quantiles, so a long tail cannot spread them thinner than the
/// bandwidth where the data is dense; the best one is then refined
/// within one bandwidth.
pub fn kde_mode(values: &[f64]) -> f64 {
    const CANDIDATES: usize = 2048;
    const REFINE_STEPS: usize = 100;
    let v = sorted(&finite(values));
    if v.is_empty() {
        return f64::NAN;
    }
    let h = silverman_bandwidth(&v);
    let best = |xs: &mut dyn Iterator<Item = f64>| {
        xs.map(|x| (x, kde_at(&v, h, x)))
            .fold((f64::NAN, f64::NEG_INFINITY), |b, (x, y)| if y > b.1 { (x, y) } else { b })
    };
    let coarse = best(&mut (0..=CANDIDATES).map(|i| quantile_sorted(&v, i as f64 / CANDIDATES as f64)));
    let step = 2.0 * h / REFINE_STEPS as f64;
    let fine = best(&mut (0..=REFINE_STEPS).map(|i| coarse.0 - h + step * i as f64));
    if fine.1 > coarse.1 {
        fine.0
    } else {
        coarse.0
    }
}

/// Equal-width histogram of the finite values. A sample with no spread
/// gets a single bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistBin> {
    let v = finite(values);
    if v.is_empty() {
        return Vec::new();
    }
    let h = silverman_bandwidth(&v);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi, bins) = if hi > lo {
        (lo, hi, bins.max(1))
    } else {
        (lo - h / 2.0, lo + h / 2.0, 1)
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for x in &v {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = v.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let b_lo = lo + width * k as f64;
            let b_hi = if k + 1 == bins { hi } else { lo + width * (k + 1) as f64 };
            let mass = c as f64 / n;
            HistBin {
                lo: b_lo,
                hi: b_hi,
                mass,
                density: mass / (b_hi - b_lo),
                kde: kde_at(&v, h, (b_lo + b_hi) / 2.0),
            }
        })
        .collect()
}

/// 1-based ranks with ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Spearman rank correlation over the pairs where both values are finite.
/// NaN when fewer than two pairs remain or either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    if xs.len() < 2 {
        return f64::NAN;
    }
    pearson(&ranks(&xs), &ranks(&ys))
}

/// Link geometry between the first flow's endpoints during one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelSample {
    pub los: bool,
    pub distance_m: f64,
    pub walls: u32,
    pub snr_db: f64,
    pub phy_rate_bps: Option<u64>,
}

pub const TROUGH_FRACTION: f64 = 0.5;
pub const DEEP_NLOS_FRACTION: f64 = 0.05;
pub const DEEP_NLOS_MIN_DISTANCE_M: f64 = 100.0;
pub const DEEP_NLOS_MIN_WALLS: u32 = 2;
pub const RATE_DELAY_CORRELATION_MAX: f64 = -0.3;

/// The qualitative checks of a patrol run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phenomenology {
    pub los_samples: usize,
    pub los_mean_rate_bps: f64,
    /// Contiguous runs of smoothed rate below half the LOS mean that
    /// include at least one NLOS sample.
    pub nlos_troughs: usize,
    pub deep_nlos_samples: usize,
    pub deep_nlos_mean_rate_bps: f64,
    pub rate_delay_spearman: f64,
    pub delay_mode_s: f64,
    pub delay_mean_s: f64,
    pub delay_p95_s: f64,
    pub troughs_ok: bool,
    pub deep_nlos_ok: bool,
    pub correlation_ok: bool,
    pub delay_shape_ok: bool,
}

impl Phenomenology {
    pub fn all_ok(&self) -> bool {
        self.troughs_ok && self.deep_nlos_ok && self.correlation_ok && self.delay_shape_ok
    }
}

pub fn assess(series: &MetricsSeries, channel: &[ChannelSample]) -> Phenomenology {
    let n = series.rate_bps.len().min(channel.len());
    let los_rates: Vec<f64> = (0..n).filter(|&k| channel[k].los).map(|k| series.rate_bps[k]).collect();
    let los_mean = if los_rates.is_empty() { f64::NAN } else { mean(&los_rates) };

    let threshold = TROUGH_FRACTION * los_mean;
    let mut troughs = 0;
    let mut k = 0;
    while k < n {
        if series.rate_smoothed_bps[k] < threshold {
            let start = k;
            while k < n && series.rate_smoothed_bps[k] < threshold {
                k += 1;
            }
            if channel[start..k].iter().any(|c| !c.los) {
                troughs += 1;
            }
        } else {
            k += 1;
        }
    }

    let deep: Vec<f64> = (0..n)
        .filter(|&k| {
            let c = &channel[k];
            !c.los && c.distance_m > DEEP_NLOS_MIN_DISTANCE_M && c.walls >= DEEP_NLOS_MIN_WALLS
        })
        .map(|k| series.rate_bps[k])
        .collect();
    let deep_mean = if deep.is_empty() { f64::NAN } else { mean(&deep) };

    let rho = spearman(&series.rate_bps, &series.delay_smoothed_s);
    let delays = sorted(&series.packet_delays_s);
    let (mode, mu, p95) = if delays.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (kde_mode(&delays), mean(&delays), quantile_sorted(&delays, 0.95))
    };
    Phenomenology {
        los_samples: los_rates.len(),
        los_mean_rate_bps: los_mean,
        nlos_troughs: troughs,
        deep_nlos_samples: deep.len(),
        deep_nlos_mean_rate_bps: deep_mean,
        rate_delay_spearman: rho,
        delay_mode_s: mode,
        delay_mean_s: mu,
        delay_p95_s: p95,
        troughs_ok: troughs >= 2,
        deep_nlos_ok: deep_mean < DEEP_NLOS_FRACTION * los_mean,
        correlation_ok: rho < RATE_DELAY_CORRELATION_MAX,
        delay_shape_ok: mode < mu && mu < p95,
    }
}
