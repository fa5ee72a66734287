//! α, β and g²(τ) estimators on time-tag streams.
//!
//! Both channels are binarized on a common grid of width `T`. A bin of the
//! second channel is paired with the first-channel bin `lag` earlier.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::timetags::{seconds_to_ps, TimeTagStream, PS_PER_S};

pub const DEFAULT_SEGMENTS: usize = 6;
pub const DEFAULT_WINDOW: f64 = 1e-9;
pub const VERDICT_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Estimate { value, stderr }
    }

    /// Deviation from `reference` in units of the standard error.
    pub fn sigma_from(&self, reference: f64) -> f64 {
        significance(self.value - reference, self.stderr)
    }
}

/// Difference of two independent estimates with combined error.
pub fn difference(a: &Estimate, b: &Estimate) -> Estimate {
    Estimate::new(a.value - b.value, a.stderr.hypot(b.stderr))
}

fn significance(diff: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        diff / stderr
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Binarized counts over a range of bin pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinCounts {
    pub n_bins: u64,
    pub clicks_a: u64,
    pub clicks_b: u64,
    pub coincidences: u64,
    pub empty_both: u64,
}

impl BinCounts {
    /// `P_c = 1 − P₀A − P₀B + P₀₀` in integer form.
    pub fn identity_holds(&self) -> bool {
        let empty_a = self.n_bins - self.clicks_a;
        let empty_b = self.n_bins - self.clicks_b;
        self.coincidences as i128
            == self.n_bins as i128 - empty_a as i128 - empty_b as i128 + self.empty_both as i128
    }

    pub fn alpha(&self) -> Option<f64> {
        if self.clicks_a == 0 || self.clicks_b == 0 {
            return None;
        }
        let n = self.n_bins as f64;
        Some(self.coincidences as f64 * n / (self.clicks_a as f64 * self.clicks_b as f64))
    }

    pub fn beta(&self) -> Option<f64> {
        let empty_a = self.n_bins - self.clicks_a;
        let empty_b = self.n_bins - self.clicks_b;
        if empty_a == 0 || empty_b == 0 {
            return None;
        }
        let n = self.n_bins as f64;
        Some(self.empty_both as f64 * n / (empty_a as f64 * empty_b as f64))
    }

    fn add(&mut self, o: &BinCounts) {
        self.n_bins += o.n_bins;
        self.clicks_a += o.clicks_a;
        self.clicks_b += o.clicks_b;
        self.coincidences += o.coincidences;
        self.empty_both += o.empty_both;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinningOptions {
    pub window: f64,
    pub lag: f64,
    pub n_segments: usize,
}

impl Default for BinningOptions {
    fn default() -> Self {
        BinningOptions {
            window: DEFAULT_WINDOW,
            lag: 0.0,
            n_segments: DEFAULT_SEGMENTS,
        }
    }
}

/// Sorted, deduplicated occupied bins in `[lo, hi)` after shifting by `shift_ps`.
fn occupied_bins(times: &[u64], shift_ps: i128, width: i128, lo: i128, hi: i128) -> Vec<i128> {
    let mut out: Vec<i128> = Vec::with_capacity(times.len());
    for &t in times {
        let b = (t as i128 - shift_ps).div_euclid(width);
        if b >= lo && b < hi && out.last() != Some(&b) {
            out.push(b);
        }
    }
    out
}

fn intersection_count(a: &[i128], b: &[i128]) -> u64 {
    let (mut i, mut j, mut n) = (0, 0, 0u64);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn union_count(a: &[i128], b: &[i128]) -> u64 {
    let (mut i, mut j, mut n) = (0, 0, 0u64);
    while i < a.len() || j < b.len() {
        n += 1;
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            j += 1;
        } else {
            i += 1;
            j += 1;
        }
    }
    n
}

fn check_streams(a: &TimeTagStream, b: &TimeTagStream) -> Result<u64> {
    let (da, db) = (a.duration_ps(), b.duration_ps());
    if da != db {
        return Err(Error::domain(format!(
            "streams differ in duration ({da} ps vs {db} ps)"
        )));
    }
    Ok(da)
}

/// Binarized counts for each of `n_segments` contiguous blocks of bin pairs.
pub fn segment_counts(
    a: &TimeTagStream,
    b: &TimeTagStream,
    opts: &BinningOptions,
) -> Result<Vec<BinCounts>> {
    if !(opts.window > 0.0) {
        return Err(Error::domain("window must be > 0"));
    }
    if opts.n_segments == 0 {
        return Err(Error::domain("n_segments must be >= 1"));
    }
    let duration = check_streams(a, b)? as i128;
    let width = seconds_to_ps(opts.window) as i128;
    if width == 0 {
        return Err(Error::domain("window is shorter than 1 ps"));
    }
    let lag = (opts.lag * PS_PER_S).round() as i128;
    // Pair i covers [iT, (i+1)T) on A and the same interval shifted by lag on B.
    let lo = (0i128.max(-lag) + width - 1).div_euclid(width);
    let hi = duration.min(duration - lag).div_euclid(width);
    let total = hi - lo;
    if total < opts.n_segments as i128 {
        return Err(Error::domain(format!(
            "{total} bin pairs cannot form {} segments",
            opts.n_segments
        )));
    }
    let bins_a = occupied_bins(&a.all_timestamps(), 0, width, lo, hi);
    let bins_b = occupied_bins(&b.all_timestamps(), lag, width, lo, hi);
    let k = opts.n_segments as i128;
    let mut out = Vec::with_capacity(opts.n_segments);
    for s in 0..k {
        let (start, end) = (lo + total * s / k, lo + total * (s + 1) / k);
        let slice = |v: &[i128]| -> (usize, usize) {
            (
                v.partition_point(|&x| x < start),
                v.partition_point(|&x| x < end),
            )
        };
        let (a0, a1) = slice(&bins_a);
        let (b0, b1) = slice(&bins_b);
        let (sa, sb) = (&bins_a[a0..a1], &bins_b[b0..b1]);
        let n_bins = (end - start) as u64;
        out.push(BinCounts {
            n_bins,
            clicks_a: sa.len() as u64,
            clicks_b: sb.len() as u64,
            coincidences: intersection_count(sa, sb),
            empty_both: n_bins - union_count(sa, sb),
        });
    }
    Ok(out)
}

pub fn total_counts(segments: &[BinCounts]) -> BinCounts {
    let mut t = BinCounts::default();
    for s in segments {
        t.add(s);
    }
    t
}

/// Pooled value with the standard error of the per-segment values.
fn pooled(
    segments: &[BinCounts],
    f: impl Fn(&BinCounts) -> Option<f64>,
    what: &str,
) -> Result<Estimate> {
    let value = f(&total_counts(segments))
        .ok_or_else(|| Error::undefined(format!("{what} has no events to normalize by")))?;
    let per: Vec<f64> = segments.iter().filter_map(&f).collect();
    if per.len() < 2 {
        return Err(Error::undefined(format!(
            "{what} is defined in fewer than two segments"
        )));
    }
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    let var = per.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (per.len() - 1) as f64;
    Ok(Estimate::new(value, (var / per.len() as f64).sqrt()))
}

pub fn alpha_from_counts(segments: &[BinCounts]) -> Result<Estimate> {
    pooled(segments, BinCounts::alpha, "alpha")
}

pub fn beta_from_counts(segments: &[BinCounts]) -> Result<Estimate> {
    pooled(segments, BinCounts::beta, "beta")
}

pub fn estimate_alpha(
    a: &TimeTagStream,
    b: &TimeTagStream,
    window: f64,
    lag: f64,
) -> Result<Estimate> {
    let opts = BinningOptions {
        window,
        lag,
        ..Default::default()
    };
    alpha_from_counts(&segment_counts(a, b, &opts)?)
}

pub fn estimate_beta(
    a: &TimeTagStream,
    b: &TimeTagStream,
    window: f64,
    lag: f64,
) -> Result<Estimate> {
    let opts = BinningOptions {
        window,
        lag,
        ..Default::default()
    };
    beta_from_counts(&segment_counts(a, b, &opts)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct G2Histogram {
    pub bin_width: f64,
    /// Bin centers in seconds, symmetric around zero.
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub counts: Vec<u64>,
}

impl G2Histogram {
    pub fn zero_index(&self) -> usize {
        self.lags.len() / 2
    }

    pub fn at_zero(&self) -> Estimate {
        let i = self.zero_index();
        Estimate::new(self.values[i], self.stderrs[i])
    }

    /// Mean of the two outermost bins.
    pub fn at_max_lag(&self) -> Estimate {
        let last = self.values.len() - 1;
        Estimate::new(
            0.5 * (self.values[0] + self.values[last]),
            0.5 * self.stderrs[0].hypot(self.stderrs[last]),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lag_ps,g2,stderr\n");
        for i in 0..self.lags.len() {
            let _ = writeln!(
                s,
                "{},{},{}",
                (self.lags[i] * PS_PER_S).round() as i64,
                self.values[i],
                self.stderrs[i]
            );
        }
        s
    }
}

/// Cross-correlation of A and B tags in bins centered at `k·bin_width`,
/// normalized by the expectation for uncorrelated streams.
pub fn g2_histogram(
    a: &TimeTagStream,
    b: &TimeTagStream,
    bin_width: f64,
    max_lag: f64,
) -> Result<G2Histogram> {
    if !(bin_width > 0.0) {
        return Err(Error::domain("bin width must be > 0"));
    }
    if !(max_lag >= bin_width) {
        return Err(Error::domain("max lag must be >= bin width"));
    }
    let duration = check_streams(a, b)?;
    let (ta, tb) = (a.all_timestamps(), b.all_timestamps());
    if ta.is_empty() || tb.is_empty() || duration == 0 {
        return Err(Error::undefined("g2 histogram of an empty stream"));
    }
    let w = seconds_to_ps(bin_width).max(1) as i128;
    let half = (max_lag / bin_width + 1e-9).floor() as i128;
    let n_hist = (2 * half + 1) as usize;
    let reach = half * w + w / 2;
    let mut counts = vec![0u64; n_hist];
    let mut start = 0usize;
    for &t in &ta {
        let t = t as i128;
        while start < tb.len() && (tb[start] as i128) < t - reach {
            start += 1;
        }
        for &u in &tb[start..] {
            let d = u as i128 - t;
            if d > reach {
                break;
            }
            let k = (d + w / 2).div_euclid(w);
            if k.abs() <= half {
                counts[(k + half) as usize] += 1;
            }
        }
    }
    let d = duration as f64;
    let (na, nb) = (ta.len() as f64, tb.len() as f64);
    let mut lags = Vec::with_capacity(n_hist);
    let mut values = Vec::with_capacity(n_hist);
    let mut stderrs = Vec::with_capacity(n_hist);
    for (i, &c) in counts.iter().enumerate() {
        let lag_ps = (i as i128 - half) * w;
        let overlap = (d - (lag_ps as f64).abs()).max(w as f64);
        let expected = na * nb / (d * d) * w as f64 * overlap;
        lags.push(lag_ps as f64 / PS_PER_S);
        values.push(c as f64 / expected);
        stderrs.push((c.max(1) as f64).sqrt() / expected);
    }
    Ok(G2Histogram {
        bin_width: w as f64 / PS_PER_S,
        lags,
        values,
        stderrs,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub flag: bool,
    pub significance: f64,
}

impl Verdict {
    fn from_sigma(significance: f64) -> Self {
        Verdict {
            flag: significance > VERDICT_SIGMA,
            significance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdicts {
    pub super_poissonian: Verdict,
    pub sub_poissonian: Verdict,
    pub bunched: Option<Verdict>,
}

pub fn verdicts(alpha: &Estimate, hist: Option<&G2Histogram>) -> Verdicts {
    Verdicts {
        super_poissonian: Verdict::from_sigma(alpha.sigma_from(1.0)),
        sub_poissonian: Verdict::from_sigma(-alpha.sigma_from(1.0)),
        bunched: hist.map(|h| {
            let d = difference(&h.at_zero(), &h.at_max_lag());
            Verdict::from_sigma(significance(d.value, d.stderr))
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub alpha: Estimate,
    pub beta: Estimate,
    pub g2_hist: Option<G2Histogram>,
    pub window: f64,
    pub lag: f64,
    pub n_segments: usize,
    pub counts: BinCounts,
    pub identity_exact: bool,
    pub verdicts: Verdicts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub binning: BinningOptions,
    /// Histogram bin width and max lag in seconds; `None` skips the histogram.
    pub histogram: Option<(f64, f64)>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            binning: BinningOptions::default(),
            histogram: None,
        }
    }
}

pub fn analyze(
    a: &TimeTagStream,
    b: &TimeTagStream,
    opts: &AnalysisOptions,
) -> Result<CorrelationReport> {
    let segments = segment_counts(a, b, &opts.binning)?;
    let alpha = alpha_from_counts(&segments)?;
    let beta = beta_from_counts(&segments)?;
    let g2_hist = match opts.histogram {
        Some((w, max)) => Some(g2_histogram(a, b, w, max)?),
        None => None,
    };
    let verdicts = verdicts(&alpha, g2_hist.as_ref());
    Ok(CorrelationReport {
        alpha,
        beta,
        verdicts,
        g2_hist,
        window: opts.binning.window,
        lag: opts.binning.lag,
        n_segments: opts.binning.n_segments,
        counts: total_counts(&segments),
        identity_exact: segments.iter().all(BinCounts::identity_holds),
    })
}

impl CorrelationReport {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let v = &self.verdicts;
        let _ = writeln!(s, "alpha = {}", self.alpha.value);
        let _ = writeln!(s, "alpha_stderr = {}", self.alpha.stderr);
        let _ = writeln!(s, "beta = {}", self.beta.value);
        let _ = writeln!(s, "beta_stderr = {}", self.beta.stderr);
        let _ = writeln!(s, "window_ps = {}", seconds_to_ps(self.window));
        let _ = writeln!(s, "lag_ps = {}", (self.lag * PS_PER_S).round() as i64);
        let _ = writeln!(s, "n_segments = {}", self.n_segments);
        let _ = writeln!(s, "bins = {}", self.counts.n_bins);
        let _ = writeln!(s, "clicks_a = {}", self.counts.clicks_a);
        let _ = writeln!(s, "clicks_b = {}", self.counts.clicks_b);
        let _ = writeln!(s, "coincidences = {}", self.counts.coincidences);
        let _ = writeln!(s, "empty_both = {}", self.counts.empty_both);
        let _ = writeln!(s, "identity_exact = {}", self.identity_exact);
        let _ = writeln!(s, "super_poissonian = {}", v.super_poissonian.flag);
        let _ = writeln!(
            s,
            "super_poissonian_sigma = {}",
            v.super_poissonian.significance
        );
        let _ = writeln!(s, "sub_poissonian = {}", v.sub_poissonian.flag);
        let _ = writeln!(
            s,
            "sub_poissonian_sigma = {}",
            v.sub_poissonian.significance
        );
        if let Some(b) = v.bunched {
            let _ = writeln!(s, "bunched = {}", b.flag);
            let _ = writeln!(s, "bunched_sigma = {}", b.significance);
        }
        s
    }
}
