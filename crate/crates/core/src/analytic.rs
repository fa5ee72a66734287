//! Closed-form predictions for an ensemble of independent emitters observed
//! through one or more detection modes.
//!
//! For `N` emitters with equal weights,
//!
//! ```text
//! g²(τ) = ḡ²(τ)/N + (N-1)/N · [C·|ḡ¹(τ)|²·χ(τ) + 1]
//! ```
//!
//! where `ḡ¹`, `ḡ²` are the single-emitter correlations, `χ` the motional
//! dephasing of an emitter pair and `C` the indistinguishability of the
//! detected photons. Unequal weights enter through the effective emitter
//! number `(Σw)²/Σw²`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{chi_unchecked, g1_modulus_unchecked, g2_unchecked, EmitterModel, MotionModel};

/// Relative tolerance on the per-emitter normalization `Σ_κ|u_κi|² = η·w_i`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Coupling amplitudes `u_κi` of every emitter `i` into every detection
/// mode `κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrix {
    n_emitters: usize,
    n_modes: usize,
    /// Emitter-major: `amps[i * n_modes + κ]`.
    amps: Vec<Complex64>,
    eta: f64,
    weights: Vec<f64>,
}

impl ModeMatrix {
    /// `amps` is emitter-major (`amps[i * n_modes + κ]`).
    pub fn new(n_modes: usize, amps: Vec<Complex64>, eta: f64, weights: Vec<f64>) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::domain("mode matrix needs at least one mode"));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::domain(format!("eta must lie in (0, 1], got {eta}")));
        }
        let n_emitters = weights.len();
        if n_emitters == 0 {
            return Err(Error::domain("mode matrix needs at least one emitter"));
        }
        if amps.len() != n_emitters * n_modes {
            return Err(Error::domain(format!(
                "expected {} amplitudes for {} emitters x {} modes, got {}",
                n_emitters * n_modes,
                n_emitters,
                n_modes,
                amps.len()
            )));
        }
        let m = ModeMatrix {
            n_emitters,
            n_modes,
            amps,
            eta,
            weights,
        };
        for i in 0..n_emitters {
            let target = eta * m.weights[i];
            let got = m.emitter_efficiency(i);
            if !(m.weights[i] > 0.0) || (got - target).abs() > NORMALIZATION_TOL * target {
                return Err(Error::domain(format!(
                    "emitter {i}: sum of |u|^2 is {got}, expected eta*w = {target}"
                )));
            }
        }
        Ok(m)
    }

    /// One mode, every emitter coupled with a real amplitude `sqrt(η·w_i)`.
    pub fn single_mode(weights: &[f64], eta: f64) -> Result<Self> {
        let amps = weights
            .iter()
            .map(|w| Complex64::new((eta * w).sqrt(), 0.0))
            .collect();
        Self::new(1, amps, eta, weights.to_vec())
    }

    pub fn n_emitters(&self) -> usize {
        self.n_emitters
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn amplitude(&self, mode: usize, emitter: usize) -> Complex64 {
        self.amps[emitter * self.n_modes + mode]
    }

    /// Amplitudes of one emitter into all modes.
    pub fn emitter_row(&self, emitter: usize) -> &[Complex64] {
        &self.amps[emitter * self.n_modes..(emitter + 1) * self.n_modes]
    }

    /// `Σ_κ |u_κi|²`.
    pub fn emitter_efficiency(&self, emitter: usize) -> f64 {
        self.emitter_row(emitter).iter().map(|u| u.norm_sqr()).sum()
    }
}

/// Indistinguishability factor of the detected photons.
///
/// Computed as `Σ_{i≠j} |Σ_κ u*_κi u_κj|² / Σ_{i≠j} n_i n_j` with
/// `n_i = Σ_κ |u_κi|²`; for equal weights the denominator is `η²N(N-1)`.
/// The result lies in `[0, 1]`.
pub fn compute_c(modes: &ModeMatrix) -> Result<f64> {
    let n = modes.n_emitters;
    let m = modes.n_modes;
    if n < 2 {
        return Err(Error::domain("C is undefined for fewer than two emitters"));
    }
    let eff: Vec<f64> = (0..n).map(|i| modes.emitter_efficiency(i)).collect();
    let diag: f64 = eff.iter().map(|e| e * e).sum();

    // Σ_{i,j} |(U†U)_ij|² = Σ_{κ,λ} |(UU†)_κλ|²; pick the cheaper side.
    let total = if m <= n {
        let mut gram = vec![Complex64::new(0.0, 0.0); m * m];
        for i in 0..n {
            let row = modes.emitter_row(i);
            for k in 0..m {
                for l in 0..m {
                    gram[k * m + l] += row[k] * row[l].conj();
                }
            }
        }
        gram.iter().map(|g| g.norm_sqr()).sum::<f64>()
    } else {
        let mut acc = 0.0;
        for i in 0..n {
            let ri = modes.emitter_row(i);
            for j in 0..n {
                let rj = modes.emitter_row(j);
                let g: Complex64 = ri.iter().zip(rj).map(|(a, b)| a.conj() * b).sum();
                acc += g.norm_sqr();
            }
        }
        acc
    };

    let sum_eff: f64 = eff.iter().sum();
    let pair_norm = sum_eff * sum_eff - diag;
    if pair_norm <= 0.0 {
        return Err(Error::domain(
            "C is undefined: no emitter pair couples to the modes",
        ));
    }
    let c = (total - diag) / pair_norm;
    // Roundoff can push an exact 0 or 1 marginally outside.
    Ok(c.clamp(0.0, 1.0))
}

/// `(Σw)² / Σw²`.
pub fn effective_n(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::domain("effective_n of an empty weight list"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::domain(format!("weights must be > 0, got {w}")));
    }
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    Ok(s * s / s2)
}

fn check_c(c_factor: f64) -> Result<()> {
    if (0.0..=1.0).contains(&c_factor) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "C must lie in [0, 1], got {c_factor}"
        )))
    }
}

/// Normalized `g²(τ)` of `n` equally weighted emitters. Symmetric in `τ`.
pub fn predict_g2(
    tau: f64,
    n: u64,
    em: &EmitterModel,
    mm: &MotionModel,
    c_factor: f64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("predict_g2 needs at least one emitter"));
    }
    predict_g2_effective(tau, n as f64, em, mm, c_factor)
}

/// As [`predict_g2`] for a weighted ensemble of effective size `n_eff`
/// (see [`effective_n`]).
pub fn predict_g2_effective(
    tau: f64,
    n_eff: f64,
    em: &EmitterModel,
    mm: &MotionModel,
    c_factor: f64,
) -> Result<f64> {
    if !(n_eff >= 1.0) {
        return Err(Error::domain(format!(
            "effective emitter number must be >= 1, got {n_eff}"
        )));
    }
    check_c(c_factor)?;
    let tau = tau.abs();
    let single = g2_unchecked(tau, em.gamma);
    if n_eff == 1.0 {
        return Ok(single);
    }
    let g1 = g1_modulus_unchecked(tau, em);
    let chi = chi_unchecked(tau, mm);
    Ok(single / n_eff + (n_eff - 1.0) / n_eff * (c_factor * g1 * g1 * chi + 1.0))
}

/// A sampled `g²(τ)` curve.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Prediction {
    pub tau_grid: Vec<f64>,
    pub g2_values: Vec<f64>,
    pub g2_zero: f64,
    pub c_factor: f64,
}

impl G2Prediction {
    /// Builds a prediction from tabulated values; `tau_grid` must be strictly
    /// increasing and contain a neighbourhood of zero.
    pub fn from_values(tau_grid: Vec<f64>, g2_values: Vec<f64>, c_factor: f64) -> Result<Self> {
        if tau_grid.len() != g2_values.len() || tau_grid.len() < 2 {
            return Err(Error::domain(
                "tau grid and g2 values must have equal length >= 2",
            ));
        }
        if tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("tau grid must be strictly increasing"));
        }
        if g2_values.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::domain("g2 values must be >= 0"));
        }
        let mut pred = G2Prediction {
            tau_grid,
            g2_values,
            g2_zero: 0.0,
            c_factor,
        };
        pred.g2_zero = pred
            .interpolate(0.0)
            .ok_or_else(|| Error::domain("tau grid must bracket zero"))?;
        Ok(pred)
    }

    /// Evaluates the ensemble model on `tau_grid`.
    pub fn from_model(
        tau_grid: Vec<f64>,
        n_eff: f64,
        em: &EmitterModel,
        mm: &MotionModel,
        c_factor: f64,
    ) -> Result<Self> {
        let values = tau_grid
            .iter()
            .map(|&t| predict_g2_effective(t, n_eff, em, mm, c_factor))
            .collect::<Result<Vec<_>>>()?;
        Self::from_values(tau_grid, values, c_factor)
    }

    /// `2·steps + 1` points spanning `[-half_span, half_span]`.
    pub fn symmetric_grid(half_span: f64, steps: usize) -> Vec<f64> {
        let steps = steps.max(1) as i64;
        (-steps..=steps)
            .map(|k| half_span * k as f64 / steps as f64)
            .collect()
    }

    /// Linear interpolation; `None` outside the grid.
    pub fn interpolate(&self, tau: f64) -> Option<f64> {
        let grid = &self.tau_grid;
        if tau < grid[0] || tau > grid[grid.len() - 1] {
            return None;
        }
        let hi = grid.partition_point(|&t| t < tau).max(1);
        let (t0, t1) = (grid[hi - 1], grid[hi]);
        let (g0, g1) = (self.g2_values[hi - 1], self.g2_values[hi]);
        Some(g0 + (g1 - g0) * (tau - t0) / (t1 - t0))
    }
}

/// Photon statistics model for [`click_stats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightKind {
    Poisson,
    ThermalSingleMode,
}

/// Per-bin click statistics of light split on a balanced beamsplitter onto
/// two click detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickStats {
    pub alpha: f64,
    pub beta: f64,
    /// Click probability on one detector.
    pub p_single: f64,
    /// Probability of a click on both detectors.
    pub p_coincidence: f64,
}

/// Exact click statistics for `n_bar` photons per bin (before the splitter).
pub fn click_stats(kind: LightKind, n_bar: f64) -> Result<ClickStats> {
    if !(n_bar >= 0.0 && n_bar.is_finite()) {
        return Err(Error::domain(format!(
            "mean photon number must be >= 0, got {n_bar}"
        )));
    }
    // P0: no click on one arm, P00: no click on either arm.
    let (p0, p00) = match kind {
        LightKind::Poisson => ((-0.5 * n_bar).exp(), (-n_bar).exp()),
        LightKind::ThermalSingleMode => (1.0 / (1.0 + 0.5 * n_bar), 1.0 / (1.0 + n_bar)),
    };
    let p_single = 1.0 - p0;
    let p_coincidence = (1.0 - 2.0 * p0 + p00).max(0.0);
    let (alpha, beta) = match kind {
        LightKind::Poisson => (1.0, 1.0),
        LightKind::ThermalSingleMode => (
            (2.0 + n_bar) / (1.0 + n_bar),
            1.0 + n_bar * n_bar / 4.0 / (1.0 + n_bar),
        ),
    };
    Ok(ClickStats {
        alpha,
        beta,
        p_single,
        p_coincidence,
    })
}

/// Zero-delay alpha of `n_tot` emitters of which only `n_min` are single-photon
/// emitters and the rest contribute uncorrelated Poissonian light.
pub fn nmin_alpha(n_min: u64, n_tot: u64) -> Result<f64> {
    if n_tot == 0 {
        return Err(Error::domain("n_tot must be >= 1"));
    }
    if n_min > n_tot {
        return Err(Error::domain(format!(
            "n_min = {n_min} exceeds n_tot = {n_tot}"
        )));
    }
    let x = n_min as u128;
    let noise = (n_tot - n_min) as u128;
    let num = 2 * x * x.saturating_sub(1) + 2 * x * noise + noise * noise;
    let den = (n_tot as u128) * (n_tot as u128);
    Ok(num as f64 / den as f64)
}

/// Smallest number of single-photon emitters out of `n_tot` compatible with a
/// measured alpha.
///
/// `nmin_alpha(x, n)` equals 1 at `x = 0` and `x = 2` and dips just below 1 at
/// `x = 1`, then rises strictly. Alphas below 1 need no single-photon emitters
/// (returns 0); otherwise the threshold is searched on the rising branch
/// `2 ..= n_tot`.
pub fn invert_nmin(alpha_measured: f64, n_tot: u64) -> Result<u64> {
    if n_tot == 0 {
        return Err(Error::domain("n_tot must be >= 1"));
    }
    if !alpha_measured.is_finite() {
        return Err(Error::domain("alpha must be finite"));
    }
    if alpha_measured < 1.0 {
        return Ok(0);
    }
    let max = nmin_alpha(n_tot, n_tot)?;
    if n_tot < 2 || alpha_measured > max {
        return Err(Error::Infeasible {
            alpha: alpha_measured,
            n_tot,
            max,
        });
    }
    // Integer bisection for the first x in [2, n_tot] reaching the alpha.
    let (mut lo, mut hi) = (2u64, n_tot);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if nmin_alpha(mid, n_tot)? >= alpha_measured {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// Standard normal CDF.
fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[max(y + s·Z, 0)]`, the ramp function smoothed by a Gaussian.
fn smoothed_ramp(y: f64, s: f64) -> f64 {
    if s == 0.0 {
        y.max(0.0)
    } else {
        y * norm_cdf(y / s) + s * norm_pdf(y / s)
    }
}

/// Density of the delay between two photons each placed uniformly in the
/// same window of width `window`, blurred by a Gaussian of width `s`.
fn window_kernel(tau: f64, window: f64, s: f64) -> f64 {
    (smoothed_ramp(tau + window, s) - 2.0 * smoothed_ramp(tau, s) + smoothed_ramp(tau - window, s))
        / (window * window)
}

const KERNEL_INTERVALS: usize = 4000;

/// Binned alpha expected from a `g²(τ)` curve: the average of `g²(t - t')`
/// over two aligned windows of width `window`, after each detector adds
/// Gaussian timing jitter of standard deviation `jitter_sigma`.
///
/// `rate` is the expected per-channel count rate. The binned alpha only
/// approximates the windowed `g²` while the mean count per window is small,
/// so `rate·window > 0.1` is rejected.
pub fn predict_alpha_windowed(
    pred: &G2Prediction,
    window: f64,
    jitter_sigma: f64,
    rate: f64,
) -> Result<f64> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::domain(format!("window must be > 0, got {window}")));
    }
    if !(jitter_sigma >= 0.0 && jitter_sigma.is_finite()) {
        return Err(Error::domain(format!(
            "jitter must be >= 0, got {jitter_sigma}"
        )));
    }
    if !(rate >= 0.0) {
        return Err(Error::domain(format!("rate must be >= 0, got {rate}")));
    }
    if rate * window > 0.1 {
        return Err(Error::domain(format!(
            "mean count per window {} is too large for alpha to approximate g2",
            rate * window
        )));
    }
    let span = window + 6.0 * jitter_sigma;
    let (lo, hi) = (pred.tau_grid[0], pred.tau_grid[pred.tau_grid.len() - 1]);
    let slack = 1e-9 * span;
    if lo > -span + slack || hi < span - slack {
        return Err(Error::domain(format!(
            "tau grid [{lo:e}, {hi:e}] must span at least ±{span:e}"
        )));
    }

    let s = std::f64::consts::SQRT_2 * jitter_sigma;
    let h = 2.0 * span / KERNEL_INTERVALS as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=KERNEL_INTERVALS {
        let tau = (-span + k as f64 * h).clamp(lo, hi);
        let wt = if k == 0 || k == KERNEL_INTERVALS {
            0.5
        } else {
            1.0
        };
        let kern = window_kernel(tau, window, s) * wt;
        // The grid is checked above, so interpolation cannot fall outside.
        num += kern * pred.interpolate(tau).unwrap_or(1.0);
        den += kern;
    }
    Ok(num / den)
}

/// Windowed alpha straight from the ensemble model.
pub fn model_alpha_windowed(
    n_eff: f64,
    em: &EmitterModel,
    mm: &MotionModel,
    c_factor: f64,
    window: f64,
    jitter_sigma: f64,
    rate: f64,
) -> Result<f64> {
    let span = window + 6.0 * jitter_sigma;
    let grid = G2Prediction::symmetric_grid(span, KERNEL_INTERVALS);
    let pred = G2Prediction::from_model(grid, n_eff, em, mm, c_factor)?;
    predict_alpha_windowed(&pred, window, jitter_sigma, rate)
}
