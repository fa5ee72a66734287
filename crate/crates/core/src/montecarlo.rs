//! Stochastic simulation of weakly driven emitters radiating into a set of
//! detection modes, producing HBT time tags.
//!
//! Each emitter carries a conditional dipole amplitude `ε_i` that relaxes
//! towards the steady value `ε_ss`. Unobserved emission resets a single
//! emitter to zero; a detection in mode `κ` applies the collective collapse
//! `ε_i ← ε_i (S_κ − c_κi ε_i) / S_κ`.
//!
//! Between events all amplitudes share one decay factor `g(t)`, so
//! `ε_i(t) = ε_ss + D_i g(t)` and every collective field is
//! `S_κ = ε_ss A_κ + g B_κ` with `A_κ = Σ c_κi`, `B_κ = Σ c_κi D_i`. The
//! detection hazard is then a quadratic in `g` and its integral is exact,
//! which is what the exponential clock below relies on.

use std::collections::BTreeMap;

use log::warn;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::analytic::ModeMatrix;
use crate::error::{Error, Result};
use crate::model::{EmitterModel, EnsembleSpec, MotionModel};
use crate::timetags::{poisson_tags, seconds_to_ps, Channel, TimeTag, TimeTagStream, PS_PER_S};

/// Largest allowed `|ε_ss|²`.
pub const MAX_STEADY_POPULATION: f64 = 0.1;
/// Largest allowed mean detection probability per step.
pub const MAX_STEP_PROBABILITY: f64 = 0.1;
/// Detection rates above this fraction of Γ trigger a warning.
pub const RATE_WARNING_FRACTION: f64 = 0.1;
/// Longest motion step in units of `τ_m`.
const MOTION_STEP_TAU: f64 = 1.0 / 50.0;
/// Largest phase-diffusion variance accumulated per motion step.
const MOTION_STEP_PHASE_VAR: f64 = 0.1;
/// Amplitude references are rebased once the common decay factor drops below this.
const REBASE_BELOW: f64 = 1e-2;
/// Largest motion-free stretch handled in one piece, in steps.
const MAX_FROZEN_STEPS: u64 = 1 << 16;
const BISECTION_ITERS: usize = 60;
/// Fields below this fraction of `Σ|c_i ε_i|` are rounding noise.
const FIELD_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub jitter_sigma: f64,
    pub dead_time: f64,
    /// Dark counts per second per detector.
    pub dark_rate: f64,
    /// Probability that a photon is routed to detector A.
    pub splitter_ratio: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            jitter_sigma: 1e-9,
            dead_time: 25e-9,
            dark_rate: 100.0,
            splitter_ratio: 0.5,
        }
    }
}

impl DetectorParams {
    /// Noise-free detectors behind a balanced splitter.
    pub fn ideal() -> Self {
        DetectorParams {
            jitter_sigma: 0.0,
            dead_time: 0.0,
            dark_rate: 0.0,
            splitter_ratio: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("jitter_sigma", self.jitter_sigma),
            ("dead_time", self.dead_time),
            ("dark_rate", self.dark_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "detector {name} must be >= 0, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.splitter_ratio) {
            return Err(Error::config(format!(
                "splitter_ratio must lie in [0, 1], got {}",
                self.splitter_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub ensemble: EnsembleSpec,
    pub emitter: EmitterModel,
    pub motion: MotionModel,
    pub modes: ModeMatrix,
    pub detector: DetectorParams,
    pub duration: f64,
    pub dt: f64,
    /// Multiplier on the physical detection rate.
    pub detection_gain: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Equal-weight single-mode ensemble with ideal detectors; `dt` is the
    /// largest value the invariants allow.
    pub fn simple(
        n: usize,
        emitter: EmitterModel,
        motion: MotionModel,
        eta: f64,
        duration: f64,
        seed: u64,
    ) -> Result<Self> {
        let ensemble = EnsembleSpec::equal(n)?;
        let modes = ModeMatrix::single_mode(&ensemble.weights, eta)?;
        let dt = max_dt(&emitter, &motion);
        Ok(SimConfig {
            ensemble,
            emitter,
            motion,
            modes,
            detector: DetectorParams::ideal(),
            duration,
            dt,
            detection_gain: 1.0,
            seed,
        })
    }

    /// Mean detection rate with independent random phases.
    pub fn mean_detection_rate(&self) -> f64 {
        self.detection_gain
            * self.emitter.gamma
            * self.emitter.steady_amplitude().norm_sqr()
            * total_coupling(&self.modes)
    }

    /// Sets `detection_gain` so the mean detection rate (both detectors)
    /// equals `rate`.
    pub fn with_detection_rate(mut self, rate: f64) -> Result<Self> {
        self.detection_gain = gain_for_rate(rate, &self.emitter, &self.modes)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Domain(m) => Error::Config(m),
            other => other,
        };
        self.emitter.validate().map_err(as_config)?;
        self.motion.validate().map_err(as_config)?;
        self.detector.validate()?;
        if self.ensemble.n_emitters != self.modes.n_emitters() {
            return Err(Error::config(format!(
                "ensemble has {} emitters but the mode matrix has {}",
                self.ensemble.n_emitters,
                self.modes.n_emitters()
            )));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config(format!(
                "duration must be > 0, got {}",
                self.duration
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config(format!("dt must be > 0, got {}", self.dt)));
        }
        let limit = max_dt(&self.emitter, &self.motion);
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "dt = {:e} exceeds min(0.02/gamma, tau_m/50) = {limit:e}",
                self.dt
            )));
        }
        if !(self.detection_gain > 0.0 && self.detection_gain.is_finite()) {
            return Err(Error::config("detection_gain must be > 0"));
        }
        let pop = self.emitter.steady_amplitude().norm_sqr();
        if pop > MAX_STEADY_POPULATION {
            return Err(Error::config(format!(
                "|eps_ss|^2 = {pop} exceeds the weak-excitation limit {MAX_STEADY_POPULATION}"
            )));
        }
        let p_step = self.mean_detection_rate() * self.dt;
        if p_step > MAX_STEP_PROBABILITY {
            return Err(Error::config(format!(
                "mean detection probability per step {p_step} exceeds {MAX_STEP_PROBABILITY}"
            )));
        }
        if self.duration / self.dt > 1e15 {
            return Err(Error::config("duration / dt is too large"));
        }
        Ok(())
    }
}

pub fn max_dt(em: &EmitterModel, mm: &MotionModel) -> f64 {
    (0.02 / em.gamma).min(mm.tau_m / 50.0)
}

fn total_coupling(modes: &ModeMatrix) -> f64 {
    (0..modes.n_emitters())
        .map(|i| modes.emitter_efficiency(i))
        .sum()
}

/// Gain giving a mean total detection rate `rate` (counts/s).
pub fn gain_for_rate(rate: f64, em: &EmitterModel, modes: &ModeMatrix) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::config(format!(
            "target rate must be > 0, got {rate}"
        )));
    }
    let base = em.gamma * em.steady_amplitude().norm_sqr() * total_coupling(modes);
    if !(base > 0.0) {
        return Err(Error::config(
            "ensemble emits no light into the detection modes",
        ));
    }
    Ok(rate / base)
}

/// One exact Ornstein–Uhlenbeck transition over `dt`.
pub fn ou_step(pos: f64, dt: f64, mm: &MotionModel, rng: &mut impl Rng) -> f64 {
    let rho = (-dt / mm.tau_m).exp();
    let xi: f64 = rng.sample(StandardNormal);
    pos * rho + mm.sigma_r * (-(-2.0 * dt / mm.tau_m).exp_m1()).sqrt() * xi
}

pub fn relax_amplitude(eps: Complex64, elapsed: f64, em: &EmitterModel) -> Complex64 {
    let ss = em.steady_amplitude();
    ss + (eps - ss) * (-0.5 * em.gamma * elapsed).exp()
}

#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub t: f64,
    pub eps: Vec<Complex64>,
    /// Displacements along the wave vector (m).
    pub pos: Vec<f64>,
    pub k_mag: f64,
    pub rng: ChaCha8Rng,
}

impl TrajectoryState {
    /// Steady amplitudes and positions drawn from the stationary motion.
    pub fn steady(n: usize, em: &EmitterModel, mm: &MotionModel, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = (0..n)
            .map(|_| mm.sigma_r * rng.sample::<f64, _>(StandardNormal))
            .collect();
        TrajectoryState {
            t: 0.0,
            eps: vec![em.steady_amplitude(); n],
            pos,
            k_mag: mm.k_mag,
            rng,
        }
    }

    fn coupling(&self, modes: &ModeMatrix, mode: usize, i: usize) -> Complex64 {
        modes.amplitude(mode, i) * Complex64::from_polar(1.0, self.k_mag * self.pos[i])
    }
}

/// `S_κ = Σ_i u_κi e^{i k pos_i} ε_i`.
pub fn collective_field(state: &TrajectoryState, modes: &ModeMatrix, mode: usize) -> Complex64 {
    (0..state.eps.len())
        .map(|i| state.coupling(modes, mode, i) * state.eps[i])
        .sum()
}

/// Field identity residual `|S'S − (S² − Σ c²ε²)|` of one collapse, relative
/// to `|S|²` and to `(Σ|c_i ε_i|)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseResidual {
    pub field: f64,
    pub scale: f64,
}

/// Applies the detection collapse in place. Returns `None` if `S` vanishes
/// to rounding.
fn collapse(eps: &mut [Complex64], c: impl Fn(usize) -> Complex64) -> Option<CollapseResidual> {
    let n = eps.len();
    let s: Complex64 = (0..n).map(|i| c(i) * eps[i]).sum();
    let scale: f64 = (0..n).map(|i| (c(i) * eps[i]).norm()).sum();
    if s.norm() <= FIELD_ZERO * scale || s.norm_sqr() == 0.0 {
        return None;
    }
    let mut pair = s * s;
    for (i, e) in eps.iter_mut().enumerate() {
        let ce = c(i) * *e;
        pair -= ce * ce;
        *e = *e * (s - ce) / s;
    }
    let s_after: Complex64 = (0..n).map(|i| c(i) * eps[i]).sum();
    let r = (s_after * s - pair).norm();
    Some(CollapseResidual {
        field: r / s.norm_sqr(),
        scale: r / (scale * scale),
    })
}

/// Collapse after a detection in `mode`. A vanishing field leaves the state
/// unchanged.
pub fn collapse_amplitudes(
    state: &TrajectoryState,
    modes: &ModeMatrix,
    mode: usize,
) -> TrajectoryState {
    let mut next = state.clone();
    let c: Vec<Complex64> = (0..state.eps.len())
        .map(|i| state.coupling(modes, mode, i))
        .collect();
    collapse(&mut next.eps, |i| c[i]);
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimStats {
    pub detections: u64,
    pub unobserved_jumps: u64,
    pub jump_candidates: u64,
    pub motion_updates: u64,
    /// Largest field-identity residual relative to `(Σ|c_i ε_i|)²`.
    pub max_identity_residual: f64,
    /// Largest field-identity residual relative to `|S|²`.
    pub max_identity_residual_field: f64,
}

impl SimStats {
    fn absorb(&mut self, o: &SimStats) {
        self.detections += o.detections;
        self.unobserved_jumps += o.unobserved_jumps;
        self.jump_candidates += o.jump_candidates;
        self.motion_updates += o.motion_updates;
        self.max_identity_residual = self.max_identity_residual.max(o.max_identity_residual);
        self.max_identity_residual_field = self
            .max_identity_residual_field
            .max(o.max_identity_residual_field);
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub a: TimeTagStream,
    pub b: TimeTagStream,
    pub stats: SimStats,
}

impl SimResult {
    pub fn combined(&self) -> TimeTagStream {
        self.a.merge(&self.b)
    }
}

/// Steps per motion update: the motion step stays below `τ_m/50` and keeps
/// the phase diffusion per update small.
pub fn motion_stride(cfg: &SimConfig) -> Option<u64> {
    let mm = &cfg.motion;
    if mm.sigma_r == 0.0 {
        return None;
    }
    let kvar = (mm.k_mag * mm.sigma_r).powi(2);
    let h = (MOTION_STEP_TAU * mm.tau_m).min(MOTION_STEP_PHASE_VAR * mm.tau_m / (2.0 * kvar));
    Some(((h / cfg.dt).floor() as u64).max(1))
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    n: usize,
    m: usize,
    gamma: f64,
    ss: Complex64,
    /// Emitter-major couplings `c_κi = u_κi e^{ik pos_i}`.
    c: Vec<Complex64>,
    pos: Vec<f64>,
    d: Vec<Complex64>,
    a_sum: Vec<Complex64>,
    b_sum: Vec<Complex64>,
    t: f64,
    /// Common decay factor at `t`.
    g: f64,
    /// Hazard `h(g) = h0 + h1 g + h2 g²`.
    h: [f64; 3],
    clock: f64,
    bound: f64,
    next_candidate: f64,
    rng: ChaCha8Rng,
    tags: Vec<TimeTag>,
    stats: SimStats,
    scratch: Vec<Complex64>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig, rng: ChaCha8Rng) -> Self {
        let n = cfg.modes.n_emitters();
        let m = cfg.modes.n_modes();
        let mut e = Engine {
            cfg,
            n,
            m,
            gamma: cfg.emitter.gamma,
            ss: cfg.emitter.steady_amplitude(),
            c: vec![Complex64::new(0.0, 0.0); n * m],
            pos: vec![0.0; n],
            d: vec![Complex64::new(0.0, 0.0); n],
            a_sum: vec![Complex64::new(0.0, 0.0); m],
            b_sum: vec![Complex64::new(0.0, 0.0); m],
            t: 0.0,
            g: 1.0,
            h: [0.0; 3],
            clock: 0.0,
            bound: cfg.emitter.steady_amplitude().norm_sqr(),
            next_candidate: f64::INFINITY,
            rng,
            tags: Vec::new(),
            stats: SimStats::default(),
            scratch: vec![Complex64::new(0.0, 0.0); n],
        };
        let sigma = cfg.motion.sigma_r;
        for p in e.pos.iter_mut() {
            *p = sigma * e.rng.sample::<f64, _>(StandardNormal);
        }
        e.refresh_couplings();
        e.clock = e.rng.sample(Exp1);
        e.draw_candidate();
        e
    }

    fn refresh_couplings(&mut self) {
        let k = self.cfg.motion.k_mag;
        self.a_sum
            .iter_mut()
            .for_each(|z| *z = Complex64::new(0.0, 0.0));
        self.b_sum
            .iter_mut()
            .for_each(|z| *z = Complex64::new(0.0, 0.0));
        for i in 0..self.n {
            let phase = Complex64::from_polar(1.0, k * self.pos[i]);
            let row = self.cfg.modes.emitter_row(i);
            for kappa in 0..self.m {
                let c = row[kappa] * phase;
                self.c[i * self.m + kappa] = c;
                self.a_sum[kappa] += c;
                self.b_sum[kappa] += c * self.d[i];
            }
        }
        self.refresh_hazard();
    }

    fn refresh_hazard(&mut self) {
        let scale = self.cfg.detection_gain * self.gamma;
        let mut h = [0.0; 3];
        for kappa in 0..self.m {
            let a = self.ss * self.a_sum[kappa];
            let b = self.b_sum[kappa];
            h[0] += a.norm_sqr();
            h[1] += 2.0 * (a * b.conj()).re;
            h[2] += b.norm_sqr();
        }
        self.h = h.map(|x| x * scale);
    }

    /// Folds the decay factor into the stored offsets.
    fn rebase(&mut self) {
        let g = self.g;
        self.d.iter_mut().for_each(|z| *z *= g);
        self.b_sum.iter_mut().for_each(|z| *z *= g);
        self.h[1] *= g;
        self.h[2] *= g * g;
        self.g = 1.0;
    }

    fn draw_candidate(&mut self) {
        let rate = self.n as f64 * self.gamma * self.bound;
        self.next_candidate = if rate > 0.0 {
            self.t + self.rng.sample::<f64, _>(Exp1) / rate
        } else {
            f64::INFINITY
        };
    }

    /// Integrated hazard from `t` to `t + span`.
    fn hazard_integral(&self, span: f64) -> f64 {
        let q = (-0.5 * self.gamma * span).exp();
        let g = self.g;
        self.h[0] * span
            + self.h[1] * 2.0 / self.gamma * g * (1.0 - q)
            + self.h[2] / self.gamma * g * g * (1.0 - q * q)
    }

    fn move_to(&mut self, t: f64) {
        self.g *= (-0.5 * self.gamma * (t - self.t)).exp();
        self.t = t;
    }

    /// Runs all events up to `t_end`.
    fn advance(&mut self, t_end: f64) {
        loop {
            let t_stop = t_end.min(self.next_candidate);
            let span = t_stop - self.t;
            let mass = self.hazard_integral(span);
            if mass >= self.clock {
                let (mut lo, mut hi) = (0.0, span);
                for _ in 0..BISECTION_ITERS {
                    let mid = 0.5 * (lo + hi);
                    if self.hazard_integral(mid) < self.clock {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let t_det = self.t + hi;
                self.move_to(t_det);
                self.detect();
                continue;
            }
            self.clock -= mass;
            self.move_to(t_stop);
            if t_stop < t_end {
                self.candidate();
                continue;
            }
            break;
        }
    }

    fn candidate(&mut self) {
        self.stats.jump_candidates += 1;
        let i = self.rng.gen_range(0..self.n);
        let eps = self.ss + self.d[i] * self.g;
        if self.rng.gen::<f64>() * self.bound < eps.norm_sqr() {
            if self.g < REBASE_BELOW {
                self.rebase();
            }
            let d_new = -self.ss / self.g;
            let delta = d_new - self.d[i];
            for kappa in 0..self.m {
                self.b_sum[kappa] += self.c[i * self.m + kappa] * delta;
            }
            self.d[i] = d_new;
            self.stats.unobserved_jumps += 1;
            self.refresh_hazard();
        }
        self.draw_candidate();
    }

    fn detect(&mut self) {
        let g = self.g;
        let fields: Vec<f64> = (0..self.m)
            .map(|k| (self.ss * self.a_sum[k] + self.b_sum[k] * g).norm_sqr())
            .collect();
        let total: f64 = fields.iter().sum();
        let mut pick = self.rng.gen::<f64>() * total;
        let mut kappa = self.m - 1;
        for (k, f) in fields.iter().enumerate() {
            if pick < *f {
                kappa = k;
                break;
            }
            pick -= f;
        }
        let channel = if self.rng.gen::<f64>() < self.cfg.detector.splitter_ratio {
            Channel::A
        } else {
            Channel::B
        };

        for i in 0..self.n {
            self.scratch[i] = self.ss + self.d[i] * g;
        }
        let (m, c) = (self.m, &self.c);
        let residual = collapse(&mut self.scratch, |i| c[i * m + kappa]);
        if let Some(r) = residual {
            let s = &mut self.stats;
            s.max_identity_residual = s.max_identity_residual.max(r.scale);
            s.max_identity_residual_field = s.max_identity_residual_field.max(r.field);
        }
        let mut bound = self.ss.norm_sqr();
        for i in 0..self.n {
            bound = bound.max(self.scratch[i].norm_sqr());
            self.d[i] = self.scratch[i] - self.ss;
        }
        self.g = 1.0;
        self.bound = bound;
        self.b_sum
            .iter_mut()
            .for_each(|z| *z = Complex64::new(0.0, 0.0));
        for i in 0..self.n {
            for k in 0..self.m {
                self.b_sum[k] += self.c[i * self.m + k] * self.d[i];
            }
        }
        self.refresh_hazard();

        self.tags
            .push(TimeTag::new(channel, (self.t * PS_PER_S).round() as u64));
        self.stats.detections += 1;
        self.clock = self.rng.sample(Exp1);
        self.draw_candidate();
    }

    fn motion_update(&mut self, h: f64) {
        let mm = self.cfg.motion;
        for p in self.pos.iter_mut() {
            *p = ou_step(*p, h, &mm, &mut self.rng);
        }
        self.refresh_couplings();
        self.stats.motion_updates += 1;
    }

    fn run(mut self, duration: f64) -> (Vec<TimeTag>, SimStats) {
        let dt = self.cfg.dt;
        let total_steps = (duration / dt).ceil() as u64;
        let stride = motion_stride(self.cfg);
        let chunk = stride.unwrap_or(MAX_FROZEN_STEPS);
        let mut step = 0u64;
        while step < total_steps {
            let next = (step + chunk).min(total_steps);
            let t_end = (next as f64 * dt).min(duration);
            if self.g < REBASE_BELOW {
                self.rebase();
            }
            self.advance(t_end);
            step = next;
            if stride.is_some() && step < total_steps {
                self.motion_update(chunk as f64 * dt);
            }
        }
        (self.tags, self.stats)
    }
}

/// Gaussian jitter, per-channel dead time, then Poisson dark counts.
/// Tags jittered outside `[0, duration)` are dropped.
pub fn detector_effects(
    ideal: &TimeTagStream,
    det: &DetectorParams,
    rng: &mut ChaCha8Rng,
) -> TimeTagStream {
    let duration = ideal.duration_ps();
    let mut tags: Vec<TimeTag> = if det.jitter_sigma > 0.0 {
        let sigma_ps = det.jitter_sigma * PS_PER_S;
        ideal
            .records()
            .iter()
            .filter_map(|r| {
                let z: f64 = rng.sample(StandardNormal);
                let t = r.timestamp_ps as f64 + sigma_ps * z;
                let t = t.round();
                (t >= 0.0 && t < duration as f64).then(|| TimeTag::new(r.channel, t as u64))
            })
            .collect()
    } else {
        ideal.records().to_vec()
    };
    tags.sort_by_key(|r| r.timestamp_ps);

    if det.dead_time > 0.0 {
        let dead = seconds_to_ps(det.dead_time);
        let mut last: [Option<u64>; 2] = [None, None];
        tags.retain(|r| {
            let slot = &mut last[r.channel.code() as usize];
            match *slot {
                Some(prev) if r.timestamp_ps - prev < dead => false,
                _ => {
                    *slot = Some(r.timestamp_ps);
                    true
                }
            }
        });
    }

    if det.dark_rate > 0.0 {
        tags.extend(poisson_tags(Channel::A, det.dark_rate, duration, rng));
        tags.extend(poisson_tags(Channel::B, det.dark_rate, duration, rng));
        tags.sort_by_key(|r| r.timestamp_ps);
    }
    let mut out = TimeTagStream::from_unsorted(tags, ideal.metadata.clone());
    out.set_duration_ps(duration);
    out
}

fn metadata(cfg: &SimConfig, duration_ps: u64) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("seed".into(), cfg.seed.to_string());
    m.insert("duration_ps".into(), duration_ps.to_string());
    m.insert("n_emitters".into(), cfg.modes.n_emitters().to_string());
    m.insert("n_modes".into(), cfg.modes.n_modes().to_string());
    m.insert("detection_gain".into(), format!("{:e}", cfg.detection_gain));
    m
}

/// Simulates one trajectory over the whole duration.
pub fn simulate(cfg: &SimConfig) -> Result<SimResult> {
    simulate_realizations(cfg, 1)
}

/// Splits the duration into `realizations` independent trajectories, run
/// in parallel and concatenated in time. The output depends only on the
/// configuration and `realizations`, not on the thread count.
pub fn simulate_realizations(cfg: &SimConfig, realizations: usize) -> Result<SimResult> {
    cfg.validate()?;
    if realizations == 0 {
        return Err(Error::config("realizations must be >= 1"));
    }
    let mean_rate = cfg.mean_detection_rate();
    if mean_rate >= RATE_WARNING_FRACTION * cfg.emitter.gamma {
        warn!(
            "detection rate {mean_rate:.3e}/s is not small against gamma = {:.3e}/s",
            cfg.emitter.gamma
        );
    }
    let total_ps = seconds_to_ps(cfg.duration);
    let bounds: Vec<u64> = (0..=realizations)
        .map(|k| (total_ps as u128 * k as u128 / realizations as u128) as u64)
        .collect();
    let parts: Vec<(Vec<TimeTag>, SimStats)> = (0..realizations)
        .into_par_iter()
        .map(|k| {
            let (start, end) = (bounds[k], bounds[k + 1]);
            let mut traj_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            traj_rng.set_stream(2 * k as u64);
            let mut det_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            det_rng.set_stream(2 * k as u64 + 1);
            let span = end - start;
            let (tags, stats) = Engine::new(cfg, traj_rng).run(span as f64 / PS_PER_S);
            let mut ideal = TimeTagStream::from_unsorted(tags, BTreeMap::new());
            ideal.set_duration_ps(span);
            let real = detector_effects(&ideal, &cfg.detector, &mut det_rng);
            let shifted = real
                .records()
                .iter()
                .map(|r| TimeTag::new(r.channel, r.timestamp_ps + start))
                .collect();
            (shifted, stats)
        })
        .collect();

    let mut stats = SimStats::default();
    let mut all = Vec::new();
    for (tags, s) in parts {
        all.extend(tags);
        stats.absorb(&s);
    }
    let meta = metadata(cfg, total_ps);
    let combined = TimeTagStream::new(all, meta)?;
    let (a, b) = combined.split_channels();
    Ok(SimResult { a, b, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DEFAULT_WAVELENGTH;
    use approx::assert_abs_diff_eq;

    fn em() -> EmitterModel {
        EmitterModel::weak_drive(2.0 * std::f64::consts::PI * 20e6, 0.002).unwrap()
    }

    #[test]
    fn ou_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let still = MotionModel::new(0.0, 1e-6, 1.0).unwrap();
        assert_abs_diff_eq!(ou_step(2.0, 1e-7, &still, &mut rng), 2.0 * (-0.1f64).exp());
        let mm = MotionModel::new(1e-7, 1e-6, 1.0).unwrap();
        let x = ou_step(3e-8, 1e-15, &mm, &mut rng);
        assert_abs_diff_eq!(x, 3e-8, epsilon = 1e-10);
    }

    #[test]
    fn relax_examples() {
        let e = em();
        let ss = e.steady_amplitude();
        assert_eq!(relax_amplitude(ss, 1e-6, &e), ss);
        assert_abs_diff_eq!(
            (relax_amplitude(Complex64::new(0.0, 0.0), 1.0, &e) - ss).norm(),
            0.0
        );
        let half = relax_amplitude(Complex64::new(0.0, 0.0), 2.0 * 2f64.ln() / e.gamma, &e);
        assert_abs_diff_eq!((half - ss * 0.5).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn field_and_collapse_examples() {
        let e = em();
        let mm = MotionModel::frozen(DEFAULT_WAVELENGTH);
        let modes = ModeMatrix::single_mode(&[1.0, 1.0], 1e-2).unwrap();
        let mut st = TrajectoryState::steady(2, &e, &mm, 0);
        // Half a wavelength apart: opposite phases.
        st.pos = vec![0.0, DEFAULT_WAVELENGTH / 2.0];
        assert_abs_diff_eq!(
            collective_field(&st, &modes, 0).norm(),
            0.0,
            epsilon = 1e-15
        );
        // Vanishing field: collapse is a no-op.
        assert_eq!(collapse_amplitudes(&st, &modes, 0).eps, st.eps);

        st.pos = vec![0.0, 0.0];
        let s = collective_field(&st, &modes, 0);
        let after = collapse_amplitudes(&st, &modes, 0);
        let s2 = collective_field(&after, &modes, 0);
        // Equal in-phase pair: the field after collapse is half the field before.
        assert_abs_diff_eq!((s2 - s * 0.5).norm(), 0.0, epsilon = 1e-15);

        let one = ModeMatrix::single_mode(&[1.0], 1e-2).unwrap();
        let st1 = TrajectoryState::steady(1, &e, &mm, 0);
        assert_eq!(
            collapse_amplitudes(&st1, &one, 0).eps[0],
            Complex64::new(0.0, 0.0)
        );
    }

    #[test]
    fn detector_effect_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = TimeTagStream::new(
            vec![
                TimeTag::new(Channel::A, 1_000),
                TimeTag::new(Channel::A, 11_000),
            ],
            BTreeMap::new(),
        )
        .unwrap();
        s.set_duration_ps(100_000);
        assert_eq!(detector_effects(&s, &DetectorParams::ideal(), &mut rng), s);
        let dead = DetectorParams {
            dead_time: 25e-9,
            ..DetectorParams::ideal()
        };
        let out = detector_effects(&s, &dead, &mut rng);
        assert_eq!(out.records(), &[TimeTag::new(Channel::A, 1_000)]);
    }

    #[test]
    fn config_guards() {
        let e = em();
        let mm =
            MotionModel::with_phase_spread(2.0 * std::f64::consts::PI, 1e-5, DEFAULT_WAVELENGTH)
                .unwrap();
        let base = SimConfig::simple(2, e, mm, 1e-2, 1e-4, 0).unwrap();
        assert!(base.validate().is_ok());
        let coarse = SimConfig {
            dt: base.dt * 2.0,
            ..base.clone()
        };
        assert!(matches!(coarse.validate(), Err(Error::Config(_))));
        let hot = base.clone().with_detection_rate(0.2 / base.dt).unwrap();
        assert!(matches!(hot.validate(), Err(Error::Config(_))));
        let strong = SimConfig {
            emitter: EmitterModel::weak_drive(e.gamma, 0.5).unwrap(),
            ..base.clone()
        };
        assert!(matches!(strong.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let e = em();
        let mm =
            MotionModel::with_phase_spread(2.0 * std::f64::consts::PI, 1e-5, DEFAULT_WAVELENGTH)
                .unwrap();
        let cfg = SimConfig::simple(3, e, mm, 1e-2, 2e-4, 9)
            .unwrap()
            .with_detection_rate(2e6)
            .unwrap();
        let a = simulate_realizations(&cfg, 3).unwrap();
        let b = simulate_realizations(&cfg, 3).unwrap();
        assert_eq!(a.combined(), b.combined());
        assert!(a.stats.detections > 100);
        assert!(a.stats.max_identity_residual < 1e-12);
    }
}
