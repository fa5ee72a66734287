//! Alpha as a function of crystal size.
//!
//! Small crystals are strings across the detection axis, larger ones oblate
//! shell crystals. Every point averages several independently generated
//! crystals, each simulated on its own, so the reported error includes the
//! spread between crystal configurations.

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analytic::{compute_c, effective_n, model_alpha_windowed};
use crate::error::{Error, Result};
use crate::estimators::{
    alpha_from_counts, beta_from_counts, segment_counts, BinCounts, BinningOptions, Estimate,
    DEFAULT_SEGMENTS, DEFAULT_WINDOW,
};
use crate::geometry::{
    detection_weights, generate_positions, mode_matrix_from_weights, CrystalSpec, DetectionVolume,
    ModeScheme,
};
use crate::model::{EmitterModel, EnsembleSpec, MotionModel, DEFAULT_GAMMA};
use crate::montecarlo::{max_dt, simulate, DetectorParams, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub n_list: Vec<usize>,
    /// Crystal realizations per point.
    pub realizations: usize,
    /// Ion spacing in strings; shells use one ion per `spacing³`.
    pub spacing: f64,
    /// Short over long semi-axis of the shell crystals.
    pub aspect: f64,
    /// Largest N built as a string.
    pub string_max: usize,
    /// Emitters weighing less than this fraction of the brightest are dropped.
    pub prune_below: f64,
    pub volume: DetectionVolume,
    pub scheme: ModeScheme,
    pub eta: f64,
    pub emitter: EmitterModel,
    pub motion: MotionModel,
    pub detector: DetectorParams,
    /// Mean total detection rate (counts/s).
    pub detection_rate: f64,
    /// Simulated time per realization.
    pub duration: f64,
    pub window: f64,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let emitter =
            EmitterModel::weak_drive(DEFAULT_GAMMA, 0.002).expect("default emitter is valid");
        let motion =
            MotionModel::with_phase_spread(2.0 * std::f64::consts::PI, 100e-6, emitter.wavelength)
                .expect("default motion is valid");
        SweepSpec {
            n_list: vec![1, 2, 14, 55, 202, 288, 489, 763],
            realizations: 20,
            spacing: 40e-6,
            aspect: 0.15,
            string_max: 3,
            prune_below: 1e-8,
            volume: DetectionVolume::default(),
            scheme: ModeScheme::SingleMode,
            eta: 1e-4,
            emitter,
            motion,
            detector: DetectorParams::default(),
            detection_rate: 0.02 * DEFAULT_GAMMA,
            duration: 0.1,
            window: DEFAULT_WINDOW,
            seed: 0,
        }
    }
}

/// One realization of one sweep point.
#[derive(Debug, Clone)]
pub struct RealizationResult {
    pub n: usize,
    pub index: usize,
    pub counts: Vec<BinCounts>,
    /// Emitters kept after pruning.
    pub n_kept: usize,
    pub n_eff: f64,
    pub c_factor: f64,
    pub alpha_model: f64,
    pub detections: u64,
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub n: usize,
    pub alpha: Estimate,
    pub beta: Option<Estimate>,
    /// Mean over realizations.
    pub n_eff: f64,
    /// Mean analytic windowed alpha over realizations.
    pub alpha_model: f64,
    pub realizations: usize,
    pub detections: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::config("sweep needs a nonempty list of N >= 1"));
        }
        if self.realizations == 0 {
            return Err(Error::config("sweep realizations must be >= 1"));
        }
        if !(self.spacing > 0.0 && self.aspect > 0.0 && self.aspect <= 1.0) {
            return Err(Error::config(
                "sweep spacing must be > 0 and aspect in (0, 1]",
            ));
        }
        if !(0.0..1.0).contains(&self.prune_below) {
            return Err(Error::config("sweep prune_below must lie in [0, 1)"));
        }
        if !(self.duration > 0.0 && self.window > 0.0 && self.detection_rate > 0.0) {
            return Err(Error::config("sweep duration, window and rate must be > 0"));
        }
        if self.detection_rate / 2.0 * self.window > 0.1 {
            return Err(Error::config("detection rate is too high for the window"));
        }
        self.volume
            .validate()
            .map_err(|e| Error::config(e.to_string()))?;
        self.detector.validate()
    }

    /// Seed of realization `index` at size `n`, shared by crystal and trajectory.
    pub fn realization_seed(&self, n: usize, index: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((n as u64) << 32) | index as u64);
        rng.next_u64()
    }

    pub fn crystal(&self, n: usize, index: usize) -> CrystalSpec {
        if n <= self.string_max {
            CrystalSpec::transverse_chain(n, self.spacing)
        } else {
            CrystalSpec::oblate_with_spacing(
                n,
                self.spacing,
                self.aspect,
                self.realization_seed(n, index),
            )
        }
    }

    /// Simulation setup for one realization; pruned emitters are removed.
    pub fn sim_config(&self, n: usize, index: usize) -> Result<SimConfig> {
        let seed = self.realization_seed(n, index);
        let positions = generate_positions(&self.crystal(n, index))?;
        let weights = detection_weights(&positions, &self.volume);
        let max = weights.iter().cloned().fold(0.0, f64::max);
        let kept: Vec<f64> = weights
            .into_iter()
            .filter(|w| *w >= self.prune_below * max)
            .collect();
        let modes = mode_matrix_from_weights(kept.clone(), self.scheme, self.eta, seed)?;
        let cfg = SimConfig {
            ensemble: EnsembleSpec::from_weights(kept)?,
            emitter: self.emitter,
            motion: self.motion,
            modes,
            detector: self.detector,
            duration: self.duration,
            dt: max_dt(&self.emitter, &self.motion),
            detection_gain: 1.0,
            seed,
        };
        cfg.with_detection_rate(self.detection_rate)
    }

    pub fn run_realization(&self, n: usize, index: usize) -> Result<RealizationResult> {
        let cfg = self.sim_config(n, index)?;
        let n_kept = cfg.modes.n_emitters();
        let n_eff = effective_n(cfg.modes.weights())?;
        let c_factor = if n_kept > 1 {
            compute_c(&cfg.modes)?
        } else {
            1.0
        };
        let alpha_model = model_alpha_windowed(
            n_eff,
            &self.emitter,
            &self.motion,
            c_factor,
            self.window,
            self.detector.jitter_sigma,
            self.detection_rate / 2.0,
        )?;
        let res = simulate(&cfg)?;
        // A lone realization is split so its error can still be estimated.
        let n_segments = if self.realizations == 1 {
            DEFAULT_SEGMENTS
        } else {
            1
        };
        let counts = segment_counts(
            &res.a,
            &res.b,
            &BinningOptions {
                window: self.window,
                lag: 0.0,
                n_segments,
            },
        )?;
        Ok(RealizationResult {
            n,
            index,
            counts,
            n_kept,
            n_eff,
            c_factor,
            alpha_model,
            detections: res.stats.detections,
        })
    }
}

/// Combines the realizations of one point.
pub fn summarize(n: usize, parts: &[RealizationResult]) -> Result<SweepPoint> {
    if parts.is_empty() {
        return Err(Error::undefined(format!("no realizations for N = {n}")));
    }
    let counts: Vec<BinCounts> = parts
        .iter()
        .flat_map(|p| p.counts.iter().copied())
        .collect();
    let k = parts.len() as f64;
    Ok(SweepPoint {
        n,
        alpha: alpha_from_counts(&counts)?,
        beta: beta_from_counts(&counts).ok(),
        n_eff: parts.iter().map(|p| p.n_eff).sum::<f64>() / k,
        alpha_model: parts.iter().map(|p| p.alpha_model).sum::<f64>() / k,
        realizations: parts.len(),
        detections: parts.iter().map(|p| p.detections).sum(),
    })
}

/// Runs every realization of every point in parallel. Results do not
/// depend on the thread count.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepPoint>> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = spec
        .n_list
        .iter()
        .flat_map(|&n| (0..spec.realizations).map(move |r| (n, r)))
        .collect();
    let results: Vec<RealizationResult> = jobs
        .par_iter()
        .map(|&(n, r)| spec.run_realization(n, r))
        .collect::<Result<_>>()?;
    spec.n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let r = spec.realizations;
            summarize(n, &results[i * r..(i + 1) * r])
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from(
        "n,alpha,alpha_stderr,beta,beta_stderr,n_eff,alpha_model,realizations,detections\n",
    );
    for p in points {
        let (b, be) = p.beta.map_or((f64::NAN, f64::NAN), |b| (b.value, b.stderr));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            p.n,
            p.alpha.value,
            p.alpha.stderr,
            b,
            be,
            p.n_eff,
            p.alpha_model,
            p.realizations,
            p.detections
        );
    }
    s
}
