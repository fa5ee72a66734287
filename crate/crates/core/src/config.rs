//! Flat `key = value` run configuration with dotted keys.
//!
//! Blank lines and `#` comments are ignored. Every key must be one of
//! [`KNOWN_KEYS`]; anything else is rejected so typos cannot pass silently.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::analytic::ModeMatrix;
use crate::error::{Error, Result};
use crate::estimators::{AnalysisOptions, BinningOptions};
use crate::geometry::{
    build_mode_matrix, detection_weights, generate_positions, mode_matrix_from_weights,
    CrystalSpec, DetectionVolume, ModeScheme, Vec3,
};
use crate::model::{
    EmitterModel, EnsembleSpec, MotionModel, DEFAULT_GAMMA, DEFAULT_SATURATION, DEFAULT_TAU_M,
    DEFAULT_WAVELENGTH,
};
use crate::montecarlo::{max_dt, DetectorParams, SimConfig};
use crate::sweep::SweepSpec;

pub const KNOWN_KEYS: &[&str] = &[
    "emitter.gamma_hz",
    "emitter.saturation",
    "emitter.detuning_hz",
    "emitter.wavelength_m",
    "emitter.elastic_fraction",
    "motion.tau_m_s",
    "motion.sigma_r_m",
    "motion.phase_spread_rad",
    "crystal.kind",
    "crystal.n",
    "crystal.spacing_m",
    "crystal.aspect",
    "crystal.semi_axes_m",
    "crystal.file",
    "crystal.seed",
    "detection.fwhm_transverse_m",
    "detection.fwhm_axial_m",
    "modes.scheme",
    "modes.eta",
    "modes.seed",
    "detector.jitter_s",
    "detector.dead_time_s",
    "detector.dark_rate_hz",
    "detector.splitter_ratio",
    "sim.duration_s",
    "sim.dt_s",
    "sim.detection_gain",
    "sim.detection_rate_hz",
    "sim.seed",
    "sim.realizations",
    "analysis.window_ps",
    "analysis.lag_ps",
    "analysis.segments",
    "analysis.max_lag_ps",
    "analysis.bin_ps",
    "predict.tau_max_s",
    "predict.points",
    "sweep.n_list",
    "sweep.realizations",
    "sweep.spacing_m",
    "sweep.aspect",
    "sweep.string_max",
    "sweep.prune_below",
    "sweep.duration_s",
    "output.dir",
    "output.tags",
    "output.report",
    "output.histogram",
    "output.prediction",
    "output.table",
];

/// Detection rate used when neither a gain nor a rate is configured, as a
/// fraction of Γ.
pub const DEFAULT_RATE_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// Directory relative paths are resolved against.
    base_dir: PathBuf,
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                return Err(parse_err(format!("unknown key {k:?}")));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(parse_err(format!("duplicate key {k:?}")));
            }
        }
        Ok(RunConfig {
            values,
            base_dir: PathBuf::new(),
        })
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = text.parse()?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Sets a key, as a command-line override would.
    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::config(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("invalid value {v:?} for {key}"))),
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::config(format!("invalid list item {x:?} for {key}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Output path for `output.<what>` inside `output.dir`.
    pub fn output_path(&self, what: &str, default: &str) -> PathBuf {
        let name = self
            .get_str(&format!("output.{what}"))
            .unwrap_or(default)
            .to_string();
        let p = Path::new(&name);
        if p.is_absolute() {
            return p.to_path_buf();
        }
        self.resolve(self.get_str("output.dir").unwrap_or("."))
            .join(p)
    }

    pub fn emitter(&self) -> Result<EmitterModel> {
        let s = self.get_or("emitter.saturation", DEFAULT_SATURATION)?;
        let em = EmitterModel::new(
            self.get_or("emitter.gamma_hz", DEFAULT_GAMMA)?,
            s,
            self.get_or("emitter.detuning_hz", 0.0)?,
            self.get_or("emitter.wavelength_m", DEFAULT_WAVELENGTH)?,
            self.get_or("emitter.elastic_fraction", 1.0 / (1.0 + s.max(0.0)))?,
        );
        em.map_err(to_config)
    }

    pub fn motion(&self) -> Result<MotionModel> {
        let em = self.emitter()?;
        let tau_m = self.get_or("motion.tau_m_s", DEFAULT_TAU_M)?;
        let mm = match self.get::<f64>("motion.sigma_r_m")? {
            Some(sigma) => {
                if self.values.contains_key("motion.phase_spread_rad") {
                    return Err(Error::config(
                        "set either motion.sigma_r_m or motion.phase_spread_rad, not both",
                    ));
                }
                MotionModel::new(sigma, tau_m, em.k_mag())
            }
            None => MotionModel::with_phase_spread(
                self.get_or("motion.phase_spread_rad", 2.0 * std::f64::consts::PI)?,
                tau_m,
                em.wavelength,
            ),
        };
        mm.map_err(to_config)
    }

    pub fn detector(&self) -> Result<DetectorParams> {
        let d = DetectorParams::default();
        let det = DetectorParams {
            jitter_sigma: self.get_or("detector.jitter_s", d.jitter_sigma)?,
            dead_time: self.get_or("detector.dead_time_s", d.dead_time)?,
            dark_rate: self.get_or("detector.dark_rate_hz", d.dark_rate)?,
            splitter_ratio: self.get_or("detector.splitter_ratio", d.splitter_ratio)?,
        };
        det.validate()?;
        Ok(det)
    }

    pub fn volume(&self) -> Result<DetectionVolume> {
        let d = DetectionVolume::default();
        let vol = DetectionVolume {
            fwhm_transverse: self.get_or("detection.fwhm_transverse_m", d.fwhm_transverse)?,
            fwhm_axial: self.get_or("detection.fwhm_axial_m", d.fwhm_axial)?,
            center: d.center,
        };
        vol.validate().map_err(to_config)?;
        Ok(vol)
    }

    pub fn scheme(&self) -> Result<ModeScheme> {
        self.get_str("modes.scheme")
            .unwrap_or("single_mode")
            .parse()
    }

    pub fn eta(&self) -> Result<f64> {
        self.get_or("modes.eta", 1e-4)
    }

    /// `None` for the `equal` kind, which has no geometry.
    pub fn crystal(&self) -> Result<Option<CrystalSpec>> {
        let n = self.get_or("crystal.n", 1usize)?;
        let spacing = self.get_or("crystal.spacing_m", 40e-6)?;
        let seed = self.get_or("crystal.seed", 0u64)?;
        let spec = match self.get_str("crystal.kind").unwrap_or("equal") {
            "equal" => return Ok(None),
            "chain" => CrystalSpec::linear_chain(n, spacing),
            "transverse_chain" => CrystalSpec::transverse_chain(n, spacing),
            "oblate" => CrystalSpec::oblate_with_spacing(
                n,
                spacing,
                self.get_or("crystal.aspect", 0.15)?,
                seed,
            ),
            "ellipsoid" => {
                let axes: Vec<f64> = self.get_list("crystal.semi_axes_m")?.ok_or_else(|| {
                    Error::config("crystal.kind = ellipsoid needs crystal.semi_axes_m")
                })?;
                let axes: Vec3 = axes
                    .try_into()
                    .map_err(|_| Error::config("crystal.semi_axes_m needs three values"))?;
                CrystalSpec::shell_ellipsoid(n, axes, seed)
            }
            "file" => {
                let f = self
                    .get_str("crystal.file")
                    .ok_or_else(|| Error::config("crystal.kind = file needs crystal.file"))?;
                CrystalSpec::from_file(self.resolve(f))
            }
            other => return Err(Error::config(format!("unknown crystal.kind {other:?}"))),
        };
        spec.validate().map_err(to_config)?;
        Ok(Some(spec))
    }

    /// Emitter weights and mode matrix of the configured crystal.
    pub fn modes(&self) -> Result<ModeMatrix> {
        let scheme = self.scheme()?;
        let eta = self.eta()?;
        let seed = self.get_or("modes.seed", 0u64)?;
        let m = match self.crystal()? {
            None => {
                let n = self.get_or("crystal.n", 1usize)?;
                let ens = EnsembleSpec::equal(n).map_err(to_config)?;
                mode_matrix_from_weights(ens.weights, scheme, eta, seed)
            }
            Some(spec) => {
                let pos = generate_positions(&spec)?;
                build_mode_matrix(&pos, &self.volume()?, scheme, eta, seed)
            }
        };
        m.map_err(to_config)
    }

    pub fn positions(&self) -> Result<Vec<Vec3>> {
        match self.crystal()? {
            Some(spec) => generate_positions(&spec),
            None => Err(Error::config("crystal.kind = equal has no positions")),
        }
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        match self.crystal()? {
            None => Ok(vec![1.0; self.get_or("crystal.n", 1usize)?]),
            Some(spec) => Ok(detection_weights(
                &generate_positions(&spec)?,
                &self.volume()?,
            )),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("sim.seed", 0)
    }

    pub fn realizations(&self) -> Result<usize> {
        self.get_or("sim.realizations", 1)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let emitter = self.emitter()?;
        let motion = self.motion()?;
        let modes = self.modes()?;
        let ensemble = EnsembleSpec::from_weights(modes.weights().to_vec()).map_err(to_config)?;
        let mut cfg = SimConfig {
            ensemble,
            emitter,
            motion,
            modes,
            detector: self.detector()?,
            duration: self.get_or("sim.duration_s", 0.1)?,
            dt: self.get_or("sim.dt_s", max_dt(&emitter, &motion))?,
            detection_gain: 1.0,
            seed: self.seed()?,
        };
        match (
            self.get::<f64>("sim.detection_gain")?,
            self.get::<f64>("sim.detection_rate_hz")?,
        ) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "set either sim.detection_gain or sim.detection_rate_hz, not both",
                ))
            }
            (Some(g), None) => cfg.detection_gain = g,
            (None, rate) => {
                let rate = rate.unwrap_or(DEFAULT_RATE_FRACTION * emitter.gamma);
                cfg = cfg.with_detection_rate(rate)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn analysis(&self) -> Result<AnalysisOptions> {
        let ps = 1e-12;
        let window = self.get_or("analysis.window_ps", 1000.0)? * ps;
        let bin = self.get_or("analysis.bin_ps", 1000.0)? * ps;
        let max_lag = self.get_or("analysis.max_lag_ps", 50_000.0)? * ps;
        let opts = AnalysisOptions {
            binning: BinningOptions {
                window,
                lag: self.get_or("analysis.lag_ps", 0.0)? * ps,
                n_segments: self
                    .get_or("analysis.segments", crate::estimators::DEFAULT_SEGMENTS)?,
            },
            histogram: (max_lag > 0.0).then_some((bin, max_lag)),
        };
        if !(window > 0.0) || opts.binning.n_segments == 0 {
            return Err(Error::config(
                "analysis.window_ps and analysis.segments must be > 0",
            ));
        }
        if max_lag > 0.0 && !(bin > 0.0 && max_lag >= bin) {
            return Err(Error::config(
                "analysis.max_lag_ps must be >= analysis.bin_ps > 0",
            ));
        }
        Ok(opts)
    }

    pub fn sweep(&self) -> Result<SweepSpec> {
        let emitter = self.emitter()?;
        let d = SweepSpec::default();
        let analysis = self.analysis()?;
        let spec = SweepSpec {
            n_list: self.get_list("sweep.n_list")?.unwrap_or(d.n_list),
            realizations: self.get_or("sweep.realizations", d.realizations)?,
            spacing: self.get_or("sweep.spacing_m", d.spacing)?,
            aspect: self.get_or("sweep.aspect", d.aspect)?,
            string_max: self.get_or("sweep.string_max", d.string_max)?,
            prune_below: self.get_or("sweep.prune_below", d.prune_below)?,
            volume: self.volume()?,
            scheme: self.scheme()?,
            eta: self.eta()?,
            emitter,
            motion: self.motion()?,
            detector: self.detector()?,
            detection_rate: self.get_or(
                "sim.detection_rate_hz",
                DEFAULT_RATE_FRACTION * emitter.gamma,
            )?,
            duration: self.get_or(
                "sweep.duration_s",
                self.get_or("sim.duration_s", d.duration)?,
            )?,
            window: analysis.binning.window,
            seed: self.seed()?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Config(m),
        other => other,
    }
}
